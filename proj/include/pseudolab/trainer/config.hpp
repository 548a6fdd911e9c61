#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pseudolab/datagen/augment.hpp"
#include "pseudolab/datagen/dataset.hpp"
#include "pseudolab/error.hpp"
#include "pseudolab/gating/gate.hpp"
#include "pseudolab/numerics/optim.hpp"

namespace pseudolab {

struct TrainConfig {
  std::size_t labeled_batch = 64;
  std::size_t unlabeled_ratio = 7;
  double lambda_u = 1.0;
  std::size_t total_iters = 2000;
  std::size_t eval_every = 100;
  GateStrategy strategy;
  AugmentSpec augment;
  double lr0 = 0.03;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double ema_momentum = 0.999;
  std::optional<Schedule> schedule;  // unset: constant for long-tailed data, cosine otherwise
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t group_head = 3;
  std::size_t group_tail = 3;
  std::string dataset;
  std::string test_dataset;
  std::string output = "run_";
  bool dump_decisions = false;

  std::size_t unlabeled_batch() const noexcept { return labeled_batch * unlabeled_ratio; }

  void validate() const {
    detail::require(labeled_batch > 0, "labeled_batch must be positive");
    detail::require(unlabeled_ratio > 0, "unlabeled_ratio must be positive");
    detail::require(lambda_u >= 0.0, "lambda_u must be nonnegative");
    detail::require(total_iters > 0, "total_iters must be positive");
    detail::require(eval_every > 0, "eval_every must be positive");
    detail::require(ema_momentum >= 0.0 && ema_momentum <= 1.0, "ema_momentum must lie in [0, 1]");
    detail::require(lr0 > 0.0, "lr0 must be positive");
    detail::require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
    detail::require(weight_decay >= 0.0, "weight_decay must be nonnegative");
    strategy.validate();
    augment.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
  if (v == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::logic_error&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ContractError("config key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] != '-') out = std::stoull(v, &pos);
  } catch (const std::logic_error&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size())
    throw ContractError("config key '" + key + "': expected a nonnegative integer, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ContractError("config key '" + key + "': expected true/false, got '" + v + "'");
}

}  // namespace detail

/// Sets one key; unknown keys are an error.
inline void apply_setting(TrainConfig& c, const std::string& key, const std::string& value) {
  const std::string& k = key;
  const std::string& v = value;
  if (k == "strategy") c.strategy.kind = parse_gate_kind(v);
  else if (k == "tau_c") c.strategy.tau_c = detail::to_double(k, v);
  else if (k == "tau_e") c.strategy.tau_e = detail::to_double(k, v);
  else if (k == "temperature") c.strategy.temperature = detail::to_double(k, v);
  else if (k == "lambda_u") c.lambda_u = detail::to_double(k, v);
  else if (k == "lr0") c.lr0 = detail::to_double(k, v);
  else if (k == "momentum") c.momentum = detail::to_double(k, v);
  else if (k == "weight_decay") c.weight_decay = detail::to_double(k, v);
  else if (k == "labeled_batch") c.labeled_batch = detail::to_uint(k, v);
  else if (k == "unlabeled_ratio") c.unlabeled_ratio = detail::to_uint(k, v);
  else if (k == "total_iters") c.total_iters = detail::to_uint(k, v);
  else if (k == "eval_every") c.eval_every = detail::to_uint(k, v);
  else if (k == "ema_momentum") c.ema_momentum = detail::to_double(k, v);
  else if (k == "schedule") c.schedule = v == "auto" ? std::nullopt : std::optional(parse_schedule(v));
  else if (k == "seed") c.seed = detail::to_uint(k, v);
  else if (k == "dataset") c.dataset = v;
  else if (k == "test_dataset") c.test_dataset = v;
  else if (k == "weak_sigma") c.augment.weak_sigma = detail::to_double(k, v);
  else if (k == "strong_sigma") c.augment.strong_sigma = detail::to_double(k, v);
  else if (k == "strong_dropout") c.augment.strong_dropout = detail::to_double(k, v);
  else if (k == "hidden") {
    c.hidden.clear();
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      const auto n = detail::to_uint(k, detail::trim(tok));
      detail::require(n > 0, "hidden layer widths must be positive");
      c.hidden.push_back(n);
    }
  } else if (k == "group_head") c.group_head = detail::to_uint(k, v);
  else if (k == "group_tail") c.group_tail = detail::to_uint(k, v);
  else if (k == "output") c.output = v;
  else if (k == "dump_decisions") c.dump_decisions = detail::to_bool(k, v);
  else throw ContractError("unknown config key '" + k + "'");
}

/// Parses "key=value" (whitespace around '=' allowed). Returns {key, value}.
inline std::pair<std::string, std::string> split_setting(const std::string& line) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ContractError("expected key=value, got '" + line + "'");
  auto key = detail::trim(line.substr(0, eq));
  auto value = detail::trim(line.substr(eq + 1));
  if (key.empty()) throw ContractError("empty key in '" + line + "'");
  return {key, value};
}

/// Flat key=value text; '#' starts a comment. Later keys win.
inline TrainConfig parse_config(std::istream& is, TrainConfig base = {}) {
  std::string line;
  while (std::getline(is, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto [k, v] = split_setting(line);
    apply_setting(base, k, v);
  }
  return base;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file " + path);
  return parse_config(is);
}

inline nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["strategy"] = to_string(c.strategy.kind);
  j["tau_c"] = c.strategy.tau_c;
  if (std::isfinite(c.strategy.tau_e)) j["tau_e"] = c.strategy.tau_e;
  else j["tau_e"] = c.strategy.tau_e > 0 ? "inf" : "-inf";
  j["temperature"] = c.strategy.temperature;
  j["lambda_u"] = c.lambda_u;
  j["lr0"] = c.lr0;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["labeled_batch"] = c.labeled_batch;
  j["unlabeled_ratio"] = c.unlabeled_ratio;
  j["total_iters"] = c.total_iters;
  j["eval_every"] = c.eval_every;
  j["ema_momentum"] = c.ema_momentum;
  j["schedule"] = c.schedule ? to_string(*c.schedule) : "auto";
  j["seed"] = c.seed;
  j["hidden"] = c.hidden;
  j["weak_sigma"] = c.augment.weak_sigma;
  j["strong_sigma"] = c.augment.strong_sigma;
  j["strong_dropout"] = c.augment.strong_dropout;
  j["group_head"] = c.group_head;
  j["group_tail"] = c.group_tail;
  j["dataset"] = c.dataset;
  j["test_dataset"] = c.test_dataset;
  return j;
}

}  // namespace pseudolab
