#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "pseudolab/analytics/metrics.hpp"
#include "pseudolab/datagen/dataset.hpp"
#include "pseudolab/error.hpp"
#include "pseudolab/trainer/config.hpp"
#include "pseudolab/trainer/trainer.hpp"

namespace pseudolab {

inline const std::vector<std::string>& sweepable_params() {
  static const std::vector<std::string> keys{"tau_e", "tau_c", "temperature", "lambda_u", "lr0", "weight_decay"};
  return keys;
}

inline bool is_sweepable(const std::string& key) {
  const auto& k = sweepable_params();
  return std::find(k.begin(), k.end(), key) != k.end();
}

/// Threshold/temperature values used for the published benchmark runs.
inline bool is_reference_default(const std::string& param, double value) {
  if (param == "tau_e") return value == -8.0 || value == -9.5 || value == -11.0 || value == -12.5;
  if (param == "temperature") return value == 1.0;
  if (param == "tau_c") return value == 0.95;
  return false;
}

struct SweepRow {
  double value = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> final_acc_ema;  // empty when the run failed
  std::optional<double> final_acc_raw;
  long ood_included_total = 0;
  std::optional<double> final_tail_recall;
  std::string error;
  std::vector<RunRecord> records;

  bool failed() const noexcept { return !final_acc_ema.has_value(); }
};

struct SweepSummary {
  double value = 0.0;
  std::size_t runs = 0;
  std::optional<double> mean;
  std::optional<double> stddev;  // sample standard deviation, needs >= 2 runs
};

struct SweepTable {
  std::string param;
  std::vector<SweepRow> rows;  // value-major, then seed

  std::vector<SweepSummary> summary() const {
    std::vector<SweepSummary> out;
    for (const auto& r : rows) {
      auto it = std::find_if(out.begin(), out.end(), [&](const SweepSummary& s) { return s.value == r.value; });
      if (it == out.end()) {
        out.emplace_back().value = r.value;
        it = out.end() - 1;
      }
    }
    for (auto& s : out) {
      std::vector<double> acc;
      for (const auto& r : rows)
        if (r.value == s.value && !r.failed()) acc.push_back(*r.final_acc_ema);
      s.runs = acc.size();
      if (acc.empty()) continue;
      double m = 0.0;
      for (double a : acc) m += a;
      m /= static_cast<double>(acc.size());
      s.mean = m;
      if (acc.size() >= 2) {
        double ss = 0.0;
        for (double a : acc) ss += (a - m) * (a - m);
        s.stddev = std::sqrt(ss / static_cast<double>(acc.size() - 1));
      }
    }
    return out;
  }
};

/**
 * Trains one run per (value, seed) with `param` substituted, fanned out over
 * `jobs` worker threads. Each run owns its state; rows land in fixed slots,
 * so the table does not depend on scheduling. A failing run is recorded and
 * the sweep continues.
 */
inline SweepTable threshold_sweep(const TrainConfig& base, const Dataset& train, const Dataset& test,
                                  const std::string& param, std::span<const double> values,
                                  std::span<const std::uint64_t> seeds, unsigned jobs = 0) {
  if (values.empty()) throw ContractError("sweep: no values");
  if (seeds.empty()) throw ContractError("sweep: no seeds");
  if (!is_sweepable(param)) throw ContractError("sweep: parameter '" + param + "' is not sweepable");
  SweepTable table;
  table.param = param;
  for (double v : values)
    for (auto s : seeds) {
      SweepRow& row = table.rows.emplace_back();
      row.value = v;
      row.seed = s;
    }

  auto run_one = [&](SweepRow& row) {
    try {
      TrainConfig cfg = base;
      cfg.seed = row.seed;
      apply_setting(cfg, param, detail::format_double(row.value));
      Trainer trainer(train, test, cfg);
      row.records = trainer.run();
      const RunRecord& last = row.records.back();
      row.final_acc_ema = last.acc_ema;
      row.final_acc_raw = last.acc_raw;
      row.final_tail_recall = last.recall[kTail];
      for (const auto& r : row.records) row.ood_included_total += r.ood_included;
    } catch (const std::exception& e) {
      row.final_acc_ema.reset();
      row.error = e.what();
    }
  };

  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min<unsigned>(jobs, static_cast<unsigned>(table.rows.size()));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (unsigned w = 0; w < jobs; ++w)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < table.rows.size(); i = next++) run_one(table.rows[i]);
    });
  for (auto& t : workers) t.join();
  return table;
}

/// Long-format rows followed by a per-value mean/std block.
inline void write_sweep(std::ostream& os, const SweepTable& t) {
  os << "param,value,seed,status,acc_ema,acc_raw,ood_included,reference_default\n";
  for (const auto& r : t.rows) {
    os << t.param << ',' << detail::format_double(r.value) << ',' << r.seed << ',' << (r.failed() ? "failed" : "ok")
       << ',' << (r.final_acc_ema ? detail::format_double(*r.final_acc_ema) : "undef") << ','
       << (r.final_acc_raw ? detail::format_double(*r.final_acc_raw) : "undef") << ',' << r.ood_included_total << ','
       << (is_reference_default(t.param, r.value) ? 1 : 0) << '\n';
  }
  os << '\n' << "param,value,runs,mean_acc_ema,std_acc_ema,reference_default\n";
  for (const auto& s : t.summary()) {
    os << t.param << ',' << detail::format_double(s.value) << ',' << s.runs << ','
       << (s.mean ? detail::format_double(*s.mean) : "undef") << ','
       << (s.stddev ? detail::format_double(*s.stddev) : "undef") << ','
       << (is_reference_default(t.param, s.value) ? 1 : 0) << '\n';
  }
}

}  // namespace pseudolab
