#pragma once

#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pseudolab/analytics/metrics.hpp"
#include "pseudolab/datagen/dataset.hpp"
#include "pseudolab/error.hpp"

namespace pseudolab {

inline constexpr const char* kRecordHeader =
    "iteration,loss_s,loss_u,loss_total,mask_rate,"
    "precision_overall,recall_overall,precision_head,recall_head,"
    "precision_body,recall_body,precision_tail,recall_tail,"
    "ood_included,acc_raw,acc_ema";

inline constexpr const char* kUndefToken = "undef";

namespace detail {

inline std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : kUndefToken; }

inline std::optional<double> parse_optional(const std::string& s) {
  if (s == kUndefToken) return std::nullopt;
  return parse_double(s, "metrics");
}

}  // namespace detail

inline void write_records(std::ostream& os, std::span<const RunRecord> records) {
  os << kRecordHeader << '\n';
  for (const auto& r : records) {
    os << r.iteration << ',' << detail::format_double(r.loss_s) << ',' << detail::format_double(r.loss_u) << ','
       << detail::format_double(r.loss_total) << ',' << detail::format_double(r.mask_rate);
    for (std::size_t g = 0; g < 4; ++g)
      os << ',' << detail::format_optional(r.precision[g]) << ',' << detail::format_optional(r.recall[g]);
    os << ',' << r.ood_included << ',' << detail::format_double(r.acc_raw) << ',' << detail::format_double(r.acc_ema)
       << '\n';
  }
}

inline std::vector<RunRecord> read_records(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kRecordHeader) throw DataError("metrics file: unexpected header");
  std::vector<RunRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    if (c.size() != 16) throw DataError("metrics file: expected 16 columns, got " + std::to_string(c.size()));
    RunRecord r;
    try {
      r.iteration = std::stoull(c[0]);
      r.ood_included = std::stol(c[13]);
    } catch (const std::logic_error&) {
      throw DataError("metrics file: malformed integer field");
    }
    r.loss_s = detail::parse_double(c[1], "metrics");
    r.loss_u = detail::parse_double(c[2], "metrics");
    r.loss_total = detail::parse_double(c[3], "metrics");
    r.mask_rate = detail::parse_double(c[4], "metrics");
    for (std::size_t g = 0; g < 4; ++g) {
      r.precision[g] = detail::parse_optional(c[5 + 2 * g]);
      r.recall[g] = detail::parse_optional(c[6 + 2 * g]);
    }
    r.acc_raw = detail::parse_double(c[14], "metrics");
    r.acc_ema = detail::parse_double(c[15], "metrics");
    out.push_back(r);
  }
  return out;
}

inline nlohmann::ordered_json record_to_json(const RunRecord& r) {
  static constexpr const char* names[4] = {"overall", "head", "body", "tail"};
  nlohmann::ordered_json j;
  j["iteration"] = r.iteration;
  j["loss_s"] = r.loss_s;
  j["loss_u"] = r.loss_u;
  j["loss_total"] = r.loss_total;
  j["mask_rate"] = r.mask_rate;
  for (std::size_t g = 0; g < 4; ++g) {
    j[std::string("precision_") + names[g]] = r.precision[g] ? nlohmann::ordered_json(*r.precision[g]) : kUndefToken;
    j[std::string("recall_") + names[g]] = r.recall[g] ? nlohmann::ordered_json(*r.recall[g]) : kUndefToken;
  }
  j["ood_included"] = r.ood_included;
  j["acc_raw"] = r.acc_raw;
  j["acc_ema"] = r.acc_ema;
  return j;
}

/**
 * Writes `<prefix>metrics.csv` and `<prefix>summary.json`. The summary holds
 * the final record, cumulative OOD inclusion, the seed and a config echo.
 */
inline void export_records(std::span<const RunRecord> records, const std::string& prefix,
                           const nlohmann::ordered_json& config_echo, std::uint64_t seed) {
  if (records.empty()) throw ContractError("export: no records");
  const std::string csv_path = prefix + "metrics.csv";
  const std::string json_path = prefix + "summary.json";
  {
    std::ofstream os(csv_path);
    if (!os) throw DataError("cannot write " + csv_path);
    write_records(os, records);
    if (!os) throw DataError("error writing " + csv_path);
  }
  long ood_total = 0;
  for (const auto& r : records) ood_total += r.ood_included;
  nlohmann::ordered_json summary;
  summary["seed"] = seed;
  summary["final"] = record_to_json(records.back());
  summary["ood_included_total"] = ood_total;
  summary["records"] = records.size();
  summary["config"] = config_echo;
  std::ofstream os(json_path);
  if (!os) throw DataError("cannot write " + json_path);
  os << summary.dump(2) << '\n';
  if (!os) throw DataError("error writing " + json_path);
}

inline std::vector<RunRecord> import_records(const std::string& csv_path) {
  std::ifstream is(csv_path);
  if (!is) throw DataError("cannot open " + csv_path);
  return read_records(is);
}

}  // namespace pseudolab
