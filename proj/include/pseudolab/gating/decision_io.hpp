#pragma once

#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pseudolab/datagen/dataset.hpp"
#include "pseudolab/error.hpp"
#include "pseudolab/gating/gate.hpp"

namespace pseudolab {

inline constexpr const char* kDecisionHeader = "iteration,sample_index,score,gated,predicted_class,true_class";

struct DecisionRecord {
  std::size_t iteration = 0;
  PseudoLabelDecision decision;

  friend bool operator==(const DecisionRecord&, const DecisionRecord&) = default;
};

inline void write_decision_header(std::ostream& os) { os << kDecisionHeader << '\n'; }

/// Appends one line per decision; the stream is append-only across iterations.
inline void append_decisions(std::ostream& os, std::size_t iteration, std::span<const PseudoLabelDecision> decisions) {
  std::string line;
  for (const auto& d : decisions) {
    line = std::to_string(iteration);
    line += ',';
    line += std::to_string(d.sample_index);
    line += ',';
    line += detail::format_double(d.score);
    line += d.gated ? ",1," : ",0,";
    line += std::to_string(d.predicted_class);
    line += ',';
    line += std::to_string(d.true_class);
    line += '\n';
    os << line;
  }
}

inline std::vector<DecisionRecord> read_decisions(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) return {};
  if (line != kDecisionHeader) throw DataError("decision dump: unexpected header '" + line + "'");
  std::vector<DecisionRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw DataError("decision dump line " + std::to_string(lineno) + ": expected 6 fields");
    try {
      DecisionRecord r;
      r.iteration = std::stoull(cells[0]);
      r.decision.sample_index = std::stoull(cells[1]);
      r.decision.score = detail::parse_double(cells[2], "decision dump");
      if (cells[3] != "0" && cells[3] != "1") throw DataError("gated must be 0 or 1");
      r.decision.gated = cells[3] == "1";
      r.decision.predicted_class = std::stoull(cells[4]);
      r.decision.true_class = std::stoi(cells[5]);
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw DataError("decision dump line " + std::to_string(lineno) + ": malformed field");
    }
  }
  return out;
}

}  // namespace pseudolab
