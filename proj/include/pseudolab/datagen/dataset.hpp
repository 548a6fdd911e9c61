#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pseudolab/error.hpp"
#include "pseudolab/numerics/tensor.hpp"

namespace pseudolab {

/// Label of out-of-distribution samples.
inline constexpr int kUnknownLabel = -1;

enum class Origin : char { labeled = 'L', unlabeled = 'U', ood = 'O' };

/**
 * Feature matrix plus labels and partition tags.
 *
 * Unlabeled samples keep their ground-truth label; only analytics may read it.
 * OOD samples carry kUnknownLabel and are excluded from class_counts.
 */
struct Dataset {
  Tensor features;  // [N, D]
  std::vector<int> labels;
  std::vector<Origin> origin;
  std::vector<int> class_counts;  // length K

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  std::size_t num_classes() const noexcept { return class_counts.size(); }

  std::vector<std::size_t> indices_with(Origin o) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < origin.size(); ++i)
      if (origin[i] == o) out.push_back(i);
    return out;
  }

  std::size_t count(Origin o) const {
    std::size_t n = 0;
    for (auto t : origin) n += (t == o);
    return n;
  }

  /// Per-class counts restricted to one origin tag.
  std::vector<int> class_counts_for(Origin o) const {
    std::vector<int> out(num_classes(), 0);
    for (std::size_t i = 0; i < size(); ++i)
      if (origin[i] == o && labels[i] >= 0) ++out[static_cast<std::size_t>(labels[i])];
    return out;
  }

  void validate() const {
    const std::size_t n = labels.size();
    if (features.rank() != 2 || features.rows() != n || origin.size() != n)
      throw DataError("dataset: features/labels/origin lengths disagree");
    std::vector<int> counts(class_counts.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (origin[i] == Origin::ood) {
        if (labels[i] != kUnknownLabel) throw DataError("dataset: ood sample " + std::to_string(i) + " has a class label");
        continue;
      }
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= counts.size())
        throw DataError("dataset: label out of range at sample " + std::to_string(i));
      ++counts[static_cast<std::size_t>(labels[i])];
    }
    if (counts != class_counts) throw DataError("dataset: class_counts inconsistent with labels");
  }
};

/// Recomputes class_counts from labels (ood excluded).
inline void recount(Dataset& ds, std::size_t num_classes) {
  ds.class_counts.assign(num_classes, 0);
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.origin[i] != Origin::ood) ++ds.class_counts[static_cast<std::size_t>(ds.labels[i])];
}

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(std::string_view tok, const char* what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw DataError(std::string(what) + ": bad number '" + std::string(tok) + "'");
  return v;
}

}  // namespace detail

/// Header "N D K", then per sample: D floats, label (-1 for ood), tag L/U/O.
inline void write_dataset(std::ostream& os, const Dataset& ds) {
  ds.validate();
  const std::size_t n = ds.size(), d = ds.dim();
  os << n << ' ' << d << ' ' << ds.num_classes() << '\n';
  std::string line;
  for (std::size_t i = 0; i < n; ++i) {
    line.clear();
    for (std::size_t j = 0; j < d; ++j) {
      line += detail::format_double(ds.features(i, j));
      line += ' ';
    }
    line += std::to_string(ds.labels[i]);
    line += ' ';
    line += static_cast<char>(ds.origin[i]);
    line += '\n';
    os << line;
  }
}

inline Dataset read_dataset(std::istream& is) {
  std::size_t n = 0, d = 0, k = 0;
  std::string header;
  if (!std::getline(is, header)) throw DataError("dataset: missing header");
  {
    std::istringstream hs(header);
    if (!(hs >> n >> d >> k) || n == 0 || d == 0 || k == 0) throw DataError("dataset: bad header '" + header + "'");
  }
  Dataset ds;
  ds.features = Tensor({n, d});
  ds.labels.resize(n);
  ds.origin.resize(n);
  std::string line, tok;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(is, line)) throw DataError("dataset: expected " + std::to_string(n) + " rows, got " + std::to_string(i));
    std::istringstream ls(line);
    for (std::size_t j = 0; j < d; ++j) {
      if (!(ls >> tok)) throw DataError("dataset: row " + std::to_string(i) + " too short");
      ds.features(i, j) = detail::parse_double(tok, "dataset");
    }
    int label = 0;
    char tag = 0;
    if (!(ls >> label >> tag) || (ls >> tok)) throw DataError("dataset: row " + std::to_string(i) + " malformed");
    if (tag != 'L' && tag != 'U' && tag != 'O') throw DataError(std::string("dataset: bad origin tag '") + tag + "'");
    ds.labels[i] = label;
    ds.origin[i] = static_cast<Origin>(tag);
    if (ds.origin[i] != Origin::ood && (label < 0 || static_cast<std::size_t>(label) >= k))
      throw DataError("dataset: label out of range at row " + std::to_string(i));
  }
  recount(ds, k);
  ds.validate();
  return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write dataset file " + path);
  write_dataset(os, ds);
  if (!os) throw DataError("error writing dataset file " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open dataset file " + path);
  return read_dataset(is);
}

}  // namespace pseudolab
