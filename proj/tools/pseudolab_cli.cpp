#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pseudolab/pseudolab.hpp"

using namespace pseudolab;

namespace {

struct GenDataArgs {
  std::size_t classes = 10;
  std::size_t dim = 8;
  double gamma = 100.0;
  int n1 = 500;
  double labeled_frac = 0.1;
  int ood = 0;
  std::uint64_t seed = 0;
  double radius = 5.0;
  double scale = 1.0;
  double ood_scale = 0.0;
  std::string ood_placement = "far";
  int test_per_class = 0;
  std::string out;
  std::string test_out;
};

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
};

struct SweepArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string param;
  std::string values;
  std::size_t seeds = 1;
  unsigned jobs = 0;
  std::string out;
};

struct AnalyzeArgs {
  std::string decisions;
  std::string dataset;
  std::string groups = "3,3";
  std::string out;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = detail::trim(tok);
    if (tok.empty()) continue;
    try {
      out.push_back(detail::to_double(what, tok));
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
  }
  if (out.empty()) throw UsageError(std::string(what) + ": empty list");
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw Error("write to '" + path + "' failed");
}

TrainConfig load_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
  TrainConfig cfg = load_config(path);
  for (const auto& o : overrides) {
    const auto [k, v] = split_setting(o);
    apply_setting(cfg, k, v);
  }
  cfg.validate();
  if (cfg.dataset.empty()) throw ContractError("config does not name a dataset");
  return cfg;
}

// Without a separate test file the model is scored on the in-distribution
// training samples.
Dataset load_test(const TrainConfig& cfg, const Dataset& train) {
  return cfg.test_dataset.empty() ? train : load_dataset(cfg.test_dataset);
}

int gen_data(const GenDataArgs& a) {
  if (a.classes < 2) throw UsageError("--classes must be at least 2");
  if (a.dim < 1) throw UsageError("--dim must be at least 1");
  if (a.n1 < 1) throw UsageError("--n1 must be at least 1");
  if (!(a.gamma >= 1.0)) throw UsageError("--gamma must be >= 1");
  if (!(a.labeled_frac > 0.0 && a.labeled_frac <= 1.0)) throw UsageError("--labeled-frac must be in (0, 1]");
  if (a.ood < 0) throw UsageError("--ood must be nonnegative");
  if (a.ood > 0 && a.labeled_frac == 1.0) throw UsageError("--ood requires an unlabeled pool (--labeled-frac < 1)");
  if (!(a.radius >= 0.0) || !(a.scale > 0.0)) throw UsageError("--radius must be >= 0 and --scale > 0");
  if (a.test_per_class > 0 && a.test_out.empty()) throw UsageError("--test-per-class requires --test-out");

  MixtureSpec mix{sphere_means(a.classes, a.dim, a.radius, a.seed), std::vector<double>(a.classes, a.scale)};
  const auto counts = longtail_counts({a.gamma, a.n1, a.classes, a.labeled_frac});
  Dataset ds = split_labeled(make_mixture(mix, counts, a.seed), a.labeled_frac, a.seed);
  if (a.ood > 0) {
    OodSpec src = a.ood_placement == "centroid" ? centroid_ood(mix) : default_ood(mix);
    if (a.ood_scale > 0.0) src.scale = a.ood_scale;
    ds = inject_ood(std::move(ds), a.ood, src, a.seed);
  }
  save_dataset(a.out, ds);

  std::printf("class,labeled,unlabeled\n");
  for (std::size_t c = 0; c < a.classes; ++c) {
    std::size_t l = 0, u = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.labels[i] != static_cast<int>(c)) continue;
      (ds.origin[i] == Origin::labeled ? l : u) += 1;
    }
    std::printf("%zu,%zu,%zu\n", c, l, u);
  }
  if (a.ood > 0) std::printf("ood,0,%zu\n", ds.count(Origin::ood));

  if (a.test_per_class > 0) {
    const std::vector<int> n(a.classes, a.test_per_class);
    save_dataset(a.test_out, make_mixture(mix, n, derive_seed(a.seed, "test")));
  }
  return 0;
}

int train(const TrainArgs& a) {
  const TrainConfig cfg = load_with_overrides(a.config, a.overrides);
  const Dataset train_ds = load_dataset(cfg.dataset);
  const Dataset test_ds = load_test(cfg, train_ds);

  std::ofstream dump;
  if (cfg.dump_decisions) {
    const std::string path = cfg.output + "decisions.csv";
    dump.open(path, std::ios::binary);
    if (!dump) throw Error("cannot open '" + path + "' for writing");
    write_decision_header(dump);
  }
  Trainer trainer(train_ds, test_ds, cfg);
  Trainer::DecisionSink sink;
  if (cfg.dump_decisions)
    sink = [&](std::size_t it, std::span<const PseudoLabelDecision> d) { append_decisions(dump, it, d); };
  std::vector<RunRecord> records;
  try {
    records = trainer.run(sink);
  } catch (...) {
    if (cfg.dump_decisions) {
      dump.close();
      std::filesystem::remove(cfg.output + "decisions.csv");
    }
    throw;
  }

  export_records(records, cfg.output, config_to_json(cfg), cfg.seed);
  std::ostringstream params;
  write_params(params, trainer.params());
  write_text(cfg.output + "params.txt", params.str());
  std::ostringstream ema;
  write_params(ema, trainer.ema().shadow);
  write_text(cfg.output + "ema_params.txt", ema.str());

  const RunRecord& last = records.back();
  std::printf("iterations %zu  acc_raw %.4f  acc_ema %.4f  mask_rate %.4f\n", last.iteration, last.acc_raw,
              last.acc_ema, last.mask_rate);
  return 0;
}

int sweep(const SweepArgs& a) {
  if (!is_sweepable(a.param)) {
    std::string known;
    for (const auto& p : sweepable_params()) known += (known.empty() ? "" : ", ") + p;
    throw UsageError("unknown sweep parameter '" + a.param + "' (expected one of: " + known + ")");
  }
  if (a.seeds < 1) throw UsageError("--seeds must be at least 1");
  const auto values = parse_list(a.values, "--values");
  const TrainConfig cfg = load_with_overrides(a.config, a.overrides);
  const Dataset train_ds = load_dataset(cfg.dataset);
  const Dataset test_ds = load_test(cfg, train_ds);

  std::vector<std::uint64_t> seeds(a.seeds);
  for (std::size_t i = 0; i < a.seeds; ++i) seeds[i] = cfg.seed + i;
  const SweepTable table = threshold_sweep(cfg, train_ds, test_ds, a.param, values, seeds, a.jobs);

  std::ostringstream os;
  write_sweep(os, table);
  std::fputs(os.str().c_str(), stdout);
  if (!a.out.empty()) write_text(a.out, os.str());
  for (const auto& r : table.rows)
    if (r.failed()) std::fprintf(stderr, "run value=%g seed=%llu failed: %s\n", r.value,
                                 static_cast<unsigned long long>(r.seed), r.error.c_str());
  return 0;
}

int analyze(const AnalyzeArgs& a) {
  const auto g = parse_list(a.groups, "--groups");
  if (g.size() != 2 || g[0] < 0 || g[1] < 0 || g[0] != std::floor(g[0]) || g[1] != std::floor(g[1]))
    throw UsageError("--groups expects two nonnegative integers 'head,tail'");
  const Dataset ds = load_dataset(a.dataset);
  std::ifstream in(a.decisions, std::ios::binary);
  if (!in) throw DataError("cannot open decisions file '" + a.decisions + "'");
  const auto records = read_decisions(in);

  std::vector<PseudoLabelDecision> decisions;
  decisions.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& d = records[i].decision;
    if (d.sample_index >= ds.size() || ds.origin[d.sample_index] == Origin::labeled ||
        ds.labels[d.sample_index] != d.true_class)
      throw DataError("data-integrity error: decision row " + std::to_string(i + 1) + " (sample " +
                      std::to_string(d.sample_index) + ") does not match an unlabeled sample of the dataset");
    if (d.predicted_class >= ds.num_classes())
      throw DataError("data-integrity error: decision row " + std::to_string(i + 1) + " predicts class " +
                      std::to_string(d.predicted_class) + " outside the dataset's " +
                      std::to_string(ds.num_classes()) + " classes");
    decisions.push_back(d);
  }

  const std::size_t head = static_cast<std::size_t>(g[0]), tail = static_cast<std::size_t>(g[1]);
  const ClassGroups groups = make_groups(ds.class_counts, head, tail);
  const PrTable pr = pseudo_pr(decisions, groups);
  const bool overall_only = head == 0 && tail == 0;

  std::ostringstream os;
  auto fmt = [](const Ratio& r) {
    const auto v = r.value();
    return v ? detail::format_double(*v) : std::string(kUndefToken);
  };
  os << "group,precision,recall,gated,gated_correct,true_count\n";
  const std::pair<Group, const char*> rows[] = {{kOverall, "overall"}, {kHead, "head"}, {kBody, "body"}, {kTail, "tail"}};
  for (const auto& [grp, name] : rows) {
    if (overall_only && grp != kOverall) continue;
    const GroupPR& p = pr[grp];
    os << name << ',' << fmt(p.precision) << ',' << fmt(p.recall) << ',' << p.precision.denominator << ','
       << p.precision.numerator << ',' << p.recall.denominator << '\n';
  }
  os << "\niteration,ood_included,cumulative_ood_included\n";
  long cumulative = 0;
  for (std::size_t i = 0; i < records.size();) {
    const std::size_t it = records[i].iteration;
    long n = 0;
    for (; i < records.size() && records[i].iteration == it; ++i)
      n += records[i].decision.gated && records[i].decision.true_class == kUnknownLabel;
    cumulative += n;
    os << it << ',' << n << ',' << cumulative << '\n';
  }
  std::fputs(os.str().c_str(), stdout);
  if (!a.out.empty()) write_text(a.out, os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pseudolab: pseudo-label gating experiments on synthetic long-tailed data"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "synthesize a long-tailed Gaussian mixture dataset");
  gen->add_option("--classes", gd.classes, "number of classes K")->capture_default_str();
  gen->add_option("--dim", gd.dim, "feature dimension D")->capture_default_str();
  gen->add_option("--gamma", gd.gamma, "imbalance ratio between largest and smallest class")->capture_default_str();
  gen->add_option("--n1", gd.n1, "size of the largest class")->capture_default_str();
  gen->add_option("--labeled-frac", gd.labeled_frac, "labeled fraction per class")->capture_default_str();
  gen->add_option("--ood", gd.ood, "number of out-of-distribution samples added to the unlabeled pool")
      ->capture_default_str();
  gen->add_option("--seed", gd.seed, "random seed")->capture_default_str();
  gen->add_option("--radius", gd.radius, "distance of class means from the origin")->capture_default_str();
  gen->add_option("--scale", gd.scale, "per-class standard deviation")->capture_default_str();
  gen->add_option("--ood-placement", gd.ood_placement,
                  "far: at least 10 class scales from every mean; centroid: at the mixture centroid")
      ->check(CLI::IsMember({"far", "centroid"}))
      ->capture_default_str();
  gen->add_option("--ood-scale", gd.ood_scale, "standard deviation of the OOD source (0: same as --scale)");
  gen->add_option("--test-per-class", gd.test_per_class, "balanced test samples per class");
  gen->add_option("--test-out", gd.test_out, "test dataset path");
  gen->add_option("--out", gd.out, "output dataset path")->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "run one training job from a config file");
  tr->add_option("--config", ta.config, "config file")->required()->check(CLI::ExistingFile);
  tr->add_option("--override", ta.overrides, "key=value settings applied after the config (last wins)");

  SweepArgs sa;
  auto* sw = app.add_subcommand("sweep", "train over a grid of parameter values and seeds");
  sw->add_option("--config", sa.config, "base config file")->required()->check(CLI::ExistingFile);
  sw->add_option("--override", sa.overrides, "key=value settings applied after the config");
  sw->add_option("--param", sa.param, "parameter to sweep")->required();
  sw->add_option("--values", sa.values, "comma-separated values")->required();
  sw->add_option("--seeds", sa.seeds, "number of seeds, counting up from the config seed")->capture_default_str();
  sw->add_option("--jobs", sa.jobs, "worker threads (0: hardware concurrency)")->capture_default_str();
  sw->add_option("--out", sa.out, "also write the table to this path");

  AnalyzeArgs aa;
  auto* an = app.add_subcommand("analyze", "recompute pseudo-label precision/recall from a decision dump");
  an->add_option("--decisions", aa.decisions, "decision dump CSV")->required();
  an->add_option("--dataset", aa.dataset, "dataset the dump was produced from")->required();
  an->add_option("--groups", aa.groups, "head,tail group sizes")->capture_default_str();
  an->add_option("--out", aa.out, "also write the table to this path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_data(gd);
    if (*tr) return train(ta);
    if (*sw) return sweep(sa);
    if (*an) return analyze(aa);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const NonFiniteError& e) {
    std::fprintf(stderr, "training diverged: %s\n%s", e.what(), e.state_dump().c_str());
    return 3;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
