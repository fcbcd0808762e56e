#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/erf.hpp>
#include <nlohmann/json.hpp>

#include "morer/active_learning.hpp"
#include "morer/classifier.hpp"
#include "morer/dist_analysis.hpp"
#include "morer/er_core.hpp"
#include "morer/error.hpp"
#include "morer/random.hpp"
#include "morer/repository.hpp"

namespace morer {

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  Metrics m{tp, fp, fn, 0.0, 0.0, 0.0};
  if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

/// Counts over the match class. Undefined precision or recall is 0.
inline Metrics compute_metrics(std::span<const Prediction> predictions, const GroundTruth& truth) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& p : predictions) {
    const bool actual = truth.label(p.left, p.right);
    if (p.match && actual) ++tp;
    else if (p.match) ++fp;
    else if (actual) ++fn;
  }
  return metrics_from_counts(tp, fp, fn);
}

inline nlohmann::json to_json(const Metrics& m) {
  return {{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

/// Mean of per-problem precision, recall and F1.
inline Metrics macro_average(std::span<const Metrics> per_problem) {
  Metrics m;
  if (per_problem.empty()) return m;
  for (const auto& x : per_problem) {
    m.tp += x.tp;
    m.fp += x.fp;
    m.fn += x.fn;
    m.precision += x.precision;
    m.recall += x.recall;
    m.f1 += x.f1;
  }
  const auto n = static_cast<double>(per_problem.size());
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  return m;
}

inline Metrics micro_average(std::span<const Metrics> per_problem) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& x : per_problem) {
    tp += x.tp;
    fp += x.fp;
    fn += x.fn;
  }
  return metrics_from_counts(tp, fp, fn);
}

/// Hubert-Arabie adjusted Rand index. Returns 1 when both partitions are
/// identical up to relabeling, including the degenerate all-in-one case.
template <typename A, typename B>
double adjusted_rand_index(const std::vector<A>& a, const std::vector<B>& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::InvalidArgument, "label vectors differ in length");
  const auto n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<A, B>, double> cells;
  std::map<A, double> rows;
  std::map<B, double> cols;
  for (std::size_t i = 0; i < n; ++i) {
    cells[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  const auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& [k, v] : cells) index += c2(v);
  for (const auto& [k, v] : rows) sum_rows += c2(v);
  for (const auto& [k, v] : cols) sum_cols += c2(v);
  const double expected = sum_rows * sum_cols / c2(static_cast<double>(n));
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// Synthetic multi-source corpora

struct TruncNormal {
  double mean = 0.5;
  double sd = 0.1;
};

struct FeatureRegime {
  TruncNormal match;
  TruncNormal non_match;
};

struct Regime {
  std::string name;
  std::vector<FeatureRegime> features;
};

struct SynthSpec {
  std::vector<Regime> regimes;
  std::vector<std::string> feature_names;
  std::size_t sources_per_regime = 4;
  std::size_t vectors_per_problem = 500;
  std::size_t records_per_source = 0;  // 0 picks enough records for distinct pairs
  double match_ratio = 0.3;
  double separation = 0.3;  // required cross-regime problem distance
  std::uint64_t seed = 42;
};

/// Preset regimes on four features. Regime 0 has high similarities, regime
/// 1 low ones (its matches overlap regime 0's non-matches), regime 2 sits
/// near the top of the scale, regime 3 in the middle.
inline Regime preset_regime(std::size_t index, std::size_t arity = 4) {
  struct Preset {
    double mm, ms, nm, ns;
  };
  static constexpr Preset presets[] = {
      {0.85, 0.07, 0.45, 0.08},
      {0.50, 0.07, 0.12, 0.06},
      {0.97, 0.02, 0.75, 0.05},
      {0.70, 0.05, 0.28, 0.05},
  };
  if (index >= std::size(presets)) {
    throw Error(ErrorKind::InvalidSpec, "only " + std::to_string(std::size(presets)) + " preset regimes exist",
                {{"regimes", index + 1}});
  }
  const auto& p = presets[index];
  Regime r;
  r.name = "regime" + std::to_string(index);
  for (std::size_t f = 0; f < arity; ++f) {
    // Small per-feature offsets keep features from being exact copies.
    const double shift = 0.015 * (static_cast<double>(f) - 1.5);
    r.features.push_back({{std::clamp(p.mm + shift, 0.01, 0.99), p.ms},
                          {std::clamp(p.nm + shift, 0.01, 0.99), p.ns}});
  }
  return r;
}

inline SynthSpec default_synth_spec(std::size_t regimes = 2, std::size_t sources_per_regime = 4,
                                    std::size_t vectors = 500, std::uint64_t seed = 42) {
  SynthSpec s;
  for (std::size_t i = 0; i < regimes; ++i) s.regimes.push_back(preset_regime(i));
  s.feature_names = {"name_sim", "addr_sim", "phone_sim", "desc_sim"};
  s.sources_per_regime = sources_per_regime;
  s.vectors_per_problem = vectors;
  s.seed = seed;
  return s;
}

inline void validate_spec(const SynthSpec& s) {
  const auto bad = [](const std::string& what) { return Error(ErrorKind::InvalidSpec, what); };
  if (s.regimes.empty()) throw bad("spec has no regimes");
  if (s.feature_names.empty()) throw bad("spec has no features");
  if (s.sources_per_regime < 2) throw bad("each regime needs at least 2 sources");
  if (s.vectors_per_problem < 2) throw bad("vectors_per_problem must be at least 2");
  if (!(s.match_ratio > 0.0 && s.match_ratio < 1.0)) throw bad("match_ratio must lie in (0,1)");
  if (!(s.separation >= 0.0 && s.separation <= 1.0)) throw bad("separation must lie in [0,1]");
  for (const auto& r : s.regimes) {
    if (r.features.size() != s.feature_names.size()) throw bad("regime " + r.name + " has the wrong feature count");
    for (const auto& f : r.features) {
      for (const auto& d : {f.match, f.non_match}) {
        if (!(d.mean >= 0.0 && d.mean <= 1.0) || !(d.sd > 0.0)) throw bad("regime " + r.name + " has bad parameters");
      }
    }
  }
  const auto records = s.records_per_source;
  if (records > 0 && records * records < s.vectors_per_problem) {
    throw bad("records_per_source too small for the requested number of distinct pairs");
  }
}

namespace detail {

// Open-interval uniform, so the inverse normal CDF stays finite.
inline double open_uniform(Rng& rng) {
  return (static_cast<double>(rng.next() >> 11) + 0.5) * 0x1.0p-53;
}

inline double normal_quantile(double u) { return std::sqrt(2.0) * boost::math::erf_inv(2.0 * u - 1.0); }

}  // namespace detail

/// Draws N(mean, sd) through the inverse CDF and rejects draws outside [0,1].
inline double sample_truncated_normal(Rng& rng, const TruncNormal& d) {
  for (;;) {
    const double x = d.mean + d.sd * detail::normal_quantile(detail::open_uniform(rng));
    if (x >= 0.0 && x <= 1.0) return x;
  }
}

struct SynthCorpus {
  std::vector<ERProblem> problems;
  GroundTruth truth;
  std::map<ProblemId, std::size_t> regime_of;
};

inline std::string synth_source_name(std::size_t regime, std::size_t source) {
  return "r" + std::to_string(regime) + "s" + std::to_string(source);
}

/// One problem per source pair within each regime. Every problem draws from
/// its own RNG stream derived from the generator seed and the problem id.
inline SynthCorpus generate_synthetic(const SynthSpec& spec) {
  validate_spec(spec);
  const std::size_t n = spec.vectors_per_problem;
  std::size_t records = spec.records_per_source;
  if (records == 0) records = static_cast<std::size_t>(std::ceil(std::sqrt(2.0 * static_cast<double>(n))));
  const std::size_t n_match = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(spec.match_ratio * static_cast<double>(n))), 1, n - 1);

  SynthCorpus corpus;
  for (std::size_t r = 0; r < spec.regimes.size(); ++r) {
    const auto& regime = spec.regimes[r];
    for (std::size_t i = 0; i < spec.sources_per_regime; ++i) {
      for (std::size_t j = i + 1; j < spec.sources_per_regime; ++j) {
        ERProblem p;
        p.sources = SourcePair::normalized(synth_source_name(r, i), synth_source_name(r, j));
        p.feature_names = spec.feature_names;
        Rng rng(derive_seed(spec.seed, p.id()));

        std::vector<std::size_t> cells(records * records);
        for (std::size_t c = 0; c < cells.size(); ++c) cells[c] = c;
        rng.shuffle(std::span<std::size_t>(cells));
        cells.resize(n);
        std::vector<bool> is_match(n, false);
        std::fill(is_match.begin(), is_match.begin() + static_cast<std::ptrdiff_t>(n_match), true);
        rng.shuffle(std::span<std::size_t>(cells));  // decouples labels from cell order

        for (std::size_t v = 0; v < n; ++v) {
          FeatureVector w;
          w.left = {p.sources.first, "e" + std::to_string(cells[v] / records)};
          w.right = {p.sources.second, "e" + std::to_string(cells[v] % records)};
          for (const auto& f : regime.features) {
            w.values.push_back(sample_truncated_normal(rng, is_match[v] ? f.match : f.non_match));
          }
          corpus.truth.set(w.left, w.right, is_match[v]);
          p.vectors.push_back(std::move(w));
        }
        finalize_problem(p);
        corpus.regime_of[p.id()] = r;
        corpus.problems.push_back(std::move(p));
      }
    }
  }
  std::sort(corpus.problems.begin(), corpus.problems.end(), problem_less);
  return corpus;
}

struct SeparationReport {
  double min_cross = 1.0;   // smallest cross-regime distance
  double max_within = 0.0;  // largest within-regime distance
  bool ok = false;
};

/// Problem distance is 1 - sim_p under the KS test.
inline SeparationReport check_separation(const SynthCorpus& corpus, double delta) {
  SeparationReport rep;
  AnalysisConfig cfg;
  cfg.test = DistTest::KS;
  std::vector<ProblemProfile> profiles;
  for (const auto& p : corpus.problems) profiles.push_back(make_profile(p));
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    for (std::size_t j = i + 1; j < profiles.size(); ++j) {
      const double d = 1.0 - problem_similarity(profiles[i], profiles[j], cfg).sim_p;
      const bool same = corpus.regime_of.at(corpus.problems[i].id()) == corpus.regime_of.at(corpus.problems[j].id());
      if (same) rep.max_within = std::max(rep.max_within, d);
      else rep.min_cross = std::min(rep.min_cross, d);
    }
  }
  rep.ok = rep.min_cross >= delta && rep.max_within < delta / 2.0;
  return rep;
}

inline void write_synthetic(const SynthCorpus& corpus, const std::string& name, const fs::path& dir) {
  write_dataset(name, corpus.problems, &corpus.truth, dir);
  nlohmann::json regimes = nlohmann::json::object();
  for (const auto& [id, r] : corpus.regime_of) regimes[id] = r;
  std::ofstream out(dir / "regimes.json", std::ios::binary);
  out << regimes.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
  std::string dataset;  // manifest path; relative paths resolve against the config file
  double ratio_init = 0.5;
  Strategy strategy = Strategy::Base;
  RepositoryConfig repository;
  bool unified_baseline = false;
};

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.dataset = j.value("dataset", "");
    c.ratio_init = j.value("ratio_init", 0.5);
    c.strategy = parse_strategy(j.value("strategy", "base"));
    c.unified_baseline = j.value("unified_baseline", false);
    auto& r = c.repository;
    r.graph.analysis.test = parse_dist_test(j.value("test", "ks"));
    r.graph.analysis.wd_grid = j.value("wd_grid", r.graph.analysis.wd_grid);
    r.graph.analysis.psi_bins = j.value("psi_bins", r.graph.analysis.psi_bins);
    r.graph.analysis.psi_eps = j.value("psi_eps", r.graph.analysis.psi_eps);
    r.graph.min_edge_sim = j.value("min_edge_sim", r.graph.min_edge_sim);
    r.leiden.resolution = j.value("resolution", r.leiden.resolution);
    r.b_tot = j.value("b_tot", r.b_tot);
    r.b_min = j.value("b_min", r.b_min);
    r.al.batch = j.value("batch", r.al.batch);
    r.al.ensemble.k = j.value("k", r.al.ensemble.k);
    r.al.ensemble.tree.max_depth = j.value("max_depth", r.al.ensemble.tree.max_depth);
    r.al.ensemble.tree.min_leaf = j.value("min_leaf", r.al.ensemble.tree.min_leaf);
    r.al.mode = parse_al_mode(j.value("al", "bootstrap"));
    r.al.uniqueness = parse_uniqueness_mode(j.value("uniqueness", "idf"));
    r.t_cov = j.value("t_cov", r.t_cov);
    r.seed = j.value("seed", r.seed);
    r.leiden.seed = j.value("leiden_seed", r.seed);
    r.threads = j.value("threads", 1u);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("bad experiment config: ") + e.what());
  }
  if (!(c.ratio_init > 0.0 && c.ratio_init < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "ratio_init must lie strictly between 0 and 1");
  }
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  auto j = config_json(c.repository);
  j["dataset"] = c.dataset;
  j["ratio_init"] = c.ratio_init;
  j["strategy"] = std::string(to_string(c.strategy));
  j["unified_baseline"] = c.unified_baseline;
  return j;
}

struct ProblemResult {
  SolveReport solve;
  Metrics metrics;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::string dataset_name;
  std::vector<ProblemId> initial;
  std::vector<ProblemId> unsolved;
  std::size_t clusters = 0;
  double modularity = 0.0;
  std::size_t init_labels = 0;
  std::size_t extra_labels = 0;
  std::size_t retrain_budgets = 0;
  std::vector<ProblemResult> results;
  Metrics macro;
  Metrics micro;
  std::optional<Metrics> unified_macro;
  std::optional<Metrics> unified_micro;
  double wall_time_s = 0.0;
  Repository repository;  // final state

  std::size_t labels_spent() const { return init_labels + extra_labels; }
};

/// Trains one model on the union of every cluster's retained training
/// vectors, i.e. the same labels the repository bought.
inline EnsembleModel unified_model(const Repository& repo) {
  std::vector<FeatureVector> pooled;
  for (const auto& [cid, cm] : repo.models) pooled.insert(pooled.end(), cm.pc.begin(), cm.pc.end());
  std::sort(pooled.begin(), pooled.end(), detail::canonical_less);
  auto opts = repo.config.al.ensemble;
  opts.allow_single_class = true;
  opts.threads = repo.config.threads;
  return train_ensemble(pooled, repo.feature_names.size(), derive_seed(repo.config.seed, "unified"), opts);
}

/// Split, initialize, solve every unsolved problem, score.
inline ExperimentReport run_experiment(const ExperimentConfig& config, const std::vector<ERProblem>& problems,
                                       const GroundTruth& truth, const std::string& dataset_name = "") {
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport report;
  report.config = config;
  report.dataset_name = dataset_name;

  auto split = split_by_source_pair(problems, config.ratio_init, derive_seed(config.repository.seed, "split"));
  for (const auto& p : split.initial) report.initial.push_back(p.id());
  for (const auto& p : split.unsolved) report.unsolved.push_back(p.id());

  Repository repo = init_repository(split.initial, config.repository, truth);
  report.clusters = repo.clustering.clusters.size();
  report.modularity = repo.clustering.quality;
  report.init_labels = repo.labels_spent;

  std::optional<EnsembleModel> unified;
  if (config.unified_baseline) unified = unified_model(repo);

  report.results.resize(split.unsolved.size());
  if (config.strategy == Strategy::Base) {
    parallel_for(split.unsolved.size(), config.repository.threads,
                 [&](std::size_t i) { report.results[i].solve = sel_base(repo, split.unsolved[i]); });
  } else {
    for (std::size_t i = 0; i < split.unsolved.size(); ++i) {
      report.results[i].solve = sel_cov(repo, split.unsolved[i], truth);
    }
  }
  std::vector<Metrics> per_problem;
  for (auto& r : report.results) {
    r.metrics = compute_metrics(r.solve.predictions, truth);
    report.extra_labels += r.solve.extra_labels_spent;
    report.retrain_budgets += r.solve.retrain_budget;
    per_problem.push_back(r.metrics);
  }
  report.macro = macro_average(per_problem);
  report.micro = micro_average(per_problem);

  if (unified) {
    std::vector<Metrics> unified_metrics;
    for (const auto& p : split.unsolved) {
      std::vector<Prediction> preds;
      for (const auto& w : p.vectors) {
        const double f = predict_match_fraction(*unified, w);
        preds.push_back({w.left, w.right, f >= 0.5, f});
      }
      unified_metrics.push_back(compute_metrics(preds, truth));
    }
    report.unified_macro = macro_average(unified_metrics);
    report.unified_micro = micro_average(unified_metrics);
  }
  report.repository = std::move(repo);
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

inline ExperimentReport run_experiment(const ExperimentConfig& config, const Dataset& dataset) {
  if (!dataset.oracle) throw Error(ErrorKind::MissingFile, "dataset has no ground truth; experiments need one");
  return run_experiment(config, dataset.problems, *dataset.oracle, dataset.manifest.name);
}

/// Loads the JSON config at `path` and the dataset it names.
inline ExperimentReport run_experiment_file(const fs::path& path, std::optional<unsigned> threads = std::nullopt) {
  std::ifstream in = detail::open_input(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, "cannot parse " + path.string() + ": " + e.what(), {{"path", path.string()}});
  }
  auto config = experiment_config_from_json(j);
  if (threads) config.repository.threads = *threads;
  if (config.dataset.empty()) throw Error(ErrorKind::InvalidArgument, "experiment config names no dataset");
  fs::path manifest = config.dataset;
  if (manifest.is_relative()) manifest = path.parent_path() / manifest;
  const auto dataset = load_dataset(manifest, config.repository.threads);
  return run_experiment(config, dataset);
}

/// The report JSON. Wall time is the only field that varies between runs
/// with the same config and seed; pass include_timing=false to drop it.
inline nlohmann::json to_json(const ExperimentReport& r, bool include_timing = true) {
  nlohmann::json j;
  j["tool_version"] = kVersion;
  j["config"] = to_json(r.config);
  j["dataset_name"] = r.dataset_name;
  j["initial_problems"] = r.initial;
  j["unsolved_problems"] = r.unsolved;
  j["clusters"] = r.clusters;
  j["modularity"] = r.modularity;
  j["labels"] = {{"initial", r.init_labels},
                 {"extra", r.extra_labels},
                 {"total", r.labels_spent()},
                 {"retrain_budgets", r.retrain_budgets}};
  j["macro"] = to_json(r.macro);
  j["micro"] = to_json(r.micro);
  j["per_problem"] = nlohmann::json::array();
  for (const auto& x : r.results) {
    auto row = to_json(x.metrics);
    row["problem"] = x.solve.problem;
    row["cluster"] = x.solve.cluster;
    row["sim_p"] = x.solve.sim_p;
    row["retrain_triggered"] = x.solve.retrain_triggered;
    row["extra_labels_spent"] = x.solve.extra_labels_spent;
    if (x.solve.coverage) row["coverage"] = *x.solve.coverage;
    j["per_problem"].push_back(std::move(row));
  }
  if (r.unified_macro) j["unified_baseline"] = {{"macro", to_json(*r.unified_macro)}, {"micro", to_json(*r.unified_micro)}};
  if (include_timing) j["wall_time_s"] = r.wall_time_s;
  return j;
}

inline std::string report_table(const ExperimentReport& r) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %-24s %7s %6s %6s %6s %6s\n", "problem", "cluster", "sim_p", "P", "R", "F1",
                "extra");
  out += line;
  for (const auto& x : r.results) {
    std::snprintf(line, sizeof line, "%-24s %-24s %7.4f %6.3f %6.3f %6.3f %6zu\n", x.solve.problem.c_str(),
                  x.solve.cluster.c_str(), x.solve.sim_p, x.metrics.precision, x.metrics.recall, x.metrics.f1,
                  x.solve.extra_labels_spent);
    out += line;
  }
  std::snprintf(line, sizeof line, "macro F1 %.4f  micro F1 %.4f  labels %zu  clusters %zu  time %.2fs\n", r.macro.f1,
                r.micro.f1, r.labels_spent(), r.clusters, r.wall_time_s);
  out += line;
  if (r.unified_macro) {
    std::snprintf(line, sizeof line, "unified model: macro F1 %.4f  micro F1 %.4f\n", r.unified_macro->f1,
                  r.unified_micro->f1);
    out += line;
  }
  return out;
}

}  // namespace morer
