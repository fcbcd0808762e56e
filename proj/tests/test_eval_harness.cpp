#include <gtest/gtest.h>

#include "morer/eval_harness.hpp"
#include "test_util.hpp"

using namespace morer;

namespace {

GroundTruth truth_for(const std::vector<std::pair<std::string, bool>>& pairs) {
  GroundTruth t;
  for (const auto& [id, m] : pairs) t.set({"a", id}, {"b", id}, m);
  return t;
}

Prediction pred(const std::string& id, bool match) { return {{"a", id}, {"b", id}, match, match ? 1.0 : 0.0}; }

std::string dir_bytes(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = detail::read_file(e.path());
  std::string out;
  for (const auto& [k, v] : files) out += k + "\n" + v;
  return out;
}

ExperimentConfig small_experiment(Strategy s) {
  ExperimentConfig c;
  c.strategy = s;
  c.ratio_init = 0.5;
  c.repository.b_tot = 300;
  c.repository.al.ensemble.k = 20;
  c.unified_baseline = true;
  return c;
}

}  // namespace

TEST(Metrics, WorkedCounts) {
  const auto m = metrics_from_counts(8, 2, 2);
  EXPECT_DOUBLE_EQ(m.precision, 0.8);
  EXPECT_DOUBLE_EQ(m.recall, 0.8);
  EXPECT_DOUBLE_EQ(m.f1, 0.8);
  const auto none = metrics_from_counts(0, 0, 5);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.f1, 0.0);
}

TEST(Metrics, FromPredictions) {
  const auto truth = truth_for({{"1", true}, {"2", true}, {"3", false}, {"4", false}});
  std::vector<Prediction> p{pred("1", true), pred("2", false), pred("3", true), pred("4", false)};
  const auto m = compute_metrics(p, truth);
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_DOUBLE_EQ(m.f1, 0.5);
}

TEST(Metrics, MacroAndMicro) {
  std::vector<Metrics> per{metrics_from_counts(10, 0, 0), metrics_from_counts(0, 0, 10)};
  EXPECT_DOUBLE_EQ(macro_average(per).f1, 0.5);
  EXPECT_DOUBLE_EQ(micro_average(per).f1, 2.0 * 0.5 / 1.5);
}

TEST(Ari, KnownValues) {
  EXPECT_EQ(adjusted_rand_index(std::vector<int>{0, 0, 1, 1}, std::vector<std::string>{"x", "x", "y", "y"}), 1.0);
  EXPECT_EQ(adjusted_rand_index(std::vector<int>{0, 0, 0}, std::vector<int>{1, 1, 1}), 1.0);
  // Hand value for {0,0,1,1} vs {0,1,0,1}: index 0, expected 1/3, max 1.
  EXPECT_NEAR(adjusted_rand_index(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1}), -0.5, 1e-12);
}

TEST(Synth, ProblemCountsAndLabels) {
  const auto corpus = generate_synthetic(default_synth_spec(2, 4, 100, 1));
  EXPECT_EQ(corpus.problems.size(), 12u);
  for (const auto& p : corpus.problems) {
    EXPECT_EQ(p.size(), 100u);
    std::size_t matches = 0;
    for (const auto& w : p.vectors) {
      matches += corpus.truth.label(w.left, w.right);
      for (double v : w.values) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
    EXPECT_EQ(matches, 30u);
  }
  EXPECT_EQ(generate_synthetic(default_synth_spec(1, 2, 10, 1)).problems.size(), 1u);
}

TEST(Synth, SameSeedSameBytes) {
  testutil::TempDir a, b, c;
  write_synthetic(generate_synthetic(default_synth_spec(2, 3, 50, 9)), "s", a.path());
  write_synthetic(generate_synthetic(default_synth_spec(2, 3, 50, 9)), "s", b.path());
  write_synthetic(generate_synthetic(default_synth_spec(2, 3, 50, 10)), "s", c.path());
  EXPECT_EQ(dir_bytes(a.path()), dir_bytes(b.path()));
  EXPECT_NE(dir_bytes(a.path()), dir_bytes(c.path()));
  const auto ds = load_dataset(a.path() / "manifest.json");
  EXPECT_EQ(ds.problems.size(), 6u);
  EXPECT_TRUE(ds.oracle.has_value());
}

TEST(Synth, InvalidSpecs) {
  auto bad = default_synth_spec(2, 4, 100, 1);
  bad.match_ratio = 1.5;
  EXPECT_THROW(generate_synthetic(bad), Error);
  bad = default_synth_spec(2, 1, 100, 1);
  try {
    generate_synthetic(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidSpec);
  }
  EXPECT_THROW(preset_regime(4), Error);
}

TEST(Synth, RegimesAreSeparated) {
  const auto corpus = generate_synthetic(default_synth_spec(2, 4, 500, 42));
  const auto rep = check_separation(corpus, 0.3);
  EXPECT_TRUE(rep.ok) << rep.min_cross << " " << rep.max_within;
}

TEST(Synth, TruncatedNormalStaysInRangeAndNearMean) {
  Rng rng(5);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double x = sample_truncated_normal(rng, {0.5, 0.1});
    ASSERT_GE(x, 0.0);
    ASSERT_LE(x, 1.0);
    sum += x;
  }
  EXPECT_NEAR(sum / 20000.0, 0.5, 0.005);
  EXPECT_NEAR(detail::normal_quantile(0.975), 1.959963984540054, 1e-12);
}

TEST(Experiment, BaseStrategyBuysNoExtraLabels) {
  const auto corpus = generate_synthetic(default_synth_spec(2, 4, 200, 42));
  const auto r = run_experiment(small_experiment(Strategy::Base), corpus.problems, corpus.truth, "synth");
  EXPECT_EQ(r.extra_labels, 0u);
  EXPECT_LE(r.init_labels, 300u);
  EXPECT_EQ(r.initial.size() + r.unsolved.size(), 12u);
  EXPECT_GE(r.micro.f1, 0.9);
  ASSERT_TRUE(r.unified_macro.has_value());
  EXPECT_LT(r.unified_macro->f1, r.macro.f1);

  std::vector<std::size_t> regimes;
  std::vector<ClusterId> clusters;
  for (const auto& id : r.initial) {
    regimes.push_back(corpus.regime_of.at(id));
    clusters.push_back(r.repository.clustering.cluster_of(id));
  }
  EXPECT_EQ(adjusted_rand_index(regimes, clusters), 1.0);
}

TEST(Experiment, CovStrategyStaysWithinBudget) {
  const auto corpus = generate_synthetic(default_synth_spec(2, 4, 200, 42));
  auto cfg = small_experiment(Strategy::Cov);
  cfg.repository.t_cov = 0.2;
  const auto r = run_experiment(cfg, corpus.problems, corpus.truth, "synth");
  EXPECT_LE(r.labels_spent(), cfg.repository.b_tot + r.retrain_budgets);
  EXPECT_EQ(r.labels_spent(), r.repository.labels_spent);
  EXPECT_GE(r.micro.f1, 0.9);
}

TEST(Experiment, ReportIsDeterministicAcrossThreadCounts) {
  const auto corpus = generate_synthetic(default_synth_spec(2, 3, 150, 7));
  auto one = small_experiment(Strategy::Base);
  auto four = one;
  four.repository.threads = 4;
  const auto a = to_json(run_experiment(one, corpus.problems, corpus.truth), false);
  const auto b = to_json(run_experiment(one, corpus.problems, corpus.truth), false);
  auto c = to_json(run_experiment(four, corpus.problems, corpus.truth), false);
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_EQ(a.dump(), c.dump());
}

TEST(Experiment, ConfigFileRunsAgainstRelativeDataset) {
  testutil::TempDir dir;
  write_synthetic(generate_synthetic(default_synth_spec(2, 3, 80, 3)), "cfg", dir.path() / "data");
  std::ofstream(dir.path() / "exp.json") << R"({"dataset": "data/manifest.json", "b_tot": 200, "k": 10})";
  const auto r = run_experiment_file(dir.path() / "exp.json");
  EXPECT_EQ(r.dataset_name, "cfg");
  EXPECT_EQ(r.config.repository.b_tot, 200u);
  std::ofstream(dir.path() / "bad.json") << R"({"dataset": "data/manifest.json", "ratio_init": 1.0})";
  EXPECT_THROW(run_experiment_file(dir.path() / "bad.json"), Error);
}
