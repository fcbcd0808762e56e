#include <gtest/gtest.h>

#include "leiden_fixtures.hpp"
#include "morer/leiden.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace morer;

namespace {

WeightedGraph to_graph(const oracle::Matrix& m) {
  WeightedGraph g(m.size());
  for (std::size_t a = 0; a < m.size(); ++a) {
    if (m[a][a] > 0.0) g.add_edge(a, a, m[a][a]);
    for (std::size_t b = a + 1; b < m.size(); ++b) g.add_edge(a, b, m[a][b]);
  }
  return g;
}

ProblemGraph problem_graph(const oracle::Matrix& m) {
  ProblemGraph g;
  const auto profile = std::make_shared<const ProblemProfile>(make_profile(testutil::values_problem("a", "b", {0.5})));
  for (std::size_t i = 0; i < m.size(); ++i) g.add_node("p" + std::to_string(i), profile);
  for (std::size_t a = 0; a < m.size(); ++a)
    for (std::size_t b = a + 1; b < m.size(); ++b)
      if (m[a][b] > 0.0) g.set_edge("p" + std::to_string(a), "p" + std::to_string(b), m[a][b]);
  return g;
}

}  // namespace

TEST(Modularity, AgreesWithMatrixDefinition) {
  for (const auto& fx : fixtures::leiden_fixture_set()) {
    if (fx.w.size() > 6) continue;
    const auto g = to_graph(fx.w);
    oracle::for_each_partition(fx.w.size(), [&](const std::vector<std::size_t>& p) {
      ASSERT_NEAR(modularity(g, p), oracle::modularity(fx.w, p), 1e-12) << fx.name;
    });
  }
}

TEST(Leiden, ReachesBruteForceOptimumOnSmallGraphs) {
  for (const auto& fx : fixtures::leiden_fixture_set()) {
    const auto g = to_graph(fx.w);
    const auto part = leiden_partition(g);
    EXPECT_NEAR(oracle::modularity(fx.w, part), oracle::best_modularity(fx.w), 1e-9) << fx.name;
  }
}

TEST(Leiden, TwoCliquesGiveTwoClusters) {
  const auto part = leiden_partition(to_graph(fixtures::two_cliques()));
  EXPECT_EQ(part, (std::vector<std::size_t>{0, 0, 0, 0, 1, 1, 1, 1}));
}

TEST(Leiden, EdgelessGraphGivesSingletons) {
  const auto c = leiden_cluster(problem_graph(fixtures::empty_matrix(5)));
  EXPECT_EQ(c.clusters.size(), 5u);
  EXPECT_EQ(c.quality, 0.0);
}

TEST(Leiden, EqualWeightCompleteGraphIsOneCluster) {
  for (std::size_t n = 2; n <= 6; ++n) {
    auto m = fixtures::empty_matrix(n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) fixtures::link(m, a, b, 0.6);
    EXPECT_EQ(leiden_cluster(problem_graph(m)).clusters.size(), 1u) << n;
  }
}

TEST(Leiden, CommunitiesAreConnected) {
  for (const auto& fx : fixtures::leiden_fixture_set()) {
    const auto g = to_graph(fx.w);
    const auto part = leiden_partition(g);
    EXPECT_EQ(detail::canonical_labels(detail::split_disconnected(g, part)), part) << fx.name;
  }
}

TEST(Leiden, DeterministicUnderSeed) {
  const auto g = problem_graph(fixtures::leiden_fixture_set().back().w);
  LeidenConfig cfg;
  cfg.seed = 7;
  EXPECT_EQ(leiden_cluster(g, cfg), leiden_cluster(g, cfg));
}

TEST(Leiden, ClusterIdIsSmallestMember) {
  const auto c = leiden_cluster(problem_graph(fixtures::two_cliques()));
  ASSERT_EQ(c.clusters.size(), 2u);
  EXPECT_EQ(c.cluster_of("p2"), "p0");
  EXPECT_EQ(c.cluster_of("p6"), "p4");
  EXPECT_THROW(c.cluster_of("nope"), Error);
}

TEST(Leiden, HigherResolutionSplitsMore) {
  auto m = fixtures::two_cliques();
  LeidenConfig low, high;
  low.resolution = 0.01;
  high.resolution = 5.0;
  const auto g = problem_graph(m);
  EXPECT_LE(leiden_cluster(g, low).clusters.size(), leiden_cluster(g, high).clusters.size());
}
