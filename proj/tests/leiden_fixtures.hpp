#pragma once

// Small connected weighted graphs for checking Leiden against exhaustive search.

#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"

namespace fixtures {

struct SmallGraph {
  std::string name;
  oracle::Matrix w;
};

inline oracle::Matrix empty_matrix(std::size_t n) { return oracle::Matrix(n, std::vector<double>(n, 0.0)); }

inline void link(oracle::Matrix& m, std::size_t a, std::size_t b, double w) {
  m[a][b] = w;
  m[b][a] = w;
}

inline bool connected(const oracle::Matrix& m) {
  const std::size_t n = m.size();
  std::vector<bool> seen(n, false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!stack.empty()) {
    const auto v = stack.back();
    stack.pop_back();
    for (std::size_t u = 0; u < n; ++u) {
      if (!seen[u] && u != v && m[v][u] > 0.0) {
        seen[u] = true;
        ++count;
        stack.push_back(u);
      }
    }
  }
  return count == n;
}

inline oracle::Matrix two_cliques() {
  auto m = empty_matrix(8);
  for (std::size_t base : {0u, 4u})
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = i + 1; j < 4; ++j) link(m, base + i, base + j, 1.0);
  link(m, 3, 4, 0.05);
  return m;
}

inline std::vector<SmallGraph> leiden_fixture_set() {
  std::vector<SmallGraph> out;
  out.push_back({"two_cliques", two_cliques()});

  for (std::size_t n = 2; n <= 6; ++n) {
    auto m = empty_matrix(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) link(m, i, j, 0.8);
    out.push_back({"complete_" + std::to_string(n), m});
  }

  {
    auto m = empty_matrix(8);
    for (std::size_t i = 0; i + 1 < 8; ++i) link(m, i, i + 1, 1.0);
    out.push_back({"path_8", m});
  }
  {
    auto m = empty_matrix(7);
    for (std::size_t i = 1; i < 7; ++i) link(m, 0, i, 0.5);
    out.push_back({"star_7", m});
  }
  {
    // Three triangles in a ring, joined by weak edges.
    auto m = empty_matrix(8);
    for (std::size_t t : {0u, 3u}) {
      link(m, t, t + 1, 1.0);
      link(m, t + 1, t + 2, 1.0);
      link(m, t, t + 2, 1.0);
    }
    link(m, 6, 7, 1.0);
    link(m, 2, 3, 0.1);
    link(m, 5, 6, 0.1);
    link(m, 7, 0, 0.1);
    out.push_back({"triangle_ring", m});
  }
  {
    // Problem-graph shape: complete, strong within two groups, weak across.
    auto m = empty_matrix(8);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = i + 1; j < 8; ++j) link(m, i, j, (i < 5) == (j < 5) ? 0.9 : 0.3);
    out.push_back({"complete_5_3", m});
  }

  std::mt19937_64 gen(20240607);
  std::uniform_real_distribution<double> weight(0.05, 1.0);
  std::bernoulli_distribution keep(0.45);
  for (int i = 0; out.size() < 60; ++i) {
    const std::size_t n = 3 + static_cast<std::size_t>(i % 6);
    auto m = empty_matrix(n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        if (keep(gen)) link(m, a, b, std::round(weight(gen) * 100.0) / 100.0);
    if (connected(m)) out.push_back({"random_" + std::to_string(i), m});
  }
  {
    // Dense complete graphs with varied weights, like real sim_p graphs.
    for (int i = 0; i < 10; ++i) {
      auto m = empty_matrix(8);
      for (std::size_t a = 0; a < 8; ++a)
        for (std::size_t b = a + 1; b < 8; ++b) link(m, a, b, weight(gen));
      out.push_back({"dense_" + std::to_string(i), m});
    }
  }
  return out;
}

}  // namespace fixtures
