#pragma once

// Slow, independent reference implementations used to check the library.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <boost/rational.hpp>

namespace oracle {

// Fraction of `xs` that is <= x, by linear scan.
inline double ecdf(const std::vector<double>& xs, double x) {
  std::size_t c = 0;
  for (double v : xs)
    if (v <= x) ++c;
  return static_cast<double>(c) / static_cast<double>(xs.size());
}

// sup |F_a - F_b| evaluated at every sample point of both samples.
inline double ks(const std::vector<double>& a, const std::vector<double>& b) {
  double best = 0.0;
  for (const auto* s : {&a, &b})
    for (double x : *s) best = std::max(best, std::abs(ecdf(a, x) - ecdf(b, x)));
  return best;
}

// Unnormalized grid distance: sum over i of |F_a(i/(m-1)) - F_b(i/(m-1))|.
inline double wd_raw(const std::vector<double>& a, const std::vector<double>& b, std::size_t m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(m - 1);
    s += std::abs(ecdf(a, x) - ecdf(b, x));
  }
  return s;
}

// Bin of v: the largest i with i/bins <= v, found by scanning the edges.
inline std::size_t bin_of(double v, std::size_t bins) {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < bins; ++i)
    if (static_cast<double>(i) / static_cast<double>(bins) <= v) idx = i;
  return idx;
}

inline std::vector<double> proportions(const std::vector<double>& xs, std::size_t bins, double eps) {
  std::vector<double> counts(bins, 0.0);
  for (double v : xs) counts[bin_of(v, bins)] += 1.0;
  std::vector<double> p(bins);
  for (std::size_t i = 0; i < bins; ++i)
    p[i] = (counts[i] / static_cast<double>(xs.size()) + eps) / (1.0 + static_cast<double>(bins) * eps);
  return p;
}

inline double psi(const std::vector<double>& a, const std::vector<double>& b, std::size_t bins, double eps) {
  const auto p = proportions(a, bins, eps);
  const auto q = proportions(b, bins, eps);
  double s = 0.0;
  for (std::size_t i = 0; i < bins; ++i) s += (p[i] - q[i]) * std::log(p[i] / q[i]);
  return s;
}

// Dense symmetric adjacency; diagonal entries are self-loop weights.
using Matrix = std::vector<std::vector<double>>;

// Newman modularity from the adjacency matrix definition:
// Q = 1/(2m) sum_ij [A_ij - gamma k_i k_j / (2m)] delta(c_i, c_j),
// with A_ii = 2 * loop weight.
inline double modularity(const Matrix& w, const std::vector<std::size_t>& part, double gamma = 1.0) {
  const std::size_t n = w.size();
  std::vector<double> k(n, 0.0);
  double two_m = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double a = i == j ? 2.0 * w[i][i] : w[i][j];
      k[i] += a;
      two_m += a;
    }
  if (two_m == 0.0) return 0.0;
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (part[i] != part[j]) continue;
      const double a = i == j ? 2.0 * w[i][i] : w[i][j];
      q += a - gamma * k[i] * k[j] / two_m;
    }
  return q / two_m;
}

// Calls fn for every set partition of n elements (restricted growth strings).
inline void for_each_partition(std::size_t n, const std::function<void(const std::vector<std::size_t>&)>& fn) {
  std::vector<std::size_t> a(n, 0);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t max_label) {
    if (i == n) {
      fn(a);
      return;
    }
    for (std::size_t c = 0; c <= max_label + 1 && c <= i; ++c) {
      a[i] = c;
      rec(i + 1, std::max(max_label, c));
    }
  };
  if (n == 0) return;
  a[0] = 0;
  rec(1, 0);
}

inline double best_modularity(const Matrix& w, double gamma = 1.0) {
  double best = -std::numeric_limits<double>::infinity();
  for_each_partition(w.size(), [&](const std::vector<std::size_t>& p) { best = std::max(best, modularity(w, p, gamma)); });
  return best;
}

struct BudgetCluster {
  std::string id;
  std::size_t problems = 0;
  std::size_t vectors = 0;
};

// Hand evaluation of the budget formulas with exact rationals: each cluster
// gets b_min plus its vector share of its group's slice of the remainder;
// each group's flooring leftover goes to its largest cluster (ties: lower
// id). No merging: callers pass configurations with |C| * b_min <= b_tot.
inline std::map<std::string, long long> budgets(const std::vector<BudgetCluster>& clusters, long long b_tot,
                                                long long b_min) {
  using Q = boost::rational<long long>;
  long long total_problems = 0;
  for (const auto& c : clusters) total_problems += static_cast<long long>(c.problems);
  const long long b_rem = b_tot - b_min * static_cast<long long>(clusters.size());
  std::map<std::string, long long> out;
  for (bool singleton : {false, true}) {
    long long group_problems = 0, group_vectors = 0;
    const BudgetCluster* largest = nullptr;
    for (const auto& c : clusters) {
      if ((c.problems == 1) != singleton) continue;
      group_problems += static_cast<long long>(c.problems);
      group_vectors += static_cast<long long>(c.vectors);
      if (!largest || c.vectors > largest->vectors || (c.vectors == largest->vectors && c.id < largest->id))
        largest = &c;
    }
    if (!largest) continue;
    const Q ratio(group_problems, total_problems);
    const long long share = boost::rational_cast<long long>(Q(b_rem) * ratio);  // floors for non-negative values
    long long assigned = 0;
    for (const auto& c : clusters) {
      if ((c.problems == 1) != singleton) continue;
      long long extra = 0;
      if (group_vectors > 0) {
        const Q part = Q(static_cast<long long>(c.vectors), group_vectors) * Q(b_rem) * ratio;
        extra = boost::rational_cast<long long>(part);
      }
      out[c.id] = b_min + extra;
      assigned += extra;
    }
    out[largest->id] += share - assigned;
  }
  return out;
}

}  // namespace oracle
