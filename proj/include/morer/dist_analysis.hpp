#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "morer/er_core.hpp"
#include "morer/error.hpp"

namespace morer {

enum class DistTest { KS, WD, PSI };

inline std::string_view to_string(DistTest t) {
  switch (t) {
    case DistTest::KS: return "ks";
    case DistTest::WD: return "wd";
    case DistTest::PSI: return "psi";
  }
  return "ks";
}

inline DistTest parse_dist_test(std::string_view s) {
  if (s == "ks" || s == "KS") return DistTest::KS;
  if (s == "wd" || s == "WD") return DistTest::WD;
  if (s == "psi" || s == "PSI") return DistTest::PSI;
  throw Error(ErrorKind::InvalidArgument, "unknown distribution test '" + std::string(s) + "'");
}

struct AnalysisConfig {
  DistTest test = DistTest::KS;
  std::size_t wd_grid = 101;
  std::size_t psi_bins = 100;
  double psi_eps = 1e-6;
};

/// Sorted sample of one similarity feature plus its (population) standard
/// deviation.
struct FeatureDistribution {
  std::size_t feature_index = 0;
  std::vector<double> sorted_values;
  double std = 0.0;

  static FeatureDistribution from_values(std::size_t feature, std::vector<double> values) {
    FeatureDistribution d;
    d.feature_index = feature;
    std::sort(values.begin(), values.end());
    d.sorted_values = std::move(values);
    if (!d.sorted_values.empty()) {
      const double n = static_cast<double>(d.sorted_values.size());
      double mean = 0.0;
      for (double v : d.sorted_values) mean += v;
      mean /= n;
      double ss = 0.0;
      for (double v : d.sorted_values) ss += (v - mean) * (v - mean);
      d.std = std::sqrt(ss / n);
    }
    return d;
  }

  std::size_t size() const { return sorted_values.size(); }
  bool empty() const { return sorted_values.empty(); }
};

/// Per-feature distributions of a set of feature vectors: an ER problem, or
/// the retained training vectors of a cluster.
struct ProblemProfile {
  std::vector<FeatureDistribution> features;
  std::size_t vector_count = 0;

  std::size_t arity() const { return features.size(); }
};

inline ProblemProfile make_profile(std::span<const FeatureVector> vectors, std::size_t arity) {
  ProblemProfile prof;
  prof.vector_count = vectors.size();
  prof.features.reserve(arity);
  for (std::size_t f = 0; f < arity; ++f) {
    std::vector<double> column;
    column.reserve(vectors.size());
    for (const auto& w : vectors) column.push_back(w.values[f]);
    prof.features.push_back(FeatureDistribution::from_values(f, std::move(column)));
  }
  return prof;
}

inline ProblemProfile make_profile(const ERProblem& p) { return make_profile(p.vectors, p.arity()); }

struct EmpiricalCDF {
  std::vector<double> grid;
  std::vector<double> cdf_values;
};

inline double grid_point(std::size_t i, std::size_t m) {
  return static_cast<double>(i) / static_cast<double>(m - 1);
}

/// Step CDF of `d` evaluated on m evenly spaced points covering [0,1].
inline EmpiricalCDF grid_cdf(const FeatureDistribution& d, std::size_t m) {
  if (m < 2) throw Error(ErrorKind::InvalidGrid, "grid needs at least 2 points", {{"m", m}});
  if (d.empty()) throw Error(ErrorKind::EmptyDistribution, "empty feature distribution");
  EmpiricalCDF cdf;
  cdf.grid.resize(m);
  cdf.cdf_values.resize(m);
  const double n = static_cast<double>(d.size());
  for (std::size_t i = 0; i < m; ++i) {
    const double x = grid_point(i, m);
    const auto le = std::upper_bound(d.sorted_values.begin(), d.sorted_values.end(), x) - d.sorted_values.begin();
    cdf.grid[i] = x;
    cdf.cdf_values[i] = static_cast<double>(le) / n;
  }
  return cdf;
}

namespace detail {
inline void require_nonempty(const FeatureDistribution& a, const FeatureDistribution& b) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::EmptyDistribution, "distribution test on an empty sample");
}
}  // namespace detail

/// Two-sample Kolmogorov-Smirnov statistic: sup_x |F_a(x) - F_b(x)| over
/// the exact step CDFs. Merge walk, O(n + m).
inline double ks_statistic(const FeatureDistribution& a, const FeatureDistribution& b) {
  detail::require_nonempty(a, b);
  const auto& xs = a.sorted_values;
  const auto& ys = b.sorted_values;
  const double n = static_cast<double>(xs.size());
  const double m = static_cast<double>(ys.size());
  std::size_t i = 0, j = 0;
  double best = 0.0;
  while (i < xs.size() || j < ys.size()) {
    double x;
    if (j == ys.size() || (i < xs.size() && xs[i] <= ys[j])) {
      x = xs[i];
    } else {
      x = ys[j];
    }
    while (i < xs.size() && xs[i] <= x) ++i;
    while (j < ys.size() && ys[j] <= x) ++j;
    best = std::max(best, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  return best;
}

struct WassersteinResult {
  double raw = 0.0;
  double normalized = 0.0;
};

/// Sum of absolute differences between the two CDFs sampled on a shared
/// m-point grid over [0,1]; `normalized` divides by m.
inline WassersteinResult wasserstein_distance(const FeatureDistribution& a, const FeatureDistribution& b,
                                              std::size_t m = 101) {
  if (m < 2) throw Error(ErrorKind::InvalidGrid, "grid needs at least 2 points", {{"m", m}});
  detail::require_nonempty(a, b);
  const auto ca = grid_cdf(a, m);
  const auto cb = grid_cdf(b, m);
  WassersteinResult r;
  for (std::size_t i = 0; i < m; ++i) r.raw += std::abs(ca.cdf_values[i] - cb.cdf_values[i]);
  r.normalized = r.raw / static_cast<double>(m);
  return r;
}

/// Bin i covers [i/bins, (i+1)/bins); the last bin also holds 1.0. Edges are
/// the doubles i/bins, so the index is corrected after the multiply.
inline std::size_t psi_bin(double v, std::size_t bins) {
  const double b = static_cast<double>(bins);
  auto idx = static_cast<std::size_t>(std::clamp(std::floor(v * b), 0.0, b - 1.0));
  while (idx + 1 < bins && v >= static_cast<double>(idx + 1) / b) ++idx;
  while (idx > 0 && v < static_cast<double>(idx) / b) --idx;
  return idx;
}

/// Smoothed bin proportions: (count/n + eps) / (1 + bins*eps).
inline std::vector<double> psi_proportions(const FeatureDistribution& d, std::size_t bins, double eps) {
  std::vector<double> counts(bins, 0.0);
  for (double v : d.sorted_values) counts[psi_bin(v, bins)] += 1.0;
  const double n = static_cast<double>(d.size());
  const double norm = 1.0 + static_cast<double>(bins) * eps;
  for (auto& c : counts) c = (c / n + eps) / norm;
  return counts;
}

/// Population stability index over proportion vectors. Written as
/// (p - q)(ln p - ln q) so swapping the arguments is exact.
inline double psi_from_proportions(std::span<const double> p, std::span<const double> q) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == q[i]) continue;
    if (p[i] == 0.0 || q[i] == 0.0) return std::numeric_limits<double>::infinity();
    total += (p[i] - q[i]) * (std::log(p[i]) - std::log(q[i]));
  }
  return total;
}

inline double psi(const FeatureDistribution& a, const FeatureDistribution& b, std::size_t bins = 100,
                  double eps = 1e-6) {
  if (bins < 2) throw Error(ErrorKind::InvalidArgument, "PSI needs at least 2 bins", {{"bins", bins}});
  if (!(eps >= 0.0)) throw Error(ErrorKind::InvalidArgument, "PSI smoothing must be non-negative");
  detail::require_nonempty(a, b);
  const auto p = psi_proportions(a, bins, eps);
  const auto q = psi_proportions(b, bins, eps);
  return psi_from_proportions(p, q);
}

/// Maps a distance to [0,1]: 1 - d for KS and normalized WD, exp(-d) for PSI.
inline double distance_to_similarity(DistTest test, double value) {
  if (std::isnan(value)) throw Error(ErrorKind::InvalidValue, "distance is NaN");
  if (value < 0.0) throw Error(ErrorKind::NegativeDistance, "distance must be non-negative", {{"value", value}});
  switch (test) {
    case DistTest::KS:
    case DistTest::WD: return std::max(0.0, 1.0 - value);
    case DistTest::PSI: return std::exp(-value);
  }
  return 0.0;
}

/// The distance each test contributes to similarity (WD in normalized form).
inline double feature_distance(const FeatureDistribution& a, const FeatureDistribution& b,
                               const AnalysisConfig& cfg) {
  switch (cfg.test) {
    case DistTest::KS: return ks_statistic(a, b);
    case DistTest::WD: return wasserstein_distance(a, b, cfg.wd_grid).normalized;
    case DistTest::PSI: return psi(a, b, cfg.psi_bins, cfg.psi_eps);
  }
  return 0.0;
}

struct ProblemSimilarity {
  std::vector<double> per_feature_distance;
  std::vector<double> per_feature_similarity;
  std::vector<double> weights;
  double sim_p = 0.0;
};

/// Feature weights: mean of the two standard deviations, normalized to sum
/// to one; uniform when every std is zero.
inline std::vector<double> std_weights(const ProblemProfile& p, const ProblemProfile& q) {
  const std::size_t t = p.arity();
  std::vector<double> w(t);
  double sum = 0.0;
  for (std::size_t f = 0; f < t; ++f) {
    w[f] = (p.features[f].std + q.features[f].std) / 2.0;
    sum += w[f];
  }
  if (sum <= 0.0) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(t));
  } else {
    for (auto& x : w) x /= sum;
  }
  return w;
}

/// Combines per-feature similarities into a weighted mean, clamped to [0,1]
/// against rounding.
inline double weighted_similarity(std::span<const double> sims, std::span<const double> weights) {
  double s = 0.0;
  for (std::size_t f = 0; f < sims.size(); ++f) s += weights[f] * sims[f];
  return std::clamp(s, 0.0, 1.0);
}

inline ProblemSimilarity problem_similarity(const ProblemProfile& p, const ProblemProfile& q,
                                            const AnalysisConfig& cfg) {
  if (p.arity() != q.arity()) {
    throw Error(ErrorKind::ArityMismatch, "problems have different feature arity",
                {{"expected", p.arity()}, {"got", q.arity()}});
  }
  if (p.arity() == 0) throw Error(ErrorKind::InvalidArgument, "problems have no features");
  ProblemSimilarity out;
  const std::size_t t = p.arity();
  out.per_feature_distance.resize(t);
  out.per_feature_similarity.resize(t);
  for (std::size_t f = 0; f < t; ++f) {
    out.per_feature_distance[f] = feature_distance(p.features[f], q.features[f], cfg);
    out.per_feature_similarity[f] = distance_to_similarity(cfg.test, out.per_feature_distance[f]);
  }
  out.weights = std_weights(p, q);
  out.sim_p = weighted_similarity(out.per_feature_similarity, out.weights);
  return out;
}

inline ProblemSimilarity problem_similarity(const ERProblem& p, const ERProblem& q, const AnalysisConfig& cfg) {
  if (p.arity() != q.arity()) {
    throw Error(ErrorKind::ArityMismatch, "problems " + p.id() + " and " + q.id() + " differ in arity",
                {{"expected", p.arity()}, {"got", q.arity()}, {"problem", q.id()}});
  }
  return problem_similarity(make_profile(p), make_profile(q), cfg);
}

}  // namespace morer
