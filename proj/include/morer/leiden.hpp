#pragma once

// Leiden community detection (local moving, refinement, aggregation) for
// weighted modularity with a resolution parameter.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "morer/problem_graph.hpp"
#include "morer/random.hpp"

namespace morer {

/// Index-based weighted graph. `self_weight[i]` is the weight of the loop on
/// node i counted once; aggregated graphs use it for collapsed internal edges.
struct WeightedGraph {
  std::vector<std::vector<std::pair<std::size_t, double>>> adj;
  std::vector<double> self_weight;

  explicit WeightedGraph(std::size_t n = 0) : adj(n), self_weight(n, 0.0) {}

  std::size_t size() const { return adj.size(); }

  void add_edge(std::size_t a, std::size_t b, double w) {
    if (w <= 0.0) return;
    if (a == b) {
      self_weight[a] += w;
      return;
    }
    adj[a].emplace_back(b, w);
    adj[b].emplace_back(a, w);
  }

  double strength(std::size_t v) const {
    double s = 2.0 * self_weight[v];
    for (const auto& [u, w] : adj[v]) s += w;
    return s;
  }

  // Sum of edge weights, each edge once, loops included.
  double total_weight() const {
    double m = 0.0;
    for (std::size_t v = 0; v < size(); ++v) {
      m += self_weight[v];
      for (const auto& [u, w] : adj[v])
        if (u > v) m += w;
    }
    return m;
  }
};

/// Q = 1/(2m) * sum_c [ 2 in_c - gamma K_c^2 / (2m) ]; 0 for an edgeless graph.
inline double modularity(const WeightedGraph& g, const std::vector<std::size_t>& part, double resolution = 1.0) {
  const double m = g.total_weight();
  if (m <= 0.0) return 0.0;
  std::map<std::size_t, double> internal, total;
  for (std::size_t v = 0; v < g.size(); ++v) {
    internal[part[v]] += g.self_weight[v];
    total[part[v]] += g.strength(v);
    for (const auto& [u, w] : g.adj[v])
      if (u > v && part[u] == part[v]) internal[part[v]] += w;
  }
  double q = 0.0;
  for (const auto& [c, k] : total) q += 2.0 * internal[c] - resolution * k * k / (2.0 * m);
  return q / (2.0 * m);
}

struct LeidenConfig {
  double resolution = 1.0;
  std::uint64_t seed = 42;
  std::size_t max_iters = 50;  // full Leiden passes; stops early once stable
  double theta = 0.01;         // randomness of the refinement step
  std::size_t restarts = 16;    // independent seeded runs; the best modularity wins
};

namespace detail {

class LeidenRun {
 public:
  LeidenRun(const LeidenConfig& cfg, Rng& rng) : cfg_(cfg), rng_(rng) {}

  // One Leiden pass starting from `part` on `g`. Returns the flat partition.
  std::vector<std::size_t> pass(const WeightedGraph& original, std::vector<std::size_t> part) {
    two_m_ = 2.0 * original.total_weight();
    WeightedGraph g = original;
    std::vector<std::size_t> node_of(original.size());
    std::iota(node_of.begin(), node_of.end(), std::size_t{0});
    for (;;) {
      move_nodes_fast(g, part);
      const std::size_t communities = count_distinct(part);
      if (communities == g.size()) break;
      auto refined = refine(g, part);
      const std::size_t refined_count = count_distinct(refined);
      if (refined_count == g.size()) break;  // nothing to collapse further
      auto [agg, agg_part] = aggregate(g, part, refined);
      for (auto& v : node_of) v = refined[v];
      g = std::move(agg);
      part = std::move(agg_part);
    }
    std::vector<std::size_t> flat(original.size());
    for (std::size_t v = 0; v < original.size(); ++v) flat[v] = part[node_of[v]];
    return flat;
  }

 private:
  static std::size_t count_distinct(const std::vector<std::size_t>& part) {
    std::vector<std::size_t> c = part;
    std::sort(c.begin(), c.end());
    return static_cast<std::size_t>(std::unique(c.begin(), c.end()) - c.begin());
  }

  std::vector<std::size_t> random_order(std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng_.shuffle(std::span<std::size_t>(order));
    return order;
  }

  // Queue-based local moving: greedy best move per node, revisiting the
  // neighbours of nodes that changed community.
  void move_nodes_fast(const WeightedGraph& g, std::vector<std::size_t>& part) {
    const std::size_t n = g.size();
    std::vector<double> k(n), community_total(n, 0.0);
    std::vector<std::size_t> community_size(n, 0);
    for (std::size_t v = 0; v < n; ++v) {
      k[v] = g.strength(v);
      community_total[part[v]] += k[v];
      ++community_size[part[v]];
    }
    std::vector<std::size_t> empty;
    for (std::size_t c = n; c-- > 0;)
      if (community_size[c] == 0) empty.push_back(c);

    std::deque<std::size_t> queue;
    std::vector<char> queued(n, 1);
    for (auto v : random_order(n)) queue.push_back(v);

    std::vector<double> link(n, 0.0);
    std::vector<std::size_t> touched;
    while (!queue.empty()) {
      const std::size_t v = queue.front();
      queue.pop_front();
      queued[v] = 0;
      const std::size_t current = part[v];

      touched.clear();
      for (const auto& [u, w] : g.adj[v]) {
        if (link[part[u]] == 0.0) touched.push_back(part[u]);
        link[part[u]] += w;
      }
      community_total[current] -= k[v];
      --community_size[current];
      if (community_size[current] == 0) empty.push_back(current);

      std::size_t best = current;
      double best_gain = link[current] - cfg_.resolution * k[v] * community_total[current] / two_m_;
      for (auto c : touched) {
        const double gain = link[c] - cfg_.resolution * k[v] * community_total[c] / two_m_;
        if (gain > best_gain) {
          best_gain = gain;
          best = c;
        }
      }
      if (best_gain < 0.0 && community_size[current] != 0) {
        best = empty.back();
        best_gain = 0.0;
      }
      for (auto c : touched) link[c] = 0.0;

      if (community_size[best] == 0) {
        empty.erase(std::find(empty.begin(), empty.end(), best));
      }
      community_total[best] += k[v];
      ++community_size[best];
      part[v] = best;

      if (best != current) {
        for (const auto& [u, w] : g.adj[v]) {
          if (!queued[u] && part[u] != best) {
            queued[u] = 1;
            queue.push_back(u);
          }
        }
      }
    }
  }

  // Refinement: within every community, merge singletons into well-connected
  // sub-communities, choosing randomly among non-negative gains.
  std::vector<std::size_t> refine(const WeightedGraph& g, const std::vector<std::size_t>& part) {
    const std::size_t n = g.size();
    std::vector<std::size_t> refined(n);
    std::iota(refined.begin(), refined.end(), std::size_t{0});
    std::vector<double> k(n), ref_total(n), ref_external(n, 0.0);
    std::vector<std::size_t> ref_size(n, 1);
    std::vector<double> community_total(n, 0.0);
    std::vector<std::vector<std::size_t>> members(n);
    for (std::size_t v = 0; v < n; ++v) {
      k[v] = g.strength(v);
      ref_total[v] = k[v];
      community_total[part[v]] += k[v];
      members[part[v]].push_back(v);
      for (const auto& [u, w] : g.adj[v])
        if (part[u] == part[v]) ref_external[v] += w;
    }
    const double gamma = cfg_.resolution;

    std::vector<double> link(n, 0.0);
    std::vector<std::size_t> touched;
    std::vector<std::pair<std::size_t, double>> candidates;
    for (std::size_t c = 0; c < n; ++c) {
      if (members[c].size() < 2) continue;
      const double total_s = community_total[c];
      std::vector<std::size_t> order = members[c];
      rng_.shuffle(std::span<std::size_t>(order));
      for (auto v : order) {
        if (ref_size[refined[v]] != 1) continue;
        if (ref_external[v] < gamma * k[v] * (total_s - k[v]) / two_m_) continue;  // v not well connected

        touched.clear();
        for (const auto& [u, w] : g.adj[v]) {
          if (part[u] != c) continue;
          const std::size_t r = refined[u];
          if (link[r] == 0.0) touched.push_back(r);
          link[r] += w;
        }
        const std::size_t own = refined[v];
        candidates.clear();
        candidates.emplace_back(own, 0.0);
        double max_gain = 0.0;
        for (auto r : touched) {
          if (r == own) continue;
          if (ref_external[r] < gamma * ref_total[r] * (total_s - ref_total[r]) / two_m_) continue;
          const double gain = link[r] - gamma * k[v] * ref_total[r] / two_m_;
          if (gain >= 0.0) {
            candidates.emplace_back(r, gain);
            max_gain = std::max(max_gain, gain);
          }
        }
        std::size_t chosen = own;
        if (candidates.size() > 1) {
          double z = 0.0;
          for (auto& cand : candidates) {
            cand.second = std::exp((cand.second - max_gain) / cfg_.theta);
            z += cand.second;
          }
          double r = rng_.uniform() * z;
          chosen = candidates.back().first;
          for (const auto& [id, weight] : candidates) {
            if (r < weight) {
              chosen = id;
              break;
            }
            r -= weight;
          }
        }
        if (chosen != own) {
          const double w_vc = link[chosen];
          ref_external[chosen] = ref_external[chosen] + ref_external[v] - 2.0 * w_vc;
          ref_total[chosen] += k[v];
          ++ref_size[chosen];
          ref_total[own] = 0.0;
          ref_size[own] = 0;
          refined[v] = chosen;
        }
        for (auto r : touched) link[r] = 0.0;
      }
    }
    return refined;
  }

  // Collapses each refined community into one node; the aggregate starts
  // from the unrefined partition.
  static std::pair<WeightedGraph, std::vector<std::size_t>> aggregate(const WeightedGraph& g,
                                                                      const std::vector<std::size_t>& part,
                                                                      std::vector<std::size_t>& refined) {
    const std::size_t n = g.size();
    std::vector<std::size_t> dense(n, n);
    std::size_t next = 0;
    for (std::size_t v = 0; v < n; ++v) {
      if (dense[refined[v]] == n) dense[refined[v]] = next++;
    }
    for (auto& r : refined) r = dense[r];

    WeightedGraph agg(next);
    std::vector<std::size_t> agg_part(next);
    std::vector<std::map<std::size_t, double>> acc(next);
    for (std::size_t v = 0; v < n; ++v) {
      const std::size_t rv = refined[v];
      agg_part[rv] = part[v];
      agg.self_weight[rv] += g.self_weight[v];
      for (const auto& [u, w] : g.adj[v]) {
        if (u < v) continue;
        const std::size_t ru = refined[u];
        if (ru == rv) {
          agg.self_weight[rv] += w;
        } else {
          acc[std::min(rv, ru)][std::max(rv, ru)] += w;
        }
      }
    }
    for (std::size_t a = 0; a < next; ++a)
      for (const auto& [b, w] : acc[a]) agg.add_edge(a, b, w);
    // Community ids must index nodes of the aggregate.
    std::vector<std::size_t> relabel(n, n);
    std::size_t c = 0;
    for (auto& p : agg_part) {
      if (relabel[p] == n) relabel[p] = c++;
      p = relabel[p];
    }
    return {std::move(agg), std::move(agg_part)};
  }

  const LeidenConfig& cfg_;
  Rng& rng_;
  double two_m_ = 0.0;
};

// Splits every community into its connected components (positive-weight
// edges). Splitting disconnected parts never lowers modularity.
inline std::vector<std::size_t> split_disconnected(const WeightedGraph& g, const std::vector<std::size_t>& part) {
  const std::size_t n = g.size();
  std::vector<std::size_t> out(n, n);
  std::size_t next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (out[s] != n) continue;
    out[s] = next;
    stack.push_back(s);
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      for (const auto& [u, w] : g.adj[v]) {
        if (out[u] == n && part[u] == part[s]) {
          out[u] = next;
          stack.push_back(u);
        }
      }
    }
    ++next;
  }
  return out;
}

// Renumbers communities in order of their smallest member index.
inline std::vector<std::size_t> canonical_labels(const std::vector<std::size_t>& part) {
  std::map<std::size_t, std::size_t> relabel;
  std::vector<std::size_t> out(part.size());
  for (std::size_t v = 0; v < part.size(); ++v) {
    const auto [it, inserted] = relabel.emplace(part[v], relabel.size());
    out[v] = it->second;
  }
  return out;
}

}  // namespace detail

namespace detail {

inline std::vector<std::size_t> leiden_run(const WeightedGraph& g, const LeidenConfig& cfg, std::uint64_t seed) {
  std::vector<std::size_t> part(g.size());
  std::iota(part.begin(), part.end(), std::size_t{0});
  Rng rng(seed);
  LeidenRun run(cfg, rng);
  for (std::size_t iter = 0; iter < std::max<std::size_t>(1, cfg.max_iters); ++iter) {
    auto next = canonical_labels(run.pass(g, part));
    if (iter > 0 && next == part) break;
    part = std::move(next);
  }
  return canonical_labels(split_disconnected(g, part));
}

}  // namespace detail

/// Runs Leiden passes from the all-singletons partition until a pass leaves
/// the partition unchanged (or max_iters passes), repeated for `restarts`
/// seeds derived from cfg.seed; the highest modularity wins, earlier runs
/// on ties. Returned labels are canonical: community ids follow the
/// smallest member index, and every community is connected.
inline std::vector<std::size_t> leiden_partition(const WeightedGraph& g, const LeidenConfig& cfg = {}) {
  const std::size_t n = g.size();
  std::vector<std::size_t> best(n);
  std::iota(best.begin(), best.end(), std::size_t{0});
  if (n == 0 || g.total_weight() <= 0.0) return best;
  double best_q = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(1, cfg.restarts); ++r) {
    const auto seed = r == 0 ? cfg.seed : derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
    auto part = detail::leiden_run(g, cfg, seed);
    const double q = modularity(g, part, cfg.resolution);
    if (q > best_q + 1e-12) {
      best_q = q;
      best = std::move(part);
    }
  }
  return best;
}

using ClusterId = std::string;

/// A partition of problem ids. Cluster ids are the smallest member id.
struct Clustering {
  std::map<ProblemId, ClusterId> assignment;
  std::map<ClusterId, std::vector<ProblemId>> clusters;
  double quality = 0.0;  // modularity

  const ClusterId& cluster_of(const ProblemId& id) const {
    const auto it = assignment.find(id);
    if (it == assignment.end()) throw Error(ErrorKind::UnknownProblem, "problem " + id + " is not clustered");
    return it->second;
  }

  static Clustering from_groups(std::vector<std::vector<ProblemId>> groups, double quality) {
    Clustering c;
    c.quality = quality;
    for (auto& members : groups) {
      if (members.empty()) continue;
      std::sort(members.begin(), members.end());
      const ClusterId id = members.front();
      for (const auto& m : members) c.assignment[m] = id;
      c.clusters[id] = std::move(members);
    }
    return c;
  }

  bool operator==(const Clustering& o) const { return assignment == o.assignment && quality == o.quality; }
};

inline WeightedGraph to_weighted_graph(const ProblemGraph& g) {
  const auto& ids = g.nodes();
  std::map<ProblemId, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
  WeightedGraph wg(ids.size());
  for (const auto& [key, w] : g.edges()) wg.add_edge(index.at(key.first), index.at(key.second), w);
  return wg;
}

inline Clustering leiden_cluster(const ProblemGraph& g, const LeidenConfig& cfg = {}) {
  if (g.empty()) throw Error(ErrorKind::InvalidArgument, "cannot cluster an empty graph");
  const auto wg = to_weighted_graph(g);
  const auto part = leiden_partition(wg, cfg);
  std::vector<std::vector<ProblemId>> groups(g.node_count());
  for (std::size_t v = 0; v < part.size(); ++v) groups[part[v]].push_back(g.nodes()[v]);
  return Clustering::from_groups(std::move(groups), modularity(wg, part, cfg.resolution));
}

}  // namespace morer
