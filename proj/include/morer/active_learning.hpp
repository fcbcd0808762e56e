#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "morer/classifier.hpp"
#include "morer/er_core.hpp"
#include "morer/error.hpp"
#include "morer/leiden.hpp"
#include "morer/problem_graph.hpp"
#include "morer/random.hpp"

namespace morer {

// ---------------------------------------------------------------------------
// Budget distribution

struct BudgetPlan {
  std::size_t b_tot = 0;
  std::size_t b_min = 0;
  std::map<ClusterId, std::size_t> per_cluster;
  // (singleton cluster id, host cluster id) in merge order; ids as before merging.
  std::vector<std::pair<ClusterId, ClusterId>> merged_singletons;
  bool merge_branch = false;  // |C_P| * b_min > b_tot held on entry
  Clustering clustering;      // clustering after merges

  std::size_t total() const {
    std::size_t s = 0;
    for (const auto& [id, b] : per_cluster) s += b;
    return s;
  }
};

/// Mean sim_p between `problem` and the members of `host`; 0 for missing edges.
inline double mean_similarity(const ProblemGraph& g, const ProblemId& problem, const std::vector<ProblemId>& host) {
  if (host.empty()) return 0.0;
  double s = 0.0;
  for (const auto& m : host) s += g.weight(problem, m).value_or(0.0);
  return s / static_cast<double>(host.size());
}

namespace detail {

// floor(a * b * c / (d * e)) without intermediate rounding.
inline std::size_t floor_ratio(std::size_t a, std::size_t b, std::size_t c, std::size_t d, std::size_t e) {
  __extension__ using u128 = unsigned __int128;
  const u128 num = static_cast<u128>(a) * b * c;
  const u128 den = static_cast<u128>(d) * e;
  return static_cast<std::size_t>(num / den);
}

// Distributes `group_problems / total_problems` of b_rem over `ids`
// proportionally to vector counts. Flooring leftovers within the group go to
// its largest cluster (ties: lower id).
inline void distribute(const std::vector<ClusterId>& ids, const std::map<ClusterId, std::size_t>& totals,
                       std::size_t group_problems, std::size_t total_problems, std::size_t b_rem,
                       std::size_t b_min, std::map<ClusterId, std::size_t>& out) {
  if (ids.empty()) return;
  std::size_t group_total = 0;
  for (const auto& id : ids) group_total += totals.at(id);
  const std::size_t group_share = floor_ratio(b_rem, group_problems, 1, total_problems, 1);
  std::size_t assigned = 0;
  for (const auto& id : ids) {
    const std::size_t extra =
        group_total == 0 ? 0 : floor_ratio(totals.at(id), b_rem, group_problems, group_total, total_problems);
    out[id] = b_min + extra;
    assigned += extra;
  }
  const ClusterId* largest = &ids.front();
  for (const auto& id : ids)
    if (totals.at(id) > totals.at(*largest)) largest = &id;
  if (group_share > assigned) out[*largest] += group_share - assigned;
}

}  // namespace detail

/// Splits b_tot over clusters: every cluster gets b_min, the remainder goes
/// to non-singleton and singleton clusters in proportion to their problem
/// counts, and within each group in proportion to vector counts. If
/// |C_P| * b_min > b_tot, singletons (largest first) are merged into the
/// non-singleton cluster they are most similar to until the budget fits.
inline BudgetPlan allocate_budget(const Clustering& clustering, const std::map<ProblemId, std::size_t>& problem_sizes,
                                  std::size_t b_tot, std::size_t b_min, const ProblemGraph* graph = nullptr) {
  if (b_tot == 0 || b_min == 0) {
    throw Error(ErrorKind::InvalidArgument, "b_tot and b_min must be positive", {{"b_tot", b_tot}, {"b_min", b_min}});
  }
  if (clustering.clusters.empty()) throw Error(ErrorKind::InvalidArgument, "no clusters to budget");
  BudgetPlan plan;
  plan.b_tot = b_tot;
  plan.b_min = b_min;

  std::map<ClusterId, std::vector<ProblemId>> groups = clustering.clusters;
  auto vector_total = [&](const std::vector<ProblemId>& members) {
    std::size_t n = 0;
    for (const auto& m : members) n += problem_sizes.at(m);
    return n;
  };

  plan.merge_branch = groups.size() * b_min > b_tot;
  if (plan.merge_branch) {
    std::vector<ClusterId> singletons, hosts;
    for (const auto& [id, members] : groups) (members.size() == 1 ? singletons : hosts).push_back(id);
    std::stable_sort(singletons.begin(), singletons.end(), [&](const ClusterId& a, const ClusterId& b) {
      return vector_total(groups.at(a)) > vector_total(groups.at(b));
    });
    for (const auto& s : singletons) {
      if (groups.size() * b_min <= b_tot || hosts.empty()) break;
      const ProblemId& problem = groups.at(s).front();
      const ClusterId* best = &hosts.front();
      double best_sim = -1.0;
      for (const auto& h : hosts) {
        const double sim = graph ? mean_similarity(*graph, problem, groups.at(h)) : 0.0;
        if (sim > best_sim) {
          best_sim = sim;
          best = &h;
        }
      }
      groups.at(*best).push_back(problem);
      groups.erase(s);
      plan.merged_singletons.emplace_back(s, *best);
    }
    if (groups.size() * b_min > b_tot) {
      throw Error(ErrorKind::InfeasibleBudget,
                  "b_tot=" + std::to_string(b_tot) + " cannot give b_min=" + std::to_string(b_min) + " to " +
                      std::to_string(groups.size()) + " clusters",
                  {{"b_tot", b_tot}, {"b_min", b_min}, {"clusters", groups.size()}});
    }
  }

  std::vector<std::vector<ProblemId>> member_lists;
  for (auto& [id, members] : groups) member_lists.push_back(members);
  plan.clustering = Clustering::from_groups(std::move(member_lists), clustering.quality);

  const auto& merged = plan.clustering.clusters;
  std::size_t total_problems = 0, ns_problems = 0, s_problems = 0;
  std::vector<ClusterId> ns_ids, s_ids;
  std::map<ClusterId, std::size_t> totals;
  for (const auto& [id, members] : merged) {
    total_problems += members.size();
    totals[id] = vector_total(members);
    if (members.size() > 1) {
      ns_ids.push_back(id);
      ns_problems += members.size();
    } else {
      s_ids.push_back(id);
      s_problems += 1;
    }
  }
  const std::size_t b_rem = b_tot - b_min * merged.size();
  detail::distribute(ns_ids, totals, ns_problems, total_problems, b_rem, b_min, plan.per_cluster);
  detail::distribute(s_ids, totals, s_problems, total_problems, b_rem, b_min, plan.per_cluster);
  return plan;
}

// ---------------------------------------------------------------------------
// Informativeness

/// Bootstrap disagreement p(1 - p) with p = votes / k.
inline double uncertainty(std::size_t votes_match, std::size_t k) {
  if (k == 0 || votes_match > k) {
    throw Error(ErrorKind::VoteOutOfRange, "votes must lie in [0, k]", {{"votes", votes_match}, {"k", k}});
  }
  const double p = static_cast<double>(votes_match) / static_cast<double>(k);
  return p * (1.0 - p);
}

enum class UniquenessMode {
  Idf,      // ln(|C_P| / |C_P|r|) >= 0
  Literal,  // ln(|C_P|r| / |C_P|) <= 0, the printed orientation
  Off,
};

inline std::string_view to_string(UniquenessMode m) {
  switch (m) {
    case UniquenessMode::Idf: return "idf";
    case UniquenessMode::Literal: return "literal";
    case UniquenessMode::Off: return "off";
  }
  return "idf";
}

inline UniquenessMode parse_uniqueness_mode(std::string_view s) {
  if (s == "idf") return UniquenessMode::Idf;
  if (s == "literal") return UniquenessMode::Literal;
  if (s == "off") return UniquenessMode::Off;
  throw Error(ErrorKind::InvalidArgument, "unknown uniqueness mode '" + std::string(s) + "'");
}

/// Clusters in which each record occurs.
using RecordMembership = std::map<RecordRef, std::set<ClusterId>>;

inline void add_membership(RecordMembership& m, const ERProblem& p, const ClusterId& cluster) {
  for (const auto& w : p.vectors) {
    m[w.left].insert(cluster);
    m[w.right].insert(cluster);
  }
}

inline double record_score(const RecordRef& r, const RecordMembership& membership, std::size_t total_clusters,
                           UniquenessMode mode = UniquenessMode::Idf) {
  const auto it = membership.find(r);
  const double in = static_cast<double>(std::max<std::size_t>(1, it == membership.end() ? 0 : it->second.size()));
  const double total = static_cast<double>(total_clusters);
  switch (mode) {
    case UniquenessMode::Idf: return std::log(total / in);
    case UniquenessMode::Literal: return std::log(in / total);
    case UniquenessMode::Off: return 0.0;
  }
  return 0.0;
}

/// Mean record score of the two records of w.
inline double uniqueness_score(const FeatureVector& w, const RecordMembership& membership, std::size_t total_clusters,
                               UniquenessMode mode = UniquenessMode::Idf) {
  if (total_clusters == 0) throw Error(ErrorKind::InvalidArgument, "total_clusters must be at least 1");
  return (record_score(w.left, membership, total_clusters, mode) +
          record_score(w.right, membership, total_clusters, mode)) /
         2.0;
}

// ---------------------------------------------------------------------------
// Oracle

/// Labels record pairs from ground truth and counts every query.
class Oracle {
 public:
  explicit Oracle(const GroundTruth& truth) : truth_(&truth) {}

  bool query(const FeatureVector& w) {
    const bool label = truth_->label(w.left, w.right);
    ++queries_;
    return label;
  }

  std::size_t queries() const { return queries_; }

 private:
  const GroundTruth* truth_;
  std::size_t queries_ = 0;
};

// ---------------------------------------------------------------------------
// Bootstrap active learning

enum class ALMode { Bootstrap, Supervised };

inline std::string_view to_string(ALMode m) { return m == ALMode::Bootstrap ? "bootstrap" : "supervised"; }

inline ALMode parse_al_mode(std::string_view s) {
  if (s == "bootstrap") return ALMode::Bootstrap;
  if (s == "supervised") return ALMode::Supervised;
  throw Error(ErrorKind::InvalidArgument, "unknown AL mode '" + std::string(s) + "'");
}

struct ALConfig {
  ALMode mode = ALMode::Bootstrap;
  std::size_t batch = 10;
  EnsembleOptions ensemble;  // k committee members; also the final model
  UniquenessMode uniqueness = UniquenessMode::Idf;
};

struct ALResult {
  std::vector<FeatureVector> labeled;  // P_C: all labeled vectors, canonical order
  EnsembleModel model;
  std::size_t spent = 0;                 // oracle queries issued by this run
  std::size_t seed_size = 0;             // labels acquired in the seed phase
  std::vector<std::size_t> round_sizes;  // labels acquired per uncertainty round
  bool single_class = false;             // only one class was ever observed
  std::set<ProblemId> informed;          // problems that contributed new labels
};

inline ProblemId problem_of(const FeatureVector& w) {
  return problem_id(SourcePair::normalized(w.left.source_id, w.right.source_id));
}

namespace detail {

inline bool canonical_less(const FeatureVector& a, const FeatureVector& b) {
  return std::tie(a.left, a.right) < std::tie(b.left, b.right);
}

inline std::pair<bool, bool> classes_present(std::span<const FeatureVector> labeled) {
  bool pos = false, neg = false;
  for (const auto& w : labeled) (*w.label ? pos : neg) = true;
  return {pos, neg};
}

inline double squared_distance(const FeatureVector& a, const FeatureVector& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) d += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
  return d;
}

inline double mean_value(const FeatureVector& w) {
  double s = 0.0;
  for (double v : w.values) s += v;
  return w.values.empty() ? 0.0 : s / static_cast<double>(w.values.size());
}

struct PairKeyHash {
  std::size_t operator()(const std::pair<RecordRef, RecordRef>& k) const {
    return std::hash<std::string>()(k.first.source_id + '\x1f' + k.first.record_id + '\x1f' + k.second.source_id +
                                    '\x1f' + k.second.record_id);
  }
};

class ALRun {
 public:
  ALRun(std::span<const FeatureVector> pool, std::size_t arity, Oracle& oracle, std::uint64_t seed,
        const ALConfig& cfg)
      : pool_(pool), arity_(arity), oracle_(oracle), seed_(seed), cfg_(cfg) {}

  ALResult run(std::size_t budget, std::vector<FeatureVector> initial, const RecordMembership* membership,
               std::size_t total_clusters) {
    ALResult result;
    labeled_ = std::move(initial);
    std::unordered_set<std::pair<RecordRef, RecordRef>, PairKeyHash> known;
    for (const auto& w : labeled_) known.insert({w.left, w.right});

    // Remaining pool in a seeded random order; the order breaks score ties.
    for (std::size_t i = 0; i < pool_.size(); ++i)
      if (!known.count({pool_[i].left, pool_[i].right})) remaining_.push_back(i);
    Rng rng(derive_seed(seed_, "pool-order"));
    rng.shuffle(std::span<std::size_t>(remaining_));

    const std::size_t target = std::min(budget, remaining_.size());
    const std::size_t seed_n = 2 * cfg_.batch;
    auto [pos, neg] = classes_present(labeled_);
    const bool exhaustive = target == remaining_.size();

    if (!(pos && neg)) {
      if (!exhaustive && budget < seed_n + cfg_.batch) {
        throw Error(ErrorKind::BudgetExhaustedAtSeed,
                    "budget " + std::to_string(budget) + " cannot cover the seed set plus one batch",
                    {{"budget", budget}, {"seed_size", seed_n}, {"batch", cfg_.batch}});
      }
      seed_phase(std::min(seed_n, target), target);
      result.seed_size = spent_;
    }
    std::tie(pos, neg) = classes_present(labeled_);

    std::vector<double> uniq(pool_.size(), 0.0);
    if (membership && cfg_.uniqueness != UniquenessMode::Off && total_clusters > 0) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (auto i : remaining_) {
        uniq[i] = uniqueness_score(pool_[i], *membership, total_clusters, cfg_.uniqueness);
        lo = std::min(lo, uniq[i]);
        hi = std::max(hi, uniq[i]);
      }
      for (auto i : remaining_) uniq[i] = hi > lo ? (uniq[i] - lo) / (hi - lo) : 0.0;
    }

    std::size_t round = 0;
    while (spent_ < target && !remaining_.empty()) {
      const std::size_t take = std::min(cfg_.batch, target - spent_);
      std::vector<FeatureVector> sorted = labeled_;
      std::sort(sorted.begin(), sorted.end(), canonical_less);
      auto opts = cfg_.ensemble;
      opts.allow_single_class = true;
      const auto committee = train_ensemble(sorted, arity_, derive_seed(derive_seed(seed_, "round"), round), opts);
      std::vector<std::pair<double, std::size_t>> scored;  // (score, rank in remaining_)
      scored.reserve(remaining_.size());
      for (std::size_t r = 0; r < remaining_.size(); ++r) {
        const auto& w = pool_[remaining_[r]];
        const double unc = uncertainty(committee.match_votes(w.values), committee.k());
        scored.emplace_back(unc * (1.0 + uniq[remaining_[r]]), r);
      }
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                        [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
      std::vector<std::size_t> chosen;
      for (std::size_t i = 0; i < take; ++i) chosen.push_back(scored[i].second);
      label_ranks(chosen);
      result.round_sizes.push_back(take);
      ++round;
    }

    std::sort(labeled_.begin(), labeled_.end(), canonical_less);
    std::tie(pos, neg) = classes_present(labeled_);
    result.single_class = !(pos && neg);
    auto opts = cfg_.ensemble;
    opts.allow_single_class = true;
    result.model = train_ensemble(labeled_, arity_, derive_seed(seed_, "final"), opts);
    result.labeled = std::move(labeled_);
    result.spent = spent_;
    result.informed = std::move(informed_);
    return result;
  }

 private:
  void label_index(std::size_t pool_index) {
    FeatureVector w = pool_[pool_index];
    w.label = oracle_.query(w);
    informed_.insert(problem_of(w));
    labeled_.push_back(std::move(w));
    ++spent_;
  }

  // Labels the given positions of remaining_ and removes them.
  void label_ranks(std::vector<std::size_t> ranks) {
    std::sort(ranks.begin(), ranks.end());
    for (auto r : ranks) label_index(remaining_[r]);
    for (auto it = ranks.rbegin(); it != ranks.rend(); ++it)
      remaining_.erase(remaining_.begin() + static_cast<std::ptrdiff_t>(*it));
  }

  // Farthest-point sampling for the first `count` labels; then, while only
  // one class is known, alternately label the remaining vectors with the
  // highest and lowest mean similarity, up to 4 * batch labels in total.
  void seed_phase(std::size_t count, std::size_t target) {
    if (count == 0 || remaining_.empty()) return;
    std::vector<double> min_dist(remaining_.size(), std::numeric_limits<double>::infinity());
    std::vector<char> picked(remaining_.size(), 0);
    std::vector<std::size_t> chosen{0};
    picked[0] = 1;
    while (chosen.size() < count && chosen.size() < remaining_.size()) {
      const auto& last = pool_[remaining_[chosen.back()]];
      std::size_t best = remaining_.size();
      double best_d = -1.0;
      for (std::size_t r = 0; r < remaining_.size(); ++r) {
        if (picked[r]) continue;
        min_dist[r] = std::min(min_dist[r], squared_distance(pool_[remaining_[r]], last));
        if (min_dist[r] > best_d) {
          best_d = min_dist[r];
          best = r;
        }
      }
      picked[best] = 1;
      chosen.push_back(best);
    }
    label_ranks(chosen);

    const std::size_t cap = std::min(target, 4 * cfg_.batch);
    bool take_high = true;
    for (;;) {
      const auto [pos, neg] = classes_present(labeled_);
      if ((pos && neg) || spent_ >= cap || remaining_.empty()) break;
      std::size_t best = 0;
      for (std::size_t r = 1; r < remaining_.size(); ++r) {
        const double m = mean_value(pool_[remaining_[r]]);
        const double b = mean_value(pool_[remaining_[best]]);
        if (take_high ? m > b : m < b) best = r;
      }
      label_ranks({best});
      take_high = !take_high;
    }
  }

  std::span<const FeatureVector> pool_;
  std::size_t arity_;
  Oracle& oracle_;
  std::uint64_t seed_;
  const ALConfig& cfg_;
  std::vector<FeatureVector> labeled_;
  std::vector<std::size_t> remaining_;
  std::set<ProblemId> informed_;
  std::size_t spent_ = 0;
};

}  // namespace detail

/// Bootstrap-uncertainty active learning over `pool`. Seeds with
/// farthest-point samples (unless `initial` already holds both classes),
/// then repeatedly trains a k-tree committee, scores the remaining pool by
/// unc(w) * (1 + s_norm(w)), and labels the top `batch` until `budget`
/// labels were bought or the pool is exhausted. The final model is trained
/// on `initial` plus every acquired label.
inline ALResult run_bootstrap_al(std::span<const FeatureVector> pool, std::size_t arity, std::size_t budget,
                                 Oracle& oracle, std::uint64_t seed, const ALConfig& cfg,
                                 const RecordMembership* membership = nullptr, std::size_t total_clusters = 0,
                                 std::vector<FeatureVector> initial = {}) {
  if (pool.empty() && initial.empty()) throw Error(ErrorKind::EmptyTrainingSet, "active learning pool is empty");
  if (cfg.batch == 0) throw Error(ErrorKind::InvalidArgument, "batch must be at least 1");
  detail::ALRun run(pool, arity, oracle, seed, cfg);
  return run.run(budget, std::move(initial), membership, total_clusters);
}

/// Labels the whole pool and trains on it.
inline ALResult run_supervised(std::span<const FeatureVector> pool, std::size_t arity, Oracle& oracle,
                               std::uint64_t seed, const ALConfig& cfg, std::vector<FeatureVector> initial = {}) {
  if (pool.empty() && initial.empty()) throw Error(ErrorKind::EmptyTrainingSet, "training pool is empty");
  ALResult result;
  std::unordered_set<std::pair<RecordRef, RecordRef>, detail::PairKeyHash> known;
  for (const auto& w : initial) known.insert({w.left, w.right});
  result.labeled = std::move(initial);
  for (const auto& w : pool) {
    if (known.count({w.left, w.right})) continue;
    FeatureVector x = w;
    x.label = oracle.query(x);
    result.informed.insert(problem_of(x));
    result.labeled.push_back(std::move(x));
    ++result.spent;
  }
  std::sort(result.labeled.begin(), result.labeled.end(), detail::canonical_less);
  const auto [pos, neg] = detail::classes_present(result.labeled);
  result.single_class = !(pos && neg);
  auto opts = cfg.ensemble;
  opts.allow_single_class = true;
  result.model = train_ensemble(result.labeled, arity, derive_seed(seed, "final"), opts);
  return result;
}

inline ALResult generate_model(std::span<const FeatureVector> pool, std::size_t arity, std::size_t budget,
                               Oracle& oracle, std::uint64_t seed, const ALConfig& cfg,
                               const RecordMembership* membership = nullptr, std::size_t total_clusters = 0,
                               std::vector<FeatureVector> initial = {}) {
  if (cfg.mode == ALMode::Supervised) return run_supervised(pool, arity, oracle, seed, cfg, std::move(initial));
  return run_bootstrap_al(pool, arity, budget, oracle, seed, cfg, membership, total_clusters, std::move(initial));
}

}  // namespace morer
