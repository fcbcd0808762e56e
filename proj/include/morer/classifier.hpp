#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "morer/er_core.hpp"
#include "morer/error.hpp"
#include "morer/parallel.hpp"
#include "morer/random.hpp"

namespace morer {

struct TreeParams {
  std::size_t max_depth = 12;
  std::size_t min_leaf = 2;
  bool feature_subsample = false;  // sqrt(t) candidate features per node

  bool operator==(const TreeParams&) const = default;
};

struct TreeNode {
  // Internal node when feature >= 0: go left if value <= threshold.
  int feature = -1;
  double threshold = 0.0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  double prob = 0.0;  // leaf match probability (class fraction)

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

/// CART tree with Gini impurity. Node 0 is the root.
struct TreeModel {
  std::vector<TreeNode> nodes;
  std::uint64_t seed = 0;
  TreeParams params;
  std::size_t arity = 0;

  double match_probability(std::span<const double> values) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = values[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[i].prob;
  }

  // Hard vote; a leaf probability of exactly 0.5 counts as a match.
  bool votes_match(std::span<const double> values) const { return match_probability(values) >= 0.5; }

  std::size_t depth() const {
    std::vector<std::size_t> d(nodes.size(), 0);
    std::size_t best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      best = std::max(best, d[i]);
      if (!nodes[i].is_leaf()) d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
    }
    return best;
  }

  bool operator==(const TreeModel&) const = default;
};

namespace detail {

struct LabeledMatrix {
  std::vector<double> values;  // row-major, n x arity
  std::vector<char> labels;
  std::size_t arity = 0;

  std::size_t rows() const { return labels.size(); }
  double at(std::size_t row, std::size_t f) const { return values[row * arity + f]; }
};

inline LabeledMatrix to_matrix(std::span<const FeatureVector> data, std::size_t arity) {
  LabeledMatrix m;
  m.arity = arity;
  m.values.reserve(data.size() * arity);
  m.labels.reserve(data.size());
  for (const auto& w : data) {
    if (!w.label) throw Error(ErrorKind::InvalidArgument, "training vector without label", pair_json(w.left, w.right));
    if (w.values.size() != arity) {
      throw Error(ErrorKind::ArityMismatch, "training vector arity differs",
                  {{"expected", arity}, {"got", w.values.size()}});
    }
    m.values.insert(m.values.end(), w.values.begin(), w.values.end());
    m.labels.push_back(*w.label ? 1 : 0);
  }
  return m;
}

class TreeBuilder {
 public:
  TreeBuilder(const LabeledMatrix& data, const TreeParams& params, std::uint64_t seed)
      : data_(data), params_(params), rng_(seed) {}

  std::vector<TreeNode> build(std::vector<std::size_t> rows) {
    nodes_.clear();
    grow(rows, 0);
    return std::move(nodes_);
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double impurity = 0.0;  // weighted child Gini, lower is better
  };

  static double gini(double pos, double n) {
    if (n <= 0.0) return 0.0;
    const double p = pos / n;
    return 2.0 * p * (1.0 - p);
  }

  std::vector<std::size_t> candidate_features() {
    std::vector<std::size_t> feats(data_.arity);
    std::iota(feats.begin(), feats.end(), std::size_t{0});
    if (params_.feature_subsample && data_.arity > 1) {
      const auto take = static_cast<std::size_t>(
          std::max(1.0, std::floor(std::sqrt(static_cast<double>(data_.arity)))));
      rng_.shuffle(std::span<std::size_t>(feats));
      feats.resize(take);
      std::sort(feats.begin(), feats.end());
    }
    return feats;
  }

  std::optional<Split> best_split(const std::vector<std::size_t>& rows, double positives) {
    const double n = static_cast<double>(rows.size());
    std::optional<Split> best;
    double best_impurity = gini(positives, n) * n;
    std::vector<std::size_t> sorted = rows;
    for (auto f : candidate_features()) {
      std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
        const double va = data_.at(a, f), vb = data_.at(b, f);
        return va < vb || (va == vb && a < b);
      });
      double left_pos = 0.0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        left_pos += data_.labels[sorted[i]];
        const double v = data_.at(sorted[i], f);
        const double next = data_.at(sorted[i + 1], f);
        if (v == next) continue;
        const std::size_t n_left = i + 1;
        const std::size_t n_right = sorted.size() - n_left;
        if (n_left < params_.min_leaf || n_right < params_.min_leaf) continue;
        const double nl = static_cast<double>(n_left), nr = static_cast<double>(n_right);
        const double impurity = gini(left_pos, nl) * nl + gini(positives - left_pos, nr) * nr;
        if (impurity < best_impurity - 1e-12) {
          best_impurity = impurity;
          best = Split{static_cast<int>(f), v + (next - v) / 2.0, impurity};
        }
      }
    }
    return best;
  }

  std::uint32_t grow(std::vector<std::size_t>& rows, std::size_t depth) {
    const auto index = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    double positives = 0.0;
    for (auto r : rows) positives += data_.labels[r];
    const double n = static_cast<double>(rows.size());
    nodes_[index].prob = positives / n;

    const bool pure = positives == 0.0 || positives == n;
    if (pure || depth >= params_.max_depth || rows.size() < 2 * params_.min_leaf) return index;
    const auto split = best_split(rows, positives);
    if (!split) return index;

    std::vector<std::size_t> left, right;
    for (auto r : rows) {
      (data_.at(r, static_cast<std::size_t>(split->feature)) <= split->threshold ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    nodes_[index].feature = split->feature;
    nodes_[index].threshold = split->threshold;
    nodes_[index].prob = 0.0;
    const auto l = grow(left, depth + 1);
    const auto r = grow(right, depth + 1);
    nodes_[index].left = l;
    nodes_[index].right = r;
    return index;
  }

  const LabeledMatrix& data_;
  const TreeParams& params_;
  Rng rng_;
  std::vector<TreeNode> nodes_;
};

inline TreeModel train_tree_rows(const LabeledMatrix& data, std::vector<std::size_t> rows, std::uint64_t seed,
                                 const TreeParams& params) {
  TreeModel tree;
  tree.seed = seed;
  tree.params = params;
  tree.arity = data.arity;
  detail::TreeBuilder builder(data, params, seed);
  tree.nodes = builder.build(std::move(rows));
  return tree;
}

}  // namespace detail

inline TreeModel train_tree(std::span<const FeatureVector> data, std::size_t arity, std::uint64_t seed,
                            const TreeParams& params = {}) {
  if (data.empty()) throw Error(ErrorKind::EmptyTrainingSet, "cannot train a tree on no data");
  if (params.min_leaf == 0) throw Error(ErrorKind::InvalidArgument, "min_leaf must be at least 1");
  const auto m = detail::to_matrix(data, arity);
  std::vector<std::size_t> rows(m.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return detail::train_tree_rows(m, std::move(rows), seed, params);
}

/// Row indices of an n-sized resample with replacement.
inline std::vector<std::size_t> bootstrap_rows(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> rows(n);
  for (auto& r : rows) r = static_cast<std::size_t>(rng.below(n));
  std::sort(rows.begin(), rows.end());
  return rows;
}

inline std::uint64_t tree_seed(std::uint64_t ensemble_seed, std::size_t index) {
  return derive_seed(ensemble_seed, static_cast<std::uint64_t>(index));
}

/// k bagged trees. Tree i is trained on bootstrap_rows(n, tree_seed(seed, i)).
struct EnsembleModel {
  std::vector<TreeModel> trees;
  std::uint64_t seed = 0;
  std::size_t arity = 0;

  std::size_t k() const { return trees.size(); }

  std::size_t match_votes(std::span<const double> values) const {
    std::size_t votes = 0;
    for (const auto& t : trees) votes += t.votes_match(values) ? 1 : 0;
    return votes;
  }

  bool operator==(const EnsembleModel&) const = default;
};

inline void check_prediction_input(const EnsembleModel& model, std::span<const double> values) {
  if (values.size() != model.arity) {
    throw Error(ErrorKind::ArityMismatch, "vector arity differs from model arity",
                {{"expected", model.arity}, {"got", values.size()}});
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::InvalidValue, "non-finite feature value");
  }
}

/// Fraction of trees voting match.
inline double predict_match_fraction(const EnsembleModel& model, std::span<const double> values) {
  check_prediction_input(model, values);
  return static_cast<double>(model.match_votes(values)) / static_cast<double>(model.k());
}

inline double predict_match_fraction(const EnsembleModel& model, const FeatureVector& w) {
  return predict_match_fraction(model, std::span<const double>(w.values));
}

/// Match iff at least half of the trees vote match.
inline bool classify(const EnsembleModel& model, const FeatureVector& w) {
  return predict_match_fraction(model, w) >= 0.5;
}

struct EnsembleOptions {
  std::size_t k = 100;
  TreeParams tree;
  unsigned threads = 1;
  bool allow_single_class = false;
};

inline EnsembleModel train_ensemble(std::span<const FeatureVector> data, std::size_t arity, std::uint64_t seed,
                                    const EnsembleOptions& opts = {}) {
  if (data.empty()) throw Error(ErrorKind::EmptyTrainingSet, "cannot train an ensemble on no data");
  if (opts.k == 0) throw Error(ErrorKind::InvalidArgument, "ensemble size k must be at least 1");
  const auto m = detail::to_matrix(data, arity);
  const auto positives = std::count(m.labels.begin(), m.labels.end(), 1);
  if (!opts.allow_single_class && (positives == 0 || positives == static_cast<long>(m.rows()))) {
    throw Error(ErrorKind::SingleClassTrainingSet, "training data contains a single class",
                {{"size", m.rows()}, {"matches", positives}});
  }
  EnsembleModel model;
  model.seed = seed;
  model.arity = arity;
  model.trees.resize(opts.k);
  parallel_for(opts.k, opts.threads, [&](std::size_t i) {
    const auto s = tree_seed(seed, i);
    model.trees[i] = detail::train_tree_rows(m, bootstrap_rows(m.rows(), s), s, opts.tree);
  });
  return model;
}

// ---------------------------------------------------------------------------
// Text format
//
//   MORER-ENSEMBLE 1
//   k <trees>
//   seed <seed>
//   arity <t>
//   T <index> <node count> <tree seed> <max_depth> <min_leaf> <subsample>
//   N <feature> <threshold> <left> <right>
//   L <probability>
//   ...
//   END
//
// Doubles are written in shortest round-trip form, so read(write(m)) == m.

inline std::string write_ensemble(const EnsembleModel& model) {
  std::string out = "MORER-ENSEMBLE 1\n";
  out += "k " + std::to_string(model.k()) + "\n";
  out += "seed " + std::to_string(model.seed) + "\n";
  out += "arity " + std::to_string(model.arity) + "\n";
  for (std::size_t i = 0; i < model.trees.size(); ++i) {
    const auto& t = model.trees[i];
    out += "T " + std::to_string(i) + " " + std::to_string(t.nodes.size()) + " " + std::to_string(t.seed) + " " +
           std::to_string(t.params.max_depth) + " " + std::to_string(t.params.min_leaf) + " " +
           (t.params.feature_subsample ? "1" : "0") + "\n";
    for (const auto& n : t.nodes) {
      if (n.is_leaf()) {
        out += "L " + detail::format_double(n.prob) + "\n";
      } else {
        out += "N " + std::to_string(n.feature) + " " + detail::format_double(n.threshold) + " " +
               std::to_string(n.left) + " " + std::to_string(n.right) + "\n";
      }
    }
  }
  out += "END\n";
  return out;
}

inline EnsembleModel read_ensemble(const std::string& text, const std::string& section = "model") {
  auto corrupt = [&](const std::string& what) {
    return Error(ErrorKind::CorruptManifest, section + ": " + what, {{"section", section}});
  };
  std::istringstream in(text);
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "MORER-ENSEMBLE" || version != 1) throw corrupt("bad header");
  std::size_t k = 0;
  EnsembleModel model;
  if (!(in >> tag >> k) || tag != "k" || k == 0) throw corrupt("missing tree count");
  if (!(in >> tag >> model.seed) || tag != "seed") throw corrupt("missing seed");
  if (!(in >> tag >> model.arity) || tag != "arity") throw corrupt("missing arity");
  model.trees.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    auto& t = model.trees[i];
    std::size_t index = 0, count = 0;
    int subsample = 0;
    if (!(in >> tag >> index >> count >> t.seed >> t.params.max_depth >> t.params.min_leaf >> subsample) ||
        tag != "T" || index != i || count == 0) {
      throw corrupt("truncated or malformed tree " + std::to_string(i));
    }
    t.params.feature_subsample = subsample != 0;
    t.arity = model.arity;
    t.nodes.resize(count);
    for (std::size_t j = 0; j < count; ++j) {
      auto& n = t.nodes[j];
      std::string a, b;
      if (!(in >> tag)) throw corrupt("truncated tree " + std::to_string(i));
      if (tag == "L") {
        if (!(in >> a)) throw corrupt("truncated leaf");
        const auto p = detail::parse_double(a);
        if (!p || *p < 0.0 || *p > 1.0) throw corrupt("bad leaf probability");
        n.prob = *p;
      } else if (tag == "N") {
        if (!(in >> n.feature >> b >> n.left >> n.right)) throw corrupt("truncated node");
        const auto thr = detail::parse_double(b);
        if (!thr || n.feature < 0 || static_cast<std::size_t>(n.feature) >= model.arity || n.left >= count ||
            n.right >= count || n.left <= j || n.right <= j) {
          throw corrupt("bad split node");
        }
        n.threshold = *thr;
      } else {
        throw corrupt("unknown record '" + tag + "'");
      }
    }
  }
  if (!(in >> tag) || tag != "END") throw corrupt("missing END marker");
  return model;
}

}  // namespace morer
