#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "morer/dist_analysis.hpp"
#include "morer/er_core.hpp"
#include "morer/error.hpp"
#include "morer/parallel.hpp"

namespace morer {

struct GraphConfig {
  AnalysisConfig analysis;
  double min_edge_sim = 0.0;  // edges with sim_p below this are dropped
  unsigned threads = 1;
};

using EdgeKey = std::pair<ProblemId, ProblemId>;  // first < second

inline EdgeKey edge_key(const ProblemId& a, const ProblemId& b) { return a < b ? EdgeKey{a, b} : EdgeKey{b, a}; }

/// Weighted undirected graph over ER problems; edge weight = sim_p. Each node
/// keeps the problem's feature profile so new problems can be connected
/// without reloading the old ones.
class ProblemGraph {
 public:
  explicit ProblemGraph(GraphConfig cfg = {}) : cfg_(std::move(cfg)) {}

  const GraphConfig& config() const { return cfg_; }
  const std::vector<ProblemId>& nodes() const { return nodes_; }
  const std::map<EdgeKey, double>& edges() const { return edges_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  bool empty() const { return nodes_.empty(); }

  bool contains(const ProblemId& id) const { return profiles_.count(id) != 0; }

  std::optional<double> weight(const ProblemId& a, const ProblemId& b) const {
    const auto it = edges_.find(edge_key(a, b));
    if (it == edges_.end()) return std::nullopt;
    return it->second;
  }

  const ProblemProfile& profile(const ProblemId& id) const {
    const auto it = profiles_.find(id);
    if (it == profiles_.end()) throw Error(ErrorKind::UnknownProblem, "problem " + id + " is not in the graph");
    return *it->second;
  }

  std::optional<std::size_t> arity() const {
    if (profiles_.empty()) return std::nullopt;
    return profiles_.begin()->second->arity();
  }

  /// Adds a node without edges. Used by insert_problem and by archive loading.
  void add_node(const ProblemId& id, std::shared_ptr<const ProblemProfile> profile) {
    if (contains(id)) throw Error(ErrorKind::DuplicateProblem, "problem " + id + " already in graph", {{"problem", id}});
    if (auto t = arity(); t && *t != profile->arity()) {
      throw Error(ErrorKind::ArityMismatch, "problem " + id + " has a different arity",
                  {{"problem", id}, {"expected", *t}, {"got", profile->arity()}});
    }
    nodes_.insert(std::upper_bound(nodes_.begin(), nodes_.end(), id), id);
    profiles_.emplace(id, std::move(profile));
  }

  void set_edge(const ProblemId& a, const ProblemId& b, double w) {
    if (a == b) throw Error(ErrorKind::InvalidArgument, "self-loops are not allowed", {{"problem", a}});
    if (!contains(a) || !contains(b)) throw Error(ErrorKind::UnknownProblem, "edge endpoint missing from graph");
    if (!(w >= 0.0 && w <= 1.0)) throw Error(ErrorKind::ValueOutOfRange, "edge weight outside [0,1]", {{"value", w}});
    edges_[edge_key(a, b)] = w;
  }

  void remove_node(const ProblemId& id) {
    if (!contains(id)) throw Error(ErrorKind::UnknownProblem, "problem " + id + " is not in the graph");
    profiles_.erase(id);
    nodes_.erase(std::lower_bound(nodes_.begin(), nodes_.end(), id));
    std::erase_if(edges_, [&](const auto& kv) { return kv.first.first == id || kv.first.second == id; });
  }

  bool operator==(const ProblemGraph& o) const { return nodes_ == o.nodes_ && edges_ == o.edges_; }

 private:
  GraphConfig cfg_;
  std::vector<ProblemId> nodes_;
  std::map<ProblemId, std::shared_ptr<const ProblemProfile>> profiles_;
  std::map<EdgeKey, double> edges_;
};

namespace detail {

// Computes sim_p for every (new, existing) node pair and keeps those that
// pass the threshold.
inline void connect(ProblemGraph& g, const std::vector<std::pair<ProblemId, ProblemId>>& pairs) {
  const auto& cfg = g.config();
  std::vector<double> sims(pairs.size());
  parallel_for(pairs.size(), cfg.threads, [&](std::size_t i) {
    sims[i] = problem_similarity(g.profile(pairs[i].first), g.profile(pairs[i].second), cfg.analysis).sim_p;
  });
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (sims[i] >= cfg.min_edge_sim) g.set_edge(pairs[i].first, pairs[i].second, sims[i]);
  }
}

}  // namespace detail

inline ProblemGraph build_graph(const std::vector<ERProblem>& problems, GraphConfig cfg = {}) {
  if (problems.empty()) throw Error(ErrorKind::InvalidArgument, "graph needs at least one problem");
  validate_arity(problems);
  ProblemGraph g(std::move(cfg));
  for (const auto& p : problems) g.add_node(p.id(), std::make_shared<const ProblemProfile>(make_profile(p)));
  std::vector<std::pair<ProblemId, ProblemId>> pairs;
  const auto& ids = g.nodes();
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = i + 1; j < ids.size(); ++j) pairs.emplace_back(ids[i], ids[j]);
  detail::connect(g, pairs);
  return g;
}

/// Adds `profile` as node `id` and connects it to every existing node.
/// Existing edges are left untouched.
inline void insert_problem(ProblemGraph& g, const ProblemId& id, std::shared_ptr<const ProblemProfile> profile) {
  g.add_node(id, std::move(profile));
  std::vector<std::pair<ProblemId, ProblemId>> pairs;
  for (const auto& other : g.nodes())
    if (other != id) pairs.emplace_back(id, other);
  detail::connect(g, pairs);
}

inline ProblemGraph insert_problem(ProblemGraph g, const ERProblem& p) {
  insert_problem(g, p.id(), std::make_shared<const ProblemProfile>(make_profile(p)));
  return g;
}

inline ProblemGraph remove_problem(ProblemGraph g, const ProblemId& id) {
  g.remove_node(id);
  return g;
}

/// `id_a<TAB>id_b<TAB>weight`, one line per edge, canonical order.
inline std::string edge_list_text(const ProblemGraph& g) {
  std::string out;
  for (const auto& [key, w] : g.edges()) {
    out += key.first;
    out += '\t';
    out += key.second;
    out += '\t';
    out += detail::format_double(w);
    out += '\n';
  }
  return out;
}

struct EdgeRecord {
  ProblemId a;
  ProblemId b;
  double weight;
};

inline std::vector<EdgeRecord> parse_edge_list(const std::string& text, const std::string& section = "graph.tsv") {
  std::vector<EdgeRecord> edges;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    std::optional<double> w;
    if (t2 != std::string::npos) w = detail::parse_double(std::string_view(line).substr(t2 + 1));
    if (!w) {
      throw Error(ErrorKind::CorruptManifest, "malformed edge line in " + section,
                  {{"section", section}, {"row", line_no}});
    }
    edges.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), *w});
  }
  return edges;
}

}  // namespace morer
