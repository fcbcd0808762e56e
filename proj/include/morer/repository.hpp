#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "morer/active_learning.hpp"
#include "morer/classifier.hpp"
#include "morer/dist_analysis.hpp"
#include "morer/er_core.hpp"
#include "morer/error.hpp"
#include "morer/leiden.hpp"
#include "morer/parallel.hpp"
#include "morer/problem_graph.hpp"
#include "morer/version.hpp"

namespace morer {

struct RepositoryConfig {
  GraphConfig graph;
  LeidenConfig leiden;
  ALConfig al;
  std::size_t b_tot = 1000;
  std::size_t b_min = 50;
  double t_cov = 0.5;
  std::uint64_t seed = 42;
  unsigned threads = 1;  // not persisted; results do not depend on it
};

struct AuditEvent {
  std::uint64_t seq = 0;
  std::string kind;
  nlohmann::json details;
};

struct ClusterModel {
  ClusterId id;
  std::vector<ProblemId> members;
  std::optional<EnsembleModel> model;
  std::vector<FeatureVector> pc;  // retained labeled training vectors, canonical order
  std::set<ProblemId> trained_on;
  std::uint64_t created_at = 0;
  std::uint64_t retrained_at = 0;

  bool has_model() const { return model.has_value(); }
};

struct HistoricModel {
  ClusterId cluster;
  std::uint64_t seq = 0;
  EnsembleModel model;
};

enum class Strategy { Base, Cov };

inline std::string_view to_string(Strategy s) { return s == Strategy::Base ? "base" : "cov"; }

inline Strategy parse_strategy(std::string_view s) {
  if (s == "base" || s == "sel_base") return Strategy::Base;
  if (s == "cov" || s == "sel_cov") return Strategy::Cov;
  throw Error(ErrorKind::InvalidArgument, "unknown strategy '" + std::string(s) + "'");
}

struct Prediction {
  RecordRef left;
  RecordRef right;
  bool match = false;
  double match_fraction = 0.0;
};

struct SolveReport {
  ProblemId problem;
  Strategy strategy = Strategy::Base;
  ClusterId cluster;
  double sim_p = 0.0;
  bool retrain_triggered = false;
  std::size_t extra_labels_spent = 0;
  std::size_t retrain_budget = 0;
  std::optional<double> coverage;                   // sel_cov only
  std::vector<std::pair<ClusterId, double>> candidates;  // sel_base: sim_p per model
  std::vector<Prediction> predictions;
};

/// The model repository. Mutated only by init_repository and sel_cov;
/// sel_base and every accessor are read-only.
struct Repository {
  RepositoryConfig config;
  std::vector<std::string> feature_names;
  ProblemGraph graph;
  Clustering clustering;
  std::map<ClusterId, ClusterModel> models;
  std::set<ProblemId> trained;  // T
  std::set<ProblemId> unused;   // U
  std::map<ProblemId, ERProblem> problems;
  std::vector<AuditEvent> audit;
  std::vector<HistoricModel> history;
  std::uint64_t next_seq = 1;
  std::size_t labels_spent = 0;

  std::uint64_t log(std::string kind, nlohmann::json details) {
    const auto seq = next_seq++;
    audit.push_back({seq, std::move(kind), std::move(details)});
    return seq;
  }

  std::size_t model_count() const {
    return static_cast<std::size_t>(
        std::count_if(models.begin(), models.end(), [](const auto& kv) { return kv.second.has_model(); }));
  }

  std::size_t vector_count(const ProblemId& id) const { return problems.at(id).size(); }
};

namespace detail {

inline ERProblem strip_labels(ERProblem p) {
  for (auto& w : p.vectors) w.label.reset();
  return p;
}

inline std::vector<FeatureVector> pooled_vectors(const Repository& repo, const std::vector<ProblemId>& ids) {
  std::vector<FeatureVector> pool;
  for (const auto& id : ids) {
    const auto& p = repo.problems.at(id);
    pool.insert(pool.end(), p.vectors.begin(), p.vectors.end());
  }
  return pool;
}

inline RecordMembership membership_of(const Repository& repo, const Clustering& clustering) {
  RecordMembership m;
  for (const auto& [cid, members] : clustering.clusters)
    for (const auto& pid : members) add_membership(m, repo.problems.at(pid), cid);
  return m;
}

inline nlohmann::json ids_json(const std::set<ProblemId>& ids) { return nlohmann::json(std::vector<ProblemId>(ids.begin(), ids.end())); }

}  // namespace detail

/// Builds the repository from the initial problems: problem graph, Leiden
/// clustering, budget allocation, and one AL-trained model per cluster.
inline Repository init_repository(const std::vector<ERProblem>& initial, const RepositoryConfig& config,
                                  const GroundTruth& truth) {
  if (initial.empty()) throw Error(ErrorKind::InvalidArgument, "initial problem set is empty");
  validate_arity(initial);
  Repository repo;
  repo.config = config;
  repo.feature_names = initial.front().feature_names;
  for (const auto& p : initial) {
    if (!repo.problems.emplace(p.id(), detail::strip_labels(p)).second) {
      throw Error(ErrorKind::DuplicateProblem, "problem " + p.id() + " listed twice", {{"problem", p.id()}});
    }
  }

  auto graph_cfg = config.graph;
  graph_cfg.threads = config.threads;
  repo.graph = build_graph(initial, graph_cfg);
  repo.log("graph_built", {{"nodes", repo.graph.node_count()},
                           {"edges", repo.graph.edge_count()},
                           {"test", std::string(to_string(config.graph.analysis.test))}});

  repo.clustering = leiden_cluster(repo.graph, config.leiden);
  repo.log("clustered", {{"clusters", repo.clustering.clusters.size()}, {"modularity", repo.clustering.quality}});

  std::map<ClusterId, std::size_t> budgets;
  if (config.al.mode == ALMode::Bootstrap) {
    std::map<ProblemId, std::size_t> sizes;
    for (const auto& [id, p] : repo.problems) sizes[id] = p.size();
    const auto plan = allocate_budget(repo.clustering, sizes, config.b_tot, config.b_min, &repo.graph);
    repo.clustering = plan.clustering;
    budgets = plan.per_cluster;
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& [s, h] : plan.merged_singletons) merges.push_back({{"singleton", s}, {"host", h}});
    repo.log("budget_allocated", {{"b_tot", config.b_tot},
                                  {"b_min", config.b_min},
                                  {"per_cluster", budgets},
                                  {"merged_singletons", merges}});
  }

  const auto membership = detail::membership_of(repo, repo.clustering);
  const std::size_t total_clusters = repo.clustering.clusters.size();
  const std::size_t arity = repo.feature_names.size();

  std::vector<ClusterId> ids;
  for (const auto& [cid, members] : repo.clustering.clusters) ids.push_back(cid);
  std::vector<ALResult> results(ids.size());
  auto al_cfg = config.al;
  // Parallelism goes across clusters; each committee trains sequentially.
  al_cfg.ensemble.threads = 1;
  parallel_for(ids.size(), config.threads, [&](std::size_t i) {
    const auto& members = repo.clustering.clusters.at(ids[i]);
    const auto pool = detail::pooled_vectors(repo, members);
    Oracle oracle(truth);
    const std::size_t budget = budgets.count(ids[i]) ? budgets.at(ids[i]) : pool.size();
    results[i] = generate_model(pool, arity, budget, oracle, derive_seed(config.seed, "al:" + ids[i]), al_cfg,
                                &membership, total_clusters);
  });

  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& r = results[i];
    ClusterModel cm;
    cm.id = ids[i];
    cm.members = repo.clustering.clusters.at(ids[i]);
    cm.model = std::move(r.model);
    cm.pc = std::move(r.labeled);
    cm.trained_on = r.informed;
    repo.labels_spent += r.spent;
    cm.created_at = cm.retrained_at = repo.log(
        "model_trained", {{"cluster", ids[i]},
                          {"members", cm.members},
                          {"budget", budgets.count(ids[i]) ? nlohmann::json(budgets.at(ids[i])) : nlohmann::json()},
                          {"labels", r.spent},
                          {"pc_size", cm.pc.size()},
                          {"single_class", r.single_class},
                          {"mode", std::string(to_string(config.al.mode))}});
    repo.trained.insert(r.informed.begin(), r.informed.end());
    repo.models.emplace(ids[i], std::move(cm));
  }
  for (const auto& [id, p] : repo.problems)
    if (!repo.trained.count(id)) repo.unused.insert(id);
  repo.log("initialized", {{"trained", detail::ids_json(repo.trained)},
                           {"unused", detail::ids_json(repo.unused)},
                           {"labels_spent", repo.labels_spent}});
  return repo;
}

inline ProblemProfile pc_profile(const ClusterModel& cm, std::size_t arity) { return make_profile(cm.pc, arity); }

namespace detail {

inline std::vector<Prediction> predict_all(const EnsembleModel& model, const ERProblem& p) {
  std::vector<Prediction> out;
  out.reserve(p.size());
  for (const auto& w : p.vectors) {
    const double f = predict_match_fraction(model, w);
    out.push_back({w.left, w.right, f >= 0.5, f});
  }
  return out;
}

inline void check_problem(const Repository& repo, const ERProblem& p) {
  if (p.arity() != repo.feature_names.size()) {
    throw Error(ErrorKind::ArityMismatch, "problem " + p.id() + " does not match the repository arity",
                {{"problem", p.id()}, {"expected", repo.feature_names.size()}, {"got", p.arity()}});
  }
  if (p.vectors.empty()) throw Error(ErrorKind::InvalidArgument, "problem " + p.id() + " has no vectors");
}

}  // namespace detail

/// Picks the cluster whose retained training vectors are most similar to
/// p_new (same distribution test as the graph; ties go to the lower cluster
/// id) and classifies p_new with that cluster's model. Read-only.
inline SolveReport sel_base(const Repository& repo, const ERProblem& p_new) {
  if (repo.model_count() == 0) throw Error(ErrorKind::EmptyRepository, "repository holds no models");
  detail::check_problem(repo, p_new);
  const auto profile = make_profile(p_new);
  SolveReport report;
  report.problem = p_new.id();
  report.strategy = Strategy::Base;
  const ClusterModel* best = nullptr;
  double best_sim = -1.0;
  for (const auto& [cid, cm] : repo.models) {
    if (!cm.has_model() || cm.pc.empty()) continue;
    const double sim =
        problem_similarity(profile, pc_profile(cm, repo.feature_names.size()), repo.config.graph.analysis).sim_p;
    report.candidates.emplace_back(cid, sim);
    if (sim > best_sim) {
      best_sim = sim;
      best = &cm;
    }
  }
  if (!best) throw Error(ErrorKind::EmptyRepository, "repository holds no models with training vectors");
  report.cluster = best->id;
  report.sim_p = best_sim;
  report.predictions = detail::predict_all(*best->model, p_new);
  return report;
}

/// Share of the cluster's vectors that come from problems in U.
inline double coverage(const Repository& repo, const std::vector<ProblemId>& members) {
  std::size_t in_u = 0, total = 0;
  for (const auto& id : members) {
    const auto n = repo.vector_count(id);
    total += n;
    if (repo.unused.count(id)) in_u += n;
  }
  return total == 0 ? 0.0 : static_cast<double>(in_u) / static_cast<double>(total);
}

/// b_new = b_tot * cov * |P_C(prev)| / b_tot, i.e. cov * |P_C(prev)|, rounded.
inline std::size_t retrain_budget(std::size_t b_tot, double cov, std::size_t prev_training_size) {
  const double b = static_cast<double>(b_tot) * cov * static_cast<double>(prev_training_size) / static_cast<double>(b_tot);
  return static_cast<std::size_t>(std::llround(b));
}

/// Budget for a cluster without previous training data: max(b_min,
/// cov * mean |P_C| over existing models).
inline std::size_t fresh_budget(const Repository& repo, double cov) {
  std::size_t total = 0, count = 0;
  for (const auto& [cid, cm] : repo.models) {
    if (!cm.has_model()) continue;
    total += cm.pc.size();
    ++count;
  }
  const double mean = count ? static_cast<double>(total) / static_cast<double>(count) : 0.0;
  return std::max<std::size_t>(repo.config.b_min, static_cast<std::size_t>(std::llround(cov * mean)));
}

/// Inserts p_new into the graph (and into U), reclusters, carries models
/// over to the new clusters by maximum member overlap, then for p_new's
/// cluster either trains a fresh model (every member in U), or reuses the
/// inherited model and retrains it when coverage exceeds t_cov. p_new is
/// classified with the resulting model.
inline SolveReport sel_cov(Repository& repo, const ERProblem& p_new, const GroundTruth& truth) {
  detail::check_problem(repo, p_new);
  const ProblemId pid = p_new.id();
  if (repo.graph.contains(pid)) {
    throw Error(ErrorKind::DuplicateProblem, "problem " + pid + " is already in the repository", {{"problem", pid}});
  }
  const auto& cfg = repo.config;
  const std::size_t arity = repo.feature_names.size();

  repo.problems.emplace(pid, detail::strip_labels(p_new));
  auto profile = std::make_shared<const ProblemProfile>(make_profile(p_new));
  insert_problem(repo.graph, pid, profile);
  repo.unused.insert(pid);
  repo.log("problem_inserted", {{"problem", pid}, {"vectors", p_new.size()}});

  auto clustering = leiden_cluster(repo.graph, cfg.leiden);
  repo.log("reclustered", {{"clusters", clustering.clusters.size()}, {"modularity", clustering.quality}});

  // Carry models over: previous cluster with the largest member overlap;
  // ties go to the larger previous cluster, then the lower id.
  std::map<ClusterId, ClusterModel> models;
  for (const auto& [cid, members] : clustering.clusters) {
    const ClusterModel* source = nullptr;
    std::size_t best_overlap = 0;
    for (const auto& [prev_id, prev] : repo.models) {
      if (!prev.has_model()) continue;
      std::size_t overlap = 0;
      for (const auto& m : members)
        if (std::binary_search(prev.members.begin(), prev.members.end(), m)) ++overlap;
      if (overlap == 0) continue;
      if (!source || overlap > best_overlap ||
          (overlap == best_overlap && prev.members.size() > source->members.size())) {
        source = &prev;
        best_overlap = overlap;
      }
    }
    ClusterModel cm;
    if (source) cm = *source;
    cm.id = cid;
    cm.members = members;
    models.emplace(cid, std::move(cm));
  }

  const ClusterId target = clustering.cluster_of(pid);
  ClusterModel& cm = models.at(target);
  const auto& members = cm.members;
  const bool all_unused =
      std::all_of(members.begin(), members.end(), [&](const ProblemId& m) { return repo.unused.count(m) != 0; });
  const double cov = coverage(repo, members);

  SolveReport report;
  report.problem = pid;
  report.strategy = Strategy::Cov;
  report.cluster = target;
  report.coverage = cov;

  std::vector<ProblemId> pool_ids;
  for (const auto& m : members)
    if (repo.unused.count(m)) pool_ids.push_back(m);

  const bool fresh = all_unused || !cm.has_model();
  if (fresh || cov > cfg.t_cov) {
    std::size_t budget;
    if (fresh) {
      budget = fresh_budget(repo, cov);
    } else {
      budget = retrain_budget(cfg.b_tot, cov, cm.pc.size());
      if (budget == 0) budget = fresh_budget(repo, cov);
    }
    const auto pool = detail::pooled_vectors(repo, pool_ids);
    const auto membership = detail::membership_of(repo, clustering);
    Oracle oracle(truth);
    auto al_cfg = cfg.al;
    al_cfg.ensemble.threads = cfg.threads;
    const auto seed = derive_seed(cfg.seed, "cov:" + std::to_string(repo.next_seq));
    auto result = generate_model(pool, arity, budget, oracle, seed, al_cfg, &membership,
                                 clustering.clusters.size(), fresh ? std::vector<FeatureVector>{} : cm.pc);
    if (!fresh) repo.history.push_back({cm.id, repo.next_seq, *cm.model});
    const std::size_t previous_pc = fresh ? 0 : cm.pc.size();
    cm.model = std::move(result.model);
    cm.pc = std::move(result.labeled);
    cm.trained_on.insert(result.informed.begin(), result.informed.end());
    repo.labels_spent += result.spent;
    report.retrain_triggered = true;
    report.extra_labels_spent = result.spent;
    report.retrain_budget = budget;
    for (const auto& m : pool_ids) {
      repo.unused.erase(m);
      repo.trained.insert(m);
    }
    const auto seq = repo.log(fresh ? "fresh_model" : "retrained",
                              {{"cluster", cm.id},
                               {"coverage", cov},
                               {"t_cov", cfg.t_cov},
                               {"budget", budget},
                               {"labels", result.spent},
                               {"previous_pc_size", previous_pc},
                               {"pc_size", cm.pc.size()},
                               {"moved_to_trained", pool_ids}});
    cm.retrained_at = seq;
    if (fresh) cm.created_at = seq;
  } else {
    repo.log("reused", {{"cluster", cm.id}, {"coverage", cov}, {"t_cov", cfg.t_cov}});
  }

  report.sim_p = problem_similarity(*profile, pc_profile(cm, arity), cfg.graph.analysis).sim_p;
  report.predictions = detail::predict_all(*cm.model, p_new);
  repo.clustering = std::move(clustering);
  repo.models = std::move(models);
  repo.log("solved", {{"problem", pid},
                      {"strategy", "cov"},
                      {"cluster", report.cluster},
                      {"retrained", report.retrain_triggered},
                      {"extra_labels", report.extra_labels_spent}});
  return report;
}

/// Single-writer / multi-reader wrapper: sel_base runs under a shared lock,
/// sel_cov under an exclusive one, snapshot() copies a consistent state.
class SharedRepository {
 public:
  explicit SharedRepository(Repository repo) : repo_(std::move(repo)) {}

  SolveReport solve_base(const ERProblem& p) const {
    std::shared_lock lock(mutex_);
    return sel_base(repo_, p);
  }

  SolveReport solve_cov(const ERProblem& p, const GroundTruth& truth) {
    std::unique_lock lock(mutex_);
    return sel_cov(repo_, p, truth);
  }

  Repository snapshot() const {
    std::shared_lock lock(mutex_);
    return repo_;
  }

 private:
  mutable std::shared_mutex mutex_;
  Repository repo_;
};

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::json to_json(const SolveReport& r) {
  std::size_t matches = 0;
  for (const auto& p : r.predictions) matches += p.match ? 1 : 0;
  nlohmann::json j = {{"problem", r.problem},
                      {"strategy", std::string(to_string(r.strategy))},
                      {"cluster", r.cluster},
                      {"sim_p", r.sim_p},
                      {"retrain_triggered", r.retrain_triggered},
                      {"extra_labels_spent", r.extra_labels_spent},
                      {"retrain_budget", r.retrain_budget},
                      {"vectors", r.predictions.size()},
                      {"predicted_matches", matches}};
  if (r.coverage) j["coverage"] = *r.coverage;
  if (!r.candidates.empty()) {
    j["candidates"] = nlohmann::json::array();
    for (const auto& [cid, sim] : r.candidates) j["candidates"].push_back({{"cluster", cid}, {"sim_p", sim}});
  }
  return j;
}

inline std::string predictions_csv(const SolveReport& r) {
  std::string out = "left_source,left_id,right_source,right_id,match,match_fraction\n";
  for (const auto& p : r.predictions) {
    out += p.left.source_id + ',' + p.left.record_id + ',' + p.right.source_id + ',' + p.right.record_id + ',' +
           (p.match ? "1" : "0") + ',' + detail::format_double(p.match_fraction) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence
//
// <dir>/manifest.json            version, config, T, U, problem index, history index
// <dir>/graph.tsv                id_a<TAB>id_b<TAB>weight
// <dir>/clusters.json            clustering and per-cluster bookkeeping
// <dir>/models/<cluster>.model   ensemble text format
// <dir>/models/history/<cluster>.<seq>.model
// <dir>/pc/<cluster>.csv         retained training vectors with a label column
// <dir>/problems/<problem>.csv   feature vectors of every problem in the graph
// <dir>/audit.log                seq<TAB>event<TAB>details-json

inline nlohmann::json config_json(const RepositoryConfig& c) {
  const auto& a = c.graph.analysis;
  const auto& t = c.al.ensemble.tree;
  return {{"test", std::string(to_string(a.test))},
          {"wd_grid", a.wd_grid},
          {"psi_bins", a.psi_bins},
          {"psi_eps", a.psi_eps},
          {"min_edge_sim", c.graph.min_edge_sim},
          {"resolution", c.leiden.resolution},
          {"leiden_seed", c.leiden.seed},
          {"leiden_max_iters", c.leiden.max_iters},
          {"leiden_theta", c.leiden.theta},
          {"leiden_restarts", c.leiden.restarts},
          {"al", std::string(to_string(c.al.mode))},
          {"batch", c.al.batch},
          {"k", c.al.ensemble.k},
          {"max_depth", t.max_depth},
          {"min_leaf", t.min_leaf},
          {"feature_subsample", t.feature_subsample},
          {"uniqueness", std::string(to_string(c.al.uniqueness))},
          {"b_tot", c.b_tot},
          {"b_min", c.b_min},
          {"t_cov", c.t_cov},
          {"seed", c.seed}};
}

inline RepositoryConfig config_from_json(const nlohmann::json& j) {
  RepositoryConfig c;
  c.graph.analysis.test = parse_dist_test(j.at("test").get<std::string>());
  c.graph.analysis.wd_grid = j.at("wd_grid").get<std::size_t>();
  c.graph.analysis.psi_bins = j.at("psi_bins").get<std::size_t>();
  c.graph.analysis.psi_eps = j.at("psi_eps").get<double>();
  c.graph.min_edge_sim = j.at("min_edge_sim").get<double>();
  c.leiden.resolution = j.at("resolution").get<double>();
  c.leiden.seed = j.at("leiden_seed").get<std::uint64_t>();
  c.leiden.max_iters = j.at("leiden_max_iters").get<std::size_t>();
  c.leiden.theta = j.at("leiden_theta").get<double>();
  c.leiden.restarts = j.at("leiden_restarts").get<std::size_t>();
  c.al.mode = parse_al_mode(j.at("al").get<std::string>());
  c.al.batch = j.at("batch").get<std::size_t>();
  c.al.ensemble.k = j.at("k").get<std::size_t>();
  c.al.ensemble.tree.max_depth = j.at("max_depth").get<std::size_t>();
  c.al.ensemble.tree.min_leaf = j.at("min_leaf").get<std::size_t>();
  c.al.ensemble.tree.feature_subsample = j.at("feature_subsample").get<bool>();
  c.al.uniqueness = parse_uniqueness_mode(j.at("uniqueness").get<std::string>());
  c.b_tot = j.at("b_tot").get<std::size_t>();
  c.b_min = j.at("b_min").get<std::size_t>();
  c.t_cov = j.at("t_cov").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

namespace detail {

inline std::string labeled_csv(const std::vector<FeatureVector>& vectors, const std::vector<std::string>& names) {
  std::string out = "left_source,left_id,right_source,right_id";
  for (const auto& f : names) out += ',' + f;
  out += ",label\n";
  for (const auto& w : vectors) {
    out += w.left.source_id + ',' + w.left.record_id + ',' + w.right.source_id + ',' + w.right.record_id;
    for (double v : w.values) out += ',' + format_double(v);
    out += ',';
    out += (w.label.value_or(false) ? '1' : '0');
    out += '\n';
  }
  return out;
}

inline std::string feature_csv_text(const ERProblem& p) {
  std::string out = "left_source,left_id,right_source,right_id";
  for (const auto& f : p.feature_names) out += ',' + f;
  out += '\n';
  for (const auto& w : p.vectors) {
    out += w.left.source_id + ',' + w.left.record_id + ',' + w.right.source_id + ',' + w.right.record_id;
    for (double v : w.values) out += ',' + format_double(v);
    out += '\n';
  }
  return out;
}

inline Error corrupt(const std::string& section, const std::string& what) {
  return Error(ErrorKind::CorruptManifest, section + ": " + what, {{"section", section}});
}

inline std::vector<FeatureVector> parse_labeled_csv(const std::string& text, std::size_t arity,
                                                    const std::string& section) {
  std::vector<FeatureVector> out;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw corrupt(section, "missing header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != arity + 5) throw corrupt(section, "row has " + std::to_string(cells.size()) + " columns");
    FeatureVector w;
    w.left = {std::string(cells[0]), std::string(cells[1])};
    w.right = {std::string(cells[2]), std::string(cells[3])};
    for (std::size_t f = 0; f < arity; ++f) {
      const auto v = parse_double(cells[4 + f]);
      if (!v || *v < 0.0 || *v > 1.0) throw corrupt(section, "bad feature value");
      w.values.push_back(*v);
    }
    if (cells[arity + 4] != "0" && cells[arity + 4] != "1") throw corrupt(section, "bad label");
    w.label = cells[arity + 4] == "1";
    out.push_back(std::move(w));
  }
  return out;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string(), {{"path", path.string()}});
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string history_path(const HistoricModel& h) {
  return "models/history/" + h.cluster + "." + std::to_string(h.seq) + ".model";
}

}  // namespace detail

/// Archive content keyed by relative path. Deterministic for a given state.
inline std::map<std::string, std::string> serialize_repository(const Repository& repo) {
  std::map<std::string, std::string> files;
  nlohmann::json manifest;
  manifest["format"] = "morer-repository";
  manifest["tool_version"] = kVersion;
  manifest["config"] = config_json(repo.config);
  manifest["feature_names"] = repo.feature_names;
  manifest["trained"] = detail::ids_json(repo.trained);
  manifest["unused"] = detail::ids_json(repo.unused);
  manifest["next_seq"] = repo.next_seq;
  manifest["labels_spent"] = repo.labels_spent;
  manifest["problems"] = nlohmann::json::array();
  for (const auto& [id, p] : repo.problems) {
    const std::string path = "problems/" + id + ".csv";
    manifest["problems"].push_back({{"id", id},
                                    {"source_a", p.sources.first},
                                    {"source_b", p.sources.second},
                                    {"vectors", p.size()},
                                    {"path", path}});
    files[path] = detail::feature_csv_text(p);
  }
  manifest["history"] = nlohmann::json::array();
  for (const auto& h : repo.history) {
    const auto path = detail::history_path(h);
    manifest["history"].push_back({{"cluster", h.cluster}, {"seq", h.seq}, {"path", path}});
    files[path] = write_ensemble(h.model);
  }
  files["manifest.json"] = manifest.dump(2) + "\n";
  files["graph.tsv"] = edge_list_text(repo.graph);

  nlohmann::json clusters;
  clusters["modularity"] = repo.clustering.quality;
  clusters["clusters"] = nlohmann::json::array();
  for (const auto& [cid, members] : repo.clustering.clusters) {
    nlohmann::json c = {{"id", cid}, {"members", members}};
    const auto it = repo.models.find(cid);
    if (it != repo.models.end() && it->second.has_model()) {
      const auto& cm = it->second;
      c["model_path"] = "models/" + cid + ".model";
      c["pc_path"] = "pc/" + cid + ".csv";
      c["pc_size"] = cm.pc.size();
      c["trained_on"] = detail::ids_json(cm.trained_on);
      c["created_at"] = cm.created_at;
      c["retrained_at"] = cm.retrained_at;
      files["models/" + cid + ".model"] = write_ensemble(*cm.model);
      files["pc/" + cid + ".csv"] = detail::labeled_csv(cm.pc, repo.feature_names);
    }
    clusters["clusters"].push_back(std::move(c));
  }
  files["clusters.json"] = clusters.dump(2) + "\n";

  std::string audit;
  for (const auto& e : repo.audit) audit += std::to_string(e.seq) + '\t' + e.kind + '\t' + e.details.dump() + '\n';
  files["audit.log"] = audit;
  return files;
}

/// FNV-1a over the serialized archive; equal states give equal hashes.
inline std::uint64_t repository_fingerprint(const Repository& repo) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [path, content] : serialize_repository(repo)) {
    h = splitmix64(h ^ fnv1a(path));
    h = splitmix64(h ^ fnv1a(content));
  }
  return h;
}

inline void save_repository(const Repository& repo, const fs::path& dir) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::InvalidArgument, dir.string() + " is not a directory");
    const bool is_repo = fs::exists(dir / "manifest.json");
    if (!is_repo && !fs::is_empty(dir)) {
      throw Error(ErrorKind::InvalidArgument, "refusing to overwrite non-repository directory " + dir.string(),
                  {{"path", dir.string()}});
    }
    for (const char* entry : {"manifest.json", "graph.tsv", "clusters.json", "audit.log", "models", "pc", "problems"})
      fs::remove_all(dir / entry);
  }
  for (const auto& [rel, content] : serialize_repository(repo)) {
    const auto path = dir / rel;
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string(), {{"path", path.string()}});
    out << content;
  }
}

inline Repository load_repository(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) {
    throw Error(ErrorKind::MissingFile, "no repository at " + dir.string(), {{"path", dir.string()}});
  }
  nlohmann::json manifest, clusters;
  try {
    manifest = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw detail::corrupt("manifest.json", e.what());
  }
  if (manifest.value("format", "") != "morer-repository") throw detail::corrupt("manifest.json", "not a repository");
  const auto version = manifest.value("tool_version", "");
  if (version != kVersion) {
    throw Error(ErrorKind::VersionMismatch, "archive written by version " + version + ", this is " + kVersion,
                {{"archive_version", version}, {"tool_version", kVersion}});
  }

  Repository repo;
  try {
    repo.config = config_from_json(manifest.at("config"));
    repo.feature_names = manifest.at("feature_names").get<std::vector<std::string>>();
    for (const auto& id : manifest.at("trained")) repo.trained.insert(id.get<std::string>());
    for (const auto& id : manifest.at("unused")) repo.unused.insert(id.get<std::string>());
    repo.next_seq = manifest.at("next_seq").get<std::uint64_t>();
    repo.labels_spent = manifest.at("labels_spent").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw detail::corrupt("manifest.json", e.what());
  } catch (const Error& e) {
    throw detail::corrupt("manifest.json", e.what());
  }
  const std::size_t arity = repo.feature_names.size();

  repo.graph = ProblemGraph(GraphConfig{repo.config.graph.analysis, repo.config.graph.min_edge_sim, 1});
  try {
    for (const auto& entry : manifest.at("problems")) {
      const auto id = entry.at("id").get<std::string>();
      const auto path = entry.at("path").get<std::string>();
      auto file = read_feature_csv(dir / path, arity);
      ERProblem p;
      p.sources = SourcePair::normalized(entry.at("source_a").get<std::string>(), entry.at("source_b").get<std::string>());
      p.feature_names = repo.feature_names;
      p.vectors = std::move(file.vectors);
      if (p.id() != id || p.size() != entry.at("vectors").get<std::size_t>()) {
        throw detail::corrupt(path, "problem content does not match the manifest");
      }
      finalize_problem(p);
      repo.graph.add_node(id, std::make_shared<const ProblemProfile>(make_profile(p)));
      repo.problems.emplace(id, std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw detail::corrupt("manifest.json", e.what());
  }
  for (const auto& e : parse_edge_list(detail::read_file(dir / "graph.tsv"))) {
    try {
      repo.graph.set_edge(e.a, e.b, e.weight);
    } catch (const Error& err) {
      throw detail::corrupt("graph.tsv", err.what());
    }
  }

  try {
    clusters = nlohmann::json::parse(detail::read_file(dir / "clusters.json"));
    std::vector<std::vector<ProblemId>> groups;
    for (const auto& c : clusters.at("clusters")) groups.push_back(c.at("members").get<std::vector<ProblemId>>());
    repo.clustering = Clustering::from_groups(std::move(groups), clusters.at("modularity").get<double>());
    for (const auto& c : clusters.at("clusters")) {
      const auto cid = c.at("id").get<std::string>();
      if (!repo.clustering.clusters.count(cid)) throw detail::corrupt("clusters.json", "cluster id mismatch");
      ClusterModel cm;
      cm.id = cid;
      cm.members = repo.clustering.clusters.at(cid);
      if (c.contains("model_path")) {
        const auto model_path = c.at("model_path").get<std::string>();
        const auto pc_path = c.at("pc_path").get<std::string>();
        cm.model = read_ensemble(detail::read_file(dir / model_path), model_path);
        cm.pc = detail::parse_labeled_csv(detail::read_file(dir / pc_path), arity, pc_path);
        if (cm.pc.size() != c.at("pc_size").get<std::size_t>()) throw detail::corrupt(pc_path, "truncated");
        for (const auto& id : c.at("trained_on")) cm.trained_on.insert(id.get<std::string>());
        cm.created_at = c.at("created_at").get<std::uint64_t>();
        cm.retrained_at = c.at("retrained_at").get<std::uint64_t>();
      }
      repo.models.emplace(cid, std::move(cm));
    }
    for (const auto& h : manifest.at("history")) {
      HistoricModel hm;
      hm.cluster = h.at("cluster").get<std::string>();
      hm.seq = h.at("seq").get<std::uint64_t>();
      const auto path = h.at("path").get<std::string>();
      hm.model = read_ensemble(detail::read_file(dir / path), path);
      repo.history.push_back(std::move(hm));
    }
  } catch (const nlohmann::json::exception& e) {
    throw detail::corrupt("clusters.json", e.what());
  }

  std::istringstream audit(detail::read_file(dir / "audit.log"));
  std::string line;
  while (std::getline(audit, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw detail::corrupt("audit.log", "malformed line");
    AuditEvent e;
    try {
      e.seq = std::stoull(line.substr(0, t1));
      e.kind = line.substr(t1 + 1, t2 - t1 - 1);
      e.details = nlohmann::json::parse(line.substr(t2 + 1));
    } catch (const std::exception& ex) {
      throw detail::corrupt("audit.log", ex.what());
    }
    repo.audit.push_back(std::move(e));
  }
  return repo;
}

}  // namespace morer
