// morer: command-line front end for the multi-source ER model repository.
//
// Exit codes: 0 success, 1 domain error (JSON on stderr), 2 usage error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "morer/morer.hpp"

namespace {

using namespace morer;

struct Tunables {
  std::string test = "ks";
  std::size_t wd_grid = 101;
  std::size_t psi_bins = 100;
  double psi_eps = 1e-6;
  double min_edge_sim = 0.0;
  double resolution = 1.0;
  std::size_t b_tot = 1000;
  std::size_t b_min = 50;
  std::size_t batch = 10;
  std::size_t k = 100;
  std::size_t max_depth = 12;
  std::size_t min_leaf = 2;
  bool feature_subsample = false;
  std::string al = "bootstrap";
  std::string uniqueness = "idf";
  double t_cov = 0.5;
  std::uint64_t seed = 42;
};

void add_analysis_flags(CLI::App* cmd, Tunables& t) {
  cmd->add_option("--test", t.test, "distribution test: ks, wd or psi")
      ->check(CLI::IsMember({"ks", "wd", "psi"}, CLI::ignore_case));
  cmd->add_option("--wd-grid", t.wd_grid, "Wasserstein grid points")->check(CLI::Range(2, 1000000));
  cmd->add_option("--psi-bins", t.psi_bins, "PSI bin count")->check(CLI::Range(1, 1000000));
  cmd->add_option("--psi-eps", t.psi_eps, "PSI smoothing constant")->check(CLI::PositiveNumber);
}

void add_repository_flags(CLI::App* cmd, Tunables& t) {
  add_analysis_flags(cmd, t);
  cmd->add_option("--min-edge-sim", t.min_edge_sim, "drop graph edges below this sim_p")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--resolution", t.resolution, "Leiden resolution")->check(CLI::PositiveNumber);
  cmd->add_option("--b-tot", t.b_tot, "total labeling budget")->check(CLI::NonNegativeNumber);
  cmd->add_option("--b-min", t.b_min, "minimum labels per cluster")->check(CLI::NonNegativeNumber);
  cmd->add_option("--batch", t.batch, "labels per active-learning round")->check(CLI::Range(1, 1000000));
  cmd->add_option("--k", t.k, "committee size")->check(CLI::Range(1, 100000));
  cmd->add_option("--max-depth", t.max_depth, "tree depth limit")->check(CLI::Range(1, 64));
  cmd->add_option("--min-leaf", t.min_leaf, "minimum samples per leaf")->check(CLI::Range(1, 1000000));
  cmd->add_flag("--feature-subsample", t.feature_subsample, "sample sqrt(t) features per split");
  cmd->add_option("--al", t.al, "training-data selection: bootstrap or supervised")
      ->check(CLI::IsMember({"bootstrap", "supervised"}, CLI::ignore_case));
  cmd->add_option("--uniqueness", t.uniqueness, "record uniqueness weighting: idf, literal or off")
      ->check(CLI::IsMember({"idf", "literal", "off"}, CLI::ignore_case));
  cmd->add_option("--t-cov", t.t_cov, "coverage threshold for retraining")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--seed", t.seed, "master seed");
}

RepositoryConfig to_config(const Tunables& t, unsigned threads) {
  RepositoryConfig c;
  c.graph.analysis.test = parse_dist_test(t.test);
  c.graph.analysis.wd_grid = t.wd_grid;
  c.graph.analysis.psi_bins = t.psi_bins;
  c.graph.analysis.psi_eps = t.psi_eps;
  c.graph.min_edge_sim = t.min_edge_sim;
  c.leiden.resolution = t.resolution;
  c.leiden.seed = t.seed;
  c.b_tot = t.b_tot;
  c.b_min = t.b_min;
  c.al.batch = t.batch;
  c.al.ensemble.k = t.k;
  c.al.ensemble.tree.max_depth = t.max_depth;
  c.al.ensemble.tree.min_leaf = t.min_leaf;
  c.al.ensemble.tree.feature_subsample = t.feature_subsample;
  c.al.mode = parse_al_mode(t.al);
  c.al.uniqueness = parse_uniqueness_mode(t.uniqueness);
  c.t_cov = t.t_cov;
  c.seed = t.seed;
  c.threads = threads;
  return c;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path, {{"path", path}});
  out << text;
}

const GroundTruth& require_oracle(const Dataset& d) {
  if (!d.oracle) throw Error(ErrorKind::MissingFile, "dataset manifest names no ground-truth file");
  return *d.oracle;
}

// Finds the problem to solve: either a problem id inside --manifest, or a
// standalone feature CSV whose sources come from the first data row.
ERProblem resolve_problem(const std::string& spec, const std::optional<Dataset>& dataset,
                          const std::vector<std::string>& feature_names) {
  if (dataset) {
    for (const auto& p : dataset->problems)
      if (p.id() == spec) return p;
    if (!fs::exists(spec)) {
      throw Error(ErrorKind::UnknownProblem, "problem " + spec + " is not in the dataset", {{"problem", spec}});
    }
  }
  auto file = read_feature_csv(spec, feature_names.size());
  if (file.vectors.empty()) throw Error(ErrorKind::InvalidArgument, spec + " holds no feature vectors");
  ERProblem p;
  p.sources = SourcePair::normalized(file.vectors.front().left.source_id, file.vectors.front().right.source_id);
  p.feature_names = file.feature_names;
  p.vectors = std::move(file.vectors);
  finalize_problem(p);
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-source entity resolution with a reusable model repository"};
  app.set_version_flag("--version", std::string("morer ") + kVersion);
  app.require_subcommand(1);
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--threads", threads, "worker threads (1 for bit-reproducible baselines)")
      ->check(CLI::Range(1u, 4096u));

  Tunables t;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "load a dataset and print its summary");
  std::string ingest_manifest, ingest_graph, ingest_out;
  ingest->add_option("--manifest", ingest_manifest, "dataset manifest.json")->required();
  ingest->add_option("--export-graph", ingest_graph, "write the problem graph edge list here");
  ingest->add_option("--out", ingest_out, "re-write the dataset in canonical form into this directory");
  add_analysis_flags(ingest, t);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-source corpus");
  std::size_t regimes = 2, sources = 4, vectors = 500;
  double match_ratio = 0.3;
  std::string synth_out, synth_name = "synthetic";
  std::uint64_t synth_seed = 42;
  synth->add_option("--regimes", regimes, "number of similarity regimes")->check(CLI::Range(1, 4));
  synth->add_option("--sources", sources, "sources per regime")->check(CLI::Range(2, 100));
  synth->add_option("--vectors", vectors, "feature vectors per problem")->check(CLI::Range(2, 10000000));
  synth->add_option("--match-ratio", match_ratio, "share of matching pairs")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--name", synth_name, "dataset name");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  // init
  auto* init = app.add_subcommand("init", "build a model repository from a dataset");
  std::string init_manifest, init_out;
  double ratio_init = 0.0;
  init->add_option("--manifest", init_manifest, "dataset manifest.json")->required();
  init->add_option("--out", init_out, "repository directory")->required();
  init->add_option("--ratio-init", ratio_init, "use only this share of problems (the rest are listed as unsolved)")
      ->check(CLI::Range(0.0, 1.0));
  add_repository_flags(init, t);

  // solve
  auto* solve = app.add_subcommand("solve", "classify a new problem with the repository");
  std::string solve_repo, solve_problem, solve_manifest, solve_oracle, solve_predictions = "predictions.csv";
  std::string strategy = "base";
  std::optional<double> solve_t_cov;
  solve->add_option("--repo", solve_repo, "repository directory")->required();
  solve->add_option("--problem", solve_problem, "problem id in --manifest, or a feature CSV path")->required();
  solve->add_option("--manifest", solve_manifest, "dataset holding the problem and its ground truth");
  solve->add_option("--oracle", solve_oracle, "ground-truth CSV (for --strategy cov)");
  solve->add_option("--strategy", strategy, "base or cov")->check(CLI::IsMember({"base", "cov"}, CLI::ignore_case));
  solve->add_option("--t-cov", solve_t_cov, "override the repository's coverage threshold")->check(CLI::Range(0.0, 1.0));
  solve->add_option("--predictions", solve_predictions, "predictions CSV output path");

  // eval
  auto* eval = app.add_subcommand("eval", "run an experiment from a JSON config");
  std::string eval_config, eval_report;
  bool eval_no_timing = false;
  eval->add_option("--config", eval_config, "experiment config JSON")->required();
  eval->add_option("--report", eval_report, "also write the report JSON here");
  eval->add_flag("--no-timing", eval_no_timing, "omit wall time from the report");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "summarize a repository");
  std::string inspect_repo, inspect_graph;
  inspect->add_option("--repo", inspect_repo, "repository directory")->required();
  inspect->add_option("--export-graph", inspect_graph, "write the problem graph edge list here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*ingest) {
      AnalysisConfig analysis;
      analysis.test = parse_dist_test(t.test);
      analysis.wd_grid = t.wd_grid;
      analysis.psi_bins = t.psi_bins;
      analysis.psi_eps = t.psi_eps;
      const auto d = load_dataset(ingest_manifest, threads);
      nlohmann::json j = {{"name", d.manifest.name},
                          {"feature_names", d.manifest.feature_names},
                          {"problems", d.problems.size()},
                          {"vectors", d.vector_count()},
                          {"dropped_reflexive", d.dropped_reflexive}};
      if (d.oracle) j["oracle"] = {{"pairs", d.oracle->size()}, {"matches", d.oracle->match_count()}};
      if (!ingest_graph.empty()) {
        const auto g = build_graph(d.problems, GraphConfig{analysis, 0.0, threads});
        write_text(ingest_graph, edge_list_text(g));
        j["graph_edges"] = g.edge_count();
      }
      if (!ingest_out.empty()) write_dataset(d.manifest.name, d.problems, d.oracle ? &*d.oracle : nullptr, ingest_out);
      std::cout << j.dump(2) << '\n';
    } else if (*synth) {
      auto spec = default_synth_spec(regimes, sources, vectors, synth_seed);
      spec.match_ratio = match_ratio;
      const auto corpus = generate_synthetic(spec);
      const auto sep = check_separation(corpus, spec.separation);
      write_synthetic(corpus, synth_name, synth_out);
      std::cout << nlohmann::json{{"out", synth_out},
                                  {"problems", corpus.problems.size()},
                                  {"pairs", corpus.truth.size()},
                                  {"matches", corpus.truth.match_count()},
                                  {"separation", {{"min_cross", sep.min_cross},
                                                  {"max_within", sep.max_within},
                                                  {"delta", spec.separation},
                                                  {"ok", sep.ok}}}}
                       .dump(2)
                << '\n';
    } else if (*init) {
      const auto config = to_config(t, threads);
      const auto d = load_dataset(init_manifest, threads);
      const auto& truth = require_oracle(d);
      std::vector<ERProblem> initial = d.problems;
      std::vector<ProblemId> unsolved;
      if (ratio_init > 0.0) {
        auto split = split_by_source_pair(d.problems, ratio_init, derive_seed(config.seed, "split"));
        initial = std::move(split.initial);
        for (const auto& p : split.unsolved) unsolved.push_back(p.id());
      }
      const auto repo = init_repository(initial, config, truth);
      save_repository(repo, init_out);
      std::cout << nlohmann::json{{"repository", init_out},
                                  {"problems", repo.problems.size()},
                                  {"clusters", repo.clustering.clusters.size()},
                                  {"modularity", repo.clustering.quality},
                                  {"labels_spent", repo.labels_spent},
                                  {"unsolved_problems", unsolved}}
                       .dump(2)
                << '\n';
    } else if (*solve) {
      auto repo = load_repository(solve_repo);
      repo.config.threads = threads;
      if (solve_t_cov) repo.config.t_cov = *solve_t_cov;
      std::optional<Dataset> dataset;
      if (!solve_manifest.empty()) dataset = load_dataset(solve_manifest, threads);
      const auto problem = resolve_problem(solve_problem, dataset, repo.feature_names);
      SolveReport report;
      if (parse_strategy(strategy) == Strategy::Base) {
        report = sel_base(repo, problem);
      } else {
        std::optional<GroundTruth> truth;
        if (!solve_oracle.empty()) truth = read_ground_truth(solve_oracle);
        else if (dataset && dataset->oracle) truth = dataset->oracle;
        if (!truth) throw Error(ErrorKind::InvalidArgument, "--strategy cov needs --oracle or a manifest with ground truth");
        report = sel_cov(repo, problem, *truth);
        save_repository(repo, solve_repo);
      }
      write_text(solve_predictions, predictions_csv(report));
      auto j = to_json(report);
      j["predictions_path"] = solve_predictions;
      std::cout << j.dump(2) << '\n';
    } else if (*eval) {
      const auto report = run_experiment_file(eval_config, threads);
      const auto text = to_json(report, !eval_no_timing).dump(2) + "\n";
      if (!eval_report.empty()) write_text(eval_report, text);
      std::cout << text;
      std::cerr << report_table(report);
    } else if (*inspect) {
      const auto repo = load_repository(inspect_repo);
      nlohmann::json clusters = nlohmann::json::array();
      for (const auto& [cid, members] : repo.clustering.clusters) {
        nlohmann::json c = {{"id", cid}, {"members", members}};
        if (const auto it = repo.models.find(cid); it != repo.models.end() && it->second.has_model()) {
          c["pc_size"] = it->second.pc.size();
          c["trees"] = it->second.model->k();
          c["created_at"] = it->second.created_at;
          c["retrained_at"] = it->second.retrained_at;
        }
        clusters.push_back(std::move(c));
      }
      if (!inspect_graph.empty()) write_text(inspect_graph, edge_list_text(repo.graph));
      std::cout << nlohmann::json{{"tool_version", kVersion},
                                  {"config", config_json(repo.config)},
                                  {"problems", repo.problems.size()},
                                  {"edges", repo.graph.edge_count()},
                                  {"modularity", repo.clustering.quality},
                                  {"clusters", clusters},
                                  {"trained", std::vector<ProblemId>(repo.trained.begin(), repo.trained.end())},
                                  {"unused", std::vector<ProblemId>(repo.unused.begin(), repo.unused.end())},
                                  {"labels_spent", repo.labels_spent},
                                  {"history", repo.history.size()},
                                  {"audit_events", repo.audit.size()}}
                       .dump(2)
                << '\n';
    }
  } catch (const Error& e) {
    std::cerr << e.to_json().dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "InternalError"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
