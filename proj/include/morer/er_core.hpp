#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "morer/error.hpp"
#include "morer/parallel.hpp"
#include "morer/random.hpp"

namespace morer {

namespace fs = std::filesystem;

struct RecordRef {
  std::string source_id;
  std::string record_id;

  auto operator<=>(const RecordRef&) const = default;
  bool operator==(const RecordRef&) const = default;
};

inline std::string to_string(const RecordRef& r) { return r.source_id + "/" + r.record_id; }

/// One record pair's similarities. `label` is only filled from oracle data.
struct FeatureVector {
  RecordRef left;
  RecordRef right;
  std::vector<double> values;
  std::optional<bool> label;

  bool operator==(const FeatureVector&) const = default;
};

/// Ordered (first <= second) pair of source ids naming one ER problem.
struct SourcePair {
  std::string first;
  std::string second;

  static SourcePair normalized(std::string a, std::string b) {
    if (b < a) std::swap(a, b);
    return {std::move(a), std::move(b)};
  }
  bool is_self() const { return first == second; }

  auto operator<=>(const SourcePair&) const = default;
  bool operator==(const SourcePair&) const = default;
};

using ProblemId = std::string;

inline ProblemId problem_id(const SourcePair& pair) { return pair.first + ":" + pair.second; }

/// Puts the lexicographically smaller record reference on the left, so that
/// (a,b) and (b,a) denote the same comparison.
inline void normalize_pair(FeatureVector& w) {
  if (w.right < w.left) std::swap(w.left, w.right);
}

inline nlohmann::json pair_json(const RecordRef& a, const RecordRef& b) {
  return {{"left_source", a.source_id},
          {"left_id", a.record_id},
          {"right_source", b.source_id},
          {"right_id", b.record_id}};
}

struct ERProblem {
  SourcePair sources;
  std::vector<std::string> feature_names;
  std::vector<FeatureVector> vectors;

  ProblemId id() const { return problem_id(sources); }
  std::size_t arity() const { return feature_names.size(); }
  std::size_t size() const { return vectors.size(); }
};

/// Sorts vectors into canonical order and checks the problem invariants.
inline void finalize_problem(ERProblem& p) {
  if (p.vectors.empty()) {
    throw Error(ErrorKind::InvalidArgument, "ER problem " + p.id() + " has no vectors",
                {{"problem", p.id()}});
  }
  for (auto& w : p.vectors) {
    normalize_pair(w);
    if (SourcePair::normalized(w.left.source_id, w.right.source_id) != p.sources) {
      throw Error(ErrorKind::InvalidArgument,
                  "vector " + to_string(w.left) + " ~ " + to_string(w.right) +
                      " does not belong to problem " + p.id(),
                  {{"problem", p.id()}});
    }
    if (w.values.size() != p.arity()) {
      throw Error(ErrorKind::ArityMismatch, "vector arity differs from problem arity",
                  {{"problem", p.id()}, {"expected", p.arity()}, {"got", w.values.size()}});
    }
  }
  std::sort(p.vectors.begin(), p.vectors.end(), [](const FeatureVector& a, const FeatureVector& b) {
    return std::tie(a.left, a.right) < std::tie(b.left, b.right);
  });
  for (std::size_t i = 1; i < p.vectors.size(); ++i) {
    const auto& a = p.vectors[i - 1];
    const auto& b = p.vectors[i];
    if (a.left == b.left && a.right == b.right) {
      throw Error(ErrorKind::DuplicatePair, "pair appears twice in problem " + p.id(),
                  pair_json(a.left, a.right));
    }
  }
}

/// Ground-truth labels keyed by the normalized record pair.
class GroundTruth {
 public:
  void set(RecordRef a, RecordRef b, bool match) {
    if (b < a) std::swap(a, b);
    labels_[key(a, b)] = match;
  }

  std::optional<bool> find(const RecordRef& a, const RecordRef& b) const {
    const auto it = (b < a) ? labels_.find(key(b, a)) : labels_.find(key(a, b));
    if (it == labels_.end()) return std::nullopt;
    return it->second;
  }

  bool label(const RecordRef& a, const RecordRef& b) const {
    if (auto v = find(a, b)) return *v;
    throw Error(ErrorKind::OracleMiss, "ground truth lacks pair " + to_string(a) + " ~ " + to_string(b),
                pair_json(a, b));
  }

  std::size_t size() const { return labels_.size(); }
  std::size_t match_count() const {
    return static_cast<std::size_t>(
        std::count_if(labels_.begin(), labels_.end(), [](const auto& kv) { return kv.second; }));
  }

 private:
  static std::string key(const RecordRef& a, const RecordRef& b) {
    std::string k;
    k.reserve(a.source_id.size() + a.record_id.size() + b.source_id.size() + b.record_id.size() + 3);
    k.append(a.source_id).push_back('\x1f');
    k.append(a.record_id).push_back('\x1f');
    k.append(b.source_id).push_back('\x1f');
    k.append(b.record_id);
    return k;
  }

  std::unordered_map<std::string, bool> labels_;
};

struct ProblemEntry {
  std::string source_a;
  std::string source_b;
  std::string path;
};

struct DatasetManifest {
  std::string name;
  std::vector<std::string> feature_names;
  std::vector<ProblemEntry> problems;
  std::optional<std::string> oracle_path;
  fs::path base_dir;  // paths above are relative to this directory
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<ERProblem> problems;
  std::optional<GroundTruth> oracle;
  std::size_t dropped_reflexive = 0;

  std::size_t vector_count() const {
    std::size_t n = 0;
    for (const auto& p : problems) n += p.size();
    return n;
  }
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::optional<double> parse_double(std::string_view cell) {
  while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
  while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) return std::nullopt;
  return v;
}

inline std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::MissingFile, "cannot open " + path.string(), {{"path", path.string()}});
  }
  return in;
}

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline void check_id(std::string_view id, const fs::path& path, std::size_t line) {
  if (id.empty() || id.find_first_of(":/\t") != std::string_view::npos) {
    throw Error(ErrorKind::ParseError,
                "empty id or id containing ':', '/' or TAB in " + path.string(),
                {{"path", path.string()}, {"row", line}, {"id", std::string(id)}});
  }
}

}  // namespace detail

struct FeatureFile {
  std::vector<std::string> feature_names;
  std::vector<FeatureVector> vectors;
  std::size_t dropped_reflexive = 0;
};

/// Reads `left_source,left_id,right_source,right_id,f_1,...,f_t`. When
/// `expected_arity` is set every row must match it; otherwise the header
/// decides. Reflexive pairs (a record compared to itself) are dropped.
inline FeatureFile read_feature_csv(const fs::path& path,
                                    std::optional<std::size_t> expected_arity = std::nullopt) {
  auto in = detail::open_input(path);
  FeatureFile out;
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorKind::ParseError, "missing header in " + path.string(), {{"path", path.string()}});
  }
  const auto header = detail::split_csv_line(line);
  if (header.size() < 5) {
    throw Error(ErrorKind::ParseError, "header needs 4 id columns and at least one feature",
                {{"path", path.string()}, {"row", 1}});
  }
  for (std::size_t c = 4; c < header.size(); ++c) out.feature_names.emplace_back(header[c]);
  const std::size_t arity = expected_arity.value_or(out.feature_names.size());
  if (out.feature_names.size() != arity) {
    throw Error(ErrorKind::ArityMismatch, "header arity differs in " + path.string(),
                {{"path", path.string()}, {"row", 1}, {"expected", arity}, {"got", out.feature_names.size()}});
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() < 4 || cells.size() - 4 != arity) {
      throw Error(ErrorKind::ArityMismatch, "row arity differs in " + path.string(),
                  {{"path", path.string()},
                   {"row", line_no},
                   {"expected", arity},
                   {"got", cells.size() < 4 ? 0 : cells.size() - 4}});
    }
    FeatureVector w;
    for (int c = 0; c < 4; ++c) detail::check_id(cells[c], path, line_no);
    w.left = {std::string(cells[0]), std::string(cells[1])};
    w.right = {std::string(cells[2]), std::string(cells[3])};
    w.values.reserve(arity);
    for (std::size_t c = 0; c < arity; ++c) {
      const auto v = detail::parse_double(cells[c + 4]);
      if (!v) {
        throw Error(ErrorKind::ParseError, "missing or malformed feature value",
                    {{"path", path.string()}, {"row", line_no}, {"column", out.feature_names[c]}});
      }
      if (!std::isfinite(*v) || *v < 0.0 || *v > 1.0) {
        throw Error(ErrorKind::ValueOutOfRange,
                    "value " + detail::format_double(*v) + " outside [0,1] at row " +
                        std::to_string(line_no) + ", column " + out.feature_names[c],
                    {{"path", path.string()},
                     {"row", line_no},
                     {"column", out.feature_names[c]},
                     {"value", std::isfinite(*v) ? nlohmann::json(*v) : nlohmann::json(cells[c + 4])}});
      }
      w.values.push_back(*v);
    }
    if (w.left == w.right) {
      ++out.dropped_reflexive;
      continue;
    }
    normalize_pair(w);
    out.vectors.push_back(std::move(w));
  }
  return out;
}

/// Reads `left_source,left_id,right_source,right_id,label` (label 0/1 or
/// true/false).
inline GroundTruth read_ground_truth(const fs::path& path) {
  auto in = detail::open_input(path);
  GroundTruth truth;
  std::string line;
  std::getline(in, line);  // header
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 5) {
      throw Error(ErrorKind::ParseError, "ground truth rows need 5 columns",
                  {{"path", path.string()}, {"row", line_no}});
    }
    bool match;
    const auto label = cells[4];
    if (label == "1" || label == "true" || label == "True" || label == "TRUE") {
      match = true;
    } else if (label == "0" || label == "false" || label == "False" || label == "FALSE") {
      match = false;
    } else {
      throw Error(ErrorKind::ParseError, "unrecognized label '" + std::string(label) + "'",
                  {{"path", path.string()}, {"row", line_no}});
    }
    truth.set({std::string(cells[0]), std::string(cells[1])}, {std::string(cells[2]), std::string(cells[3])},
              match);
  }
  return truth;
}

inline DatasetManifest read_manifest(const fs::path& manifest_path) {
  auto in = detail::open_input(manifest_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("manifest is not valid JSON: ") + e.what(),
                {{"path", manifest_path.string()}});
  }
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    for (const auto& e : j.at("problems")) {
      m.problems.push_back({e.at("source_a").get<std::string>(), e.at("source_b").get<std::string>(),
                            e.at("path").get<std::string>()});
    }
    if (j.contains("oracle_path") && !j["oracle_path"].is_null()) {
      m.oracle_path = j["oracle_path"].get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("manifest field error: ") + e.what(),
                {{"path", manifest_path.string()}});
  }
  if (m.feature_names.empty()) {
    throw Error(ErrorKind::ParseError, "manifest lists no features", {{"path", manifest_path.string()}});
  }
  m.base_dir = manifest_path.parent_path();
  return m;
}

inline bool problem_less(const ERProblem& a, const ERProblem& b) { return a.sources < b.sources; }

/// Loads every problem file named by the manifest (in parallel when
/// threads > 1), validates ranges and arity, merges files that share a
/// source pair, and returns problems sorted by source pair.
inline Dataset load_dataset(const fs::path& manifest_path, unsigned threads = 1) {
  Dataset ds;
  ds.manifest = read_manifest(manifest_path);
  const auto& m = ds.manifest;
  const std::size_t arity = m.feature_names.size();

  std::vector<FeatureFile> files(m.problems.size());
  parallel_for(m.problems.size(), threads,
               [&](std::size_t i) { files[i] = read_feature_csv(m.base_dir / m.problems[i].path, arity); });

  std::map<SourcePair, ERProblem> grouped;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto pair = SourcePair::normalized(m.problems[i].source_a, m.problems[i].source_b);
    auto& problem = grouped[pair];
    problem.sources = pair;
    problem.feature_names = m.feature_names;
    ds.dropped_reflexive += files[i].dropped_reflexive;
    for (auto& w : files[i].vectors) {
      if (SourcePair::normalized(w.left.source_id, w.right.source_id) != pair) {
        throw Error(ErrorKind::ParseError,
                    "row sources " + w.left.source_id + "," + w.right.source_id + " do not match problem " +
                        problem_id(pair),
                    {{"path", (m.base_dir / m.problems[i].path).string()}});
      }
      problem.vectors.push_back(std::move(w));
    }
  }
  for (auto& [pair, problem] : grouped) {
    if (problem.vectors.empty()) continue;
    finalize_problem(problem);
    ds.problems.push_back(std::move(problem));
  }
  if (m.oracle_path) {
    ds.oracle = read_ground_truth(m.base_dir / *m.oracle_path);
  }
  return ds;
}

/// Returns the shared arity of all problems.
inline std::size_t validate_arity(const std::vector<ERProblem>& problems) {
  if (problems.empty()) throw Error(ErrorKind::InvalidArgument, "no problems to validate");
  const std::size_t t = problems.front().arity();
  for (const auto& p : problems) {
    if (p.arity() != t) {
      throw Error(ErrorKind::ArityMismatch, "problem " + p.id() + " has arity " + std::to_string(p.arity()),
                  {{"problem", p.id()}, {"expected", t}, {"got", p.arity()}});
    }
  }
  return t;
}

inline void write_feature_csv(const ERProblem& p, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string(), {{"path", path.string()}});
  out << "left_source,left_id,right_source,right_id";
  for (const auto& f : p.feature_names) out << ',' << f;
  out << '\n';
  for (const auto& w : p.vectors) {
    out << w.left.source_id << ',' << w.left.record_id << ',' << w.right.source_id << ',' << w.right.record_id;
    for (double v : w.values) out << ',' << detail::format_double(v);
    out << '\n';
  }
}

/// Writes the label column for every labeled vector of `problems`.
inline void write_ground_truth(const std::vector<ERProblem>& problems, const GroundTruth& truth,
                               const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::MissingFile, "cannot write " + path.string(), {{"path", path.string()}});
  out << "left_source,left_id,right_source,right_id,label\n";
  for (const auto& p : problems) {
    for (const auto& w : p.vectors) {
      out << w.left.source_id << ',' << w.left.record_id << ',' << w.right.source_id << ','
          << w.right.record_id << ',' << (truth.label(w.left, w.right) ? 1 : 0) << '\n';
    }
  }
}

/// Writes a manifest plus one CSV per problem under `dir`.
inline void write_dataset(const std::string& name, const std::vector<ERProblem>& problems,
                          const GroundTruth* truth, const fs::path& dir) {
  if (problems.empty()) throw Error(ErrorKind::InvalidArgument, "cannot write an empty dataset");
  fs::create_directories(dir / "problems");
  nlohmann::json j;
  j["name"] = name;
  j["feature_names"] = problems.front().feature_names;
  j["problems"] = nlohmann::json::array();
  for (const auto& p : problems) {
    const std::string rel = "problems/" + p.sources.first + "__" + p.sources.second + ".csv";
    write_feature_csv(p, dir / rel);
    j["problems"].push_back({{"source_a", p.sources.first}, {"source_b", p.sources.second}, {"path", rel}});
  }
  if (truth) {
    write_ground_truth(problems, *truth, dir / "oracle.csv");
    j["oracle_path"] = "oracle.csv";
  } else {
    j["oracle_path"] = nullptr;
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << j.dump(2) << '\n';
}

/// Copies ground-truth labels onto the vectors of `p`.
inline void attach_labels(ERProblem& p, const GroundTruth& truth) {
  for (auto& w : p.vectors) w.label = truth.label(w.left, w.right);
}

struct ProblemSplit {
  std::vector<ERProblem> initial;   // P_I
  std::vector<ERProblem> unsolved;  // P_U
};

/// Assigns whole problems to the initial or the unsolved side via a seeded
/// shuffle of the canonically ordered problem list.
inline ProblemSplit split_by_source_pair(std::vector<ERProblem> problems, double ratio_init, std::uint64_t seed) {
  if (!(ratio_init > 0.0 && ratio_init < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "ratio_init must lie strictly between 0 and 1",
                {{"ratio_init", ratio_init}});
  }
  if (problems.size() < 2) {
    throw Error(ErrorKind::TooFewProblems, "need at least 2 problems to split", {{"count", problems.size()}});
  }
  std::sort(problems.begin(), problems.end(), problem_less);
  const auto total = static_cast<long long>(problems.size());
  const long long n_init = std::clamp(std::llround(ratio_init * static_cast<double>(total)), 1LL, total - 1);

  std::vector<std::size_t> order(problems.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<bool> initial(problems.size(), false);
  for (long long i = 0; i < n_init; ++i) initial[order[static_cast<std::size_t>(i)]] = true;

  ProblemSplit split;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    (initial[i] ? split.initial : split.unsolved).push_back(std::move(problems[i]));
  }
  return split;
}

}  // namespace morer
