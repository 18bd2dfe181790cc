#pragma once

// Orthogonal alignment of a source embedding space onto a target space,
// mutual-nearest-neighbor dictionary induction, and lexicon-induction
// evaluation. Vectors are rows; a source vector x maps to x W.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <fmt/format.h>

#include "clir/embedding_store.hpp"
#include "clir/error.hpp"
#include "clir/parallel.hpp"

namespace clir {

enum class DictionarySource { file, mutual_nn };

/// Translation pairs. A source term may have several targets; an exact
/// (source, target) pair is stored once.
class SeedDictionary {
 public:
  using Pair = std::pair<std::string, std::string>;

  explicit SeedDictionary(DictionarySource provenance = DictionarySource::file)
      : provenance_(provenance) {}

  /// Returns false if the pair was already present.
  bool add(std::string source, std::string target) {
    Pair p{std::move(source), std::move(target)};
    if (!seen_.insert(p).second) return false;
    pairs_.push_back(std::move(p));
    return true;
  }

  const std::vector<Pair>& pairs() const noexcept { return pairs_; }
  std::size_t size() const noexcept { return pairs_.size(); }
  bool empty() const noexcept { return pairs_.empty(); }
  DictionarySource provenance() const noexcept { return provenance_; }

  /// Index pairs with both terms in-vocabulary, in dictionary order.
  std::vector<std::pair<std::size_t, std::size_t>> usable(const EmbeddingSpace& source,
                                                          const EmbeddingSpace& target) const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& [s, t] : pairs_) {
      auto si = source.find(s);
      auto ti = target.find(t);
      if (si && ti) out.emplace_back(*si, *ti);
    }
    return out;
  }

 private:
  DictionarySource provenance_;
  std::vector<Pair> pairs_;
  std::set<Pair> seen_;
};

struct DictionaryReport {
  std::size_t lines = 0;
  std::size_t duplicates = 0;
};

/// One pair per line: `source<TAB or space>target`. Blank lines are skipped.
inline SeedDictionary load_dictionary(std::istream& in, DictionaryReport* report = nullptr) {
  DictionaryReport local;
  DictionaryReport& rep = report ? *report : local;
  rep = {};
  SeedDictionary dict(DictionarySource::file);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto fields = detail::split_ws(detail::trim_line(raw));
    if (fields.empty()) continue;
    if (fields.size() != 2) {
      throw FormatError(fmt::format("dictionary line {}: expected 2 fields, got {}", line_no,
                                    fields.size()));
    }
    ++rep.lines;
    if (!dict.add(std::string(fields[0]), std::string(fields[1]))) ++rep.duplicates;
  }
  return dict;
}

inline SeedDictionary load_dictionary(const std::string& path, DictionaryReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open dictionary '{}'", path));
  return load_dictionary(in, report);
}

/// Square orthogonal map from source space into the target (shared) space.
struct AlignmentMap {
  Eigen::MatrixXd W;
  std::string source_lang;
  std::string target_lang;
  std::size_t fitted_on = 0;
  std::optional<std::string> warning;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(W.rows()); }

  static AlignmentMap identity(std::size_t dim) {
    AlignmentMap m;
    m.W = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    return m;
  }

  /// max |WᵀW - I|
  double orthogonality_error() const {
    const Eigen::MatrixXd gram = W.transpose() * W;
    return (gram - Eigen::MatrixXd::Identity(W.rows(), W.cols())).cwiseAbs().maxCoeff();
  }

  /// out = x W
  void project(std::span<const double> x, std::span<double> out) const {
    const auto d = W.rows();
    for (Eigen::Index j = 0; j < d; ++j) {
      double sum = 0.0;
      for (Eigen::Index i = 0; i < d; ++i) sum += x[static_cast<std::size_t>(i)] * W(i, j);
      out[static_cast<std::size_t>(j)] = sum;
    }
  }
};

struct FitOptions {
  // Subtract per-dimension means of the paired rows before the SVD.
  bool center = false;
};

/// Orthogonal Procrustes: W = U Vᵀ where U Σ Vᵀ = svd(XᵀY), X and Y the
/// stacked source and target rows of the usable pairs. Minimizes ‖XW − Y‖_F.
inline AlignmentMap procrustes_fit(const EmbeddingSpace& source, const EmbeddingSpace& target,
                                   const SeedDictionary& dict, const FitOptions& opts = {}) {
  if (!source.normalized() || !target.normalized()) {
    throw ContractError("procrustes_fit requires normalized spaces");
  }
  if (source.dim() != target.dim()) {
    throw ContractError(fmt::format("procrustes_fit requires equal dimensions (source {}, target {})",
                                    source.dim(), target.dim()));
  }
  const auto pairs = dict.usable(source, target);
  if (pairs.empty()) throw ContractError("procrustes_fit: no usable pairs");

  const auto d = static_cast<Eigen::Index>(source.dim());
  const auto k = static_cast<Eigen::Index>(pairs.size());
  Eigen::MatrixXd X(k, d), Y(k, d);
  for (Eigen::Index r = 0; r < k; ++r) {
    const auto [si, ti] = pairs[static_cast<std::size_t>(r)];
    X.row(r) = Eigen::Map<const Eigen::RowVectorXd>(source.vector(si).data(), d);
    Y.row(r) = Eigen::Map<const Eigen::RowVectorXd>(target.vector(ti).data(), d);
  }
  if (opts.center) {
    X.rowwise() -= X.colwise().mean();
    Y.rowwise() -= Y.colwise().mean();
  }
  const Eigen::MatrixXd cross = X.transpose() * Y;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);

  AlignmentMap map;
  map.W = svd.matrixU() * svd.matrixV().transpose();
  map.source_lang = source.lang();
  map.target_lang = target.lang();
  map.fitted_on = pairs.size();
  if (k < d) {
    map.warning = fmt::format("fitted on {} pairs, fewer than dimension {}", k, d);
  }
  return map;
}

/// Projects every vector through the map and re-normalizes.
inline EmbeddingSpace apply_alignment(EmbeddingSpace space, const AlignmentMap& map) {
  if (space.dim() != map.dim()) {
    throw ContractError(fmt::format("space dimension {} does not match map dimension {}", space.dim(),
                                    map.dim()));
  }
  std::string lang = fmt::format("{}→{}", space.lang().empty() ? map.source_lang : space.lang(),
                                 map.target_lang);
  auto out = transform_space(std::move(space),
                             [&](std::span<const double> in, std::span<double> dst) { map.project(in, dst); });
  out.set_lang(std::move(lang));
  return out;
}

/// Text persistence: `#` metadata lines, a line with the dimension, then
/// dim rows of dim reals. Values round-trip exactly.
inline void write_alignment(std::ostream& out, const AlignmentMap& map) {
  out << "# source_lang=" << map.source_lang << '\n';
  out << "# target_lang=" << map.target_lang << '\n';
  out << "# fitted_on=" << map.fitted_on << '\n';
  out << map.dim() << '\n';
  for (Eigen::Index i = 0; i < map.W.rows(); ++i) {
    for (Eigen::Index j = 0; j < map.W.cols(); ++j) {
      if (j) out << ' ';
      out << fmt::format("{}", map.W(i, j));
    }
    out << '\n';
  }
}

inline AlignmentMap read_alignment(std::istream& in) {
  AlignmentMap map;
  std::string raw;
  std::size_t line_no = 0;
  std::optional<std::size_t> dim;
  Eigen::Index row = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = detail::trim_line(raw);
    if (line.starts_with('#')) {
      line.remove_prefix(1);
      auto fields = detail::split_ws(line);
      if (fields.size() != 1) continue;
      const auto eq = fields[0].find('=');
      if (eq == std::string_view::npos) continue;
      const auto key = fields[0].substr(0, eq);
      const auto value = fields[0].substr(eq + 1);
      if (key == "source_lang") map.source_lang = std::string(value);
      else if (key == "target_lang") map.target_lang = std::string(value);
      else if (key == "fitted_on") map.fitted_on = static_cast<std::size_t>(detail::parse_integer(value).value_or(0));
      continue;
    }
    auto fields = detail::split_ws(line);
    if (fields.empty()) continue;
    if (!dim) {
      auto d = fields.size() == 1 ? detail::parse_integer(fields[0]) : std::nullopt;
      if (!d || *d <= 0) throw FormatError(fmt::format("alignment map line {}: expected dimension", line_no));
      dim = static_cast<std::size_t>(*d);
      map.W.resize(static_cast<Eigen::Index>(*dim), static_cast<Eigen::Index>(*dim));
      continue;
    }
    if (fields.size() != *dim || row >= map.W.rows()) {
      throw FormatError(fmt::format("alignment map line {}: expected {} values", line_no, *dim));
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      auto x = detail::parse_real(fields[j]);
      if (!x || !std::isfinite(*x)) throw FormatError(fmt::format("alignment map line {}: bad value", line_no));
      map.W(row, static_cast<Eigen::Index>(j)) = *x;
    }
    ++row;
  }
  if (!dim || row != map.W.rows()) throw FormatError("alignment map is truncated");
  return map;
}

inline AlignmentMap read_alignment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open alignment map '{}'", path));
  return read_alignment(in);
}

namespace detail {

// Best index under descending score, ascending term.
inline std::size_t argmax(const EmbeddingSpace& space, const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best] || (scores[i] == scores[best] && space.term(i) < space.term(best))) {
      best = i;
    }
  }
  return best;
}

// For every query-side row, its best candidate and that score.
inline std::vector<Neighbor> best_matches(const EmbeddingSpace& queries, const EmbeddingSpace& candidates,
                                          const MetricSpec& metric, unsigned jobs) {
  std::vector<Neighbor> best(queries.size());
  if (candidates.empty()) return best;
  std::optional<CslsScaler> csls;
  if (metric.metric == Metric::csls) csls.emplace(queries, candidates, metric.csls_n, jobs);
  parallel_for(queries.size(), jobs, [&](std::size_t i) {
    std::vector<double> scores;
    if (csls) csls->scan(queries.vector(i), scores);
    else cosine_scan(candidates, queries.vector(i), queries.norm(i), scores);
    const std::size_t b = argmax(candidates, scores);
    best[i] = {b, scores[b]};
  });
  return best;
}

inline bool defined_similarity(const MetricSpec& m, double score) {
  return m.metric == Metric::csls ? score > -4.0 : score > kUndefinedSimilarity;
}

}  // namespace detail

/// Pairs (s, t) where t is s's 1-NN in `target` and s is t's 1-NN in
/// `source`, sorted by descending similarity then terms.
inline SeedDictionary mutual_nn_dictionary(const EmbeddingSpace& source, const EmbeddingSpace& target,
                                           const MetricSpec& metric = {},
                                           std::optional<std::size_t> max_pairs = std::nullopt,
                                           unsigned jobs = 1) {
  if (source.dim() != target.dim()) throw ContractError("mutual_nn_dictionary requires equal dimensions");
  const auto forward = detail::best_matches(source, target, metric, jobs);
  const auto backward = detail::best_matches(target, source, metric, jobs);

  struct Candidate {
    std::size_t s, t;
    double score;
  };
  std::vector<Candidate> found;
  for (std::size_t s = 0; s < source.size() && !target.empty(); ++s) {
    const auto t = forward[s].index;
    if (backward[t].index == s && detail::defined_similarity(metric, forward[s].score)) {
      found.push_back({s, t, forward[s].score});
    }
  }
  std::sort(found.begin(), found.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (source.term(a.s) != source.term(b.s)) return source.term(a.s) < source.term(b.s);
    return target.term(a.t) < target.term(b.t);
  });
  if (max_pairs && found.size() > *max_pairs) found.resize(*max_pairs);

  SeedDictionary dict(DictionarySource::mutual_nn);
  for (const auto& c : found) dict.add(source.term(c.s), target.term(c.t));
  return dict;
}

struct BliResult {
  double precision = 0.0;
  std::size_t evaluated = 0;
  std::size_t hits = 0;
  std::size_t missing_source = 0;  // test source terms not in the source vocabulary
  std::size_t missing_target = 0;  // in-vocab sources none of whose gold targets exist
};

/// Precision@k of lexicon induction: a source term counts as a hit when any
/// of its gold targets is among its k nearest targets.
inline BliResult evaluate_bli(const EmbeddingSpace& source, const EmbeddingSpace& target,
                              const SeedDictionary& test_pairs, std::size_t k,
                              const MetricSpec& metric = {}, unsigned jobs = 1) {
  if (k == 0) throw ContractError("evaluate_bli requires k >= 1");
  if (source.dim() != target.dim()) throw ContractError("evaluate_bli requires equal dimensions");

  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::string>> gold;
  for (const auto& [s, t] : test_pairs.pairs()) {
    auto [it, inserted] = gold.try_emplace(s);
    if (inserted) order.push_back(s);
    it->second.push_back(t);
  }

  BliResult result;
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> queries;
  for (const auto& s : order) {
    auto si = source.find(s);
    if (!si) {
      ++result.missing_source;
      continue;
    }
    std::vector<std::size_t> targets;
    for (const auto& t : gold[s]) {
      if (auto ti = target.find(t)) targets.push_back(*ti);
    }
    if (targets.empty()) {
      ++result.missing_target;
      continue;
    }
    queries.emplace_back(*si, std::move(targets));
  }
  if (queries.empty()) throw ContractError("evaluate_bli: no usable pairs");

  std::optional<CslsScaler> csls;
  if (metric.metric == Metric::csls) csls.emplace(source, target, metric.csls_n, jobs);
  std::vector<char> hit(queries.size(), 0);
  parallel_for(queries.size(), jobs, [&](std::size_t q) {
    const auto& [si, targets] = queries[q];
    const auto nn = csls ? nearest_neighbors(*csls, source.vector(si), k)
                         : nearest_neighbors(target, source.vector(si), k);
    for (const auto& n : nn) {
      if (std::find(targets.begin(), targets.end(), n.index) != targets.end()) {
        hit[q] = 1;
        break;
      }
    }
  });
  result.evaluated = queries.size();
  result.hits = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
  result.precision = static_cast<double>(result.hits) / static_cast<double>(result.evaluated);
  return result;
}

/// Alternates mutual-NN dictionary extraction in the aligned space with a
/// Procrustes refit on the original source vectors.
inline AlignmentMap refine_alignment(const EmbeddingSpace& source, const EmbeddingSpace& target,
                                     AlignmentMap map, std::size_t iterations,
                                     const MetricSpec& metric = {},
                                     std::optional<std::size_t> max_pairs = std::nullopt,
                                     const FitOptions& fit = {}, unsigned jobs = 1) {
  for (std::size_t it = 0; it < iterations; ++it) {
    const auto aligned = apply_alignment(source, map);
    const auto dict = mutual_nn_dictionary(aligned, target, metric, max_pairs, jobs);
    if (dict.empty()) throw ContractError("refinement produced an empty mutual-NN dictionary");
    map = procrustes_fit(source, target, dict, fit);
  }
  return map;
}

}  // namespace clir
