#pragma once

// Word-embedding spaces: text-format loading, normalization, cosine and
// exact nearest-neighbor search (plain cosine or CSLS).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <fmt/format.h>

#include "clir/error.hpp"
#include "clir/parallel.hpp"

namespace clir {

using Vector = std::vector<double>;

namespace detail {

struct StringHash {
  using is_transparent = void;
  std::size_t operator()(std::string_view s) const noexcept {
    return std::hash<std::string_view>{}(s);
  }
};

// Summation in index order; dot(u, v) and dot(v, u) are bitwise equal.
inline double dot(std::span<const double> u, std::span<const double> v) noexcept {
  double sum = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) sum += u[i] * v[i];
  return sum;
}

inline double norm(std::span<const double> u) noexcept { return std::sqrt(dot(u, u)); }

inline std::string_view trim_line(std::string_view line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.remove_suffix(1);
  return line;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline std::optional<double> parse_real(std::string_view s) {
  double value = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) return std::nullopt;
  return value;
}

inline std::optional<long long> parse_integer(std::string_view s) {
  long long value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

}  // namespace detail

/// A vocabulary of unique terms, each with a dense vector of fixed dimension.
///
/// Vectors are stored row-major in one contiguous buffer. Zero vectors are
/// kept (never dropped) so term indices stay stable; `is_zero` flags them.
class EmbeddingSpace {
 public:
  EmbeddingSpace() = default;
  EmbeddingSpace(std::string lang, std::size_t dim) : lang_(std::move(lang)), dim_(dim) {
    if (dim == 0) throw ContractError("embedding dimension must be positive");
  }

  /// Appends a term. Returns false (and stores nothing) if the term exists.
  bool add(std::string term, std::span<const double> vec) {
    if (vec.size() != dim_) {
      throw ContractError(fmt::format("vector for '{}' has {} components, expected {}", term,
                                      vec.size(), dim_));
    }
    for (double x : vec) {
      if (!std::isfinite(x)) throw ContractError(fmt::format("non-finite value in vector for '{}'", term));
    }
    if (index_.contains(term)) return false;
    index_.emplace(term, vocab_.size());
    vocab_.push_back(std::move(term));
    data_.insert(data_.end(), vec.begin(), vec.end());
    norms_.push_back(detail::norm(vec));
    normalized_ = false;
    return true;
  }

  const std::string& lang() const noexcept { return lang_; }
  void set_lang(std::string lang) { lang_ = std::move(lang); }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return vocab_.size(); }
  bool empty() const noexcept { return vocab_.empty(); }
  bool normalized() const noexcept { return normalized_; }
  const std::vector<std::string>& vocab() const noexcept { return vocab_; }
  const std::string& term(std::size_t i) const { return vocab_.at(i); }

  std::optional<std::size_t> find(std::string_view term) const {
    auto it = index_.find(term);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(std::string_view term) const { return index_.find(term) != index_.end(); }

  std::size_t index_of(std::string_view term) const {
    auto idx = find(term);
    if (!idx) throw ContractError(fmt::format("term '{}' not in vocabulary", term));
    return *idx;
  }

  std::span<const double> vector(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<const double> vector(std::string_view term) const { return vector(index_of(term)); }

  /// Euclidean norm of the stored vector, computed when it was stored.
  double norm(std::size_t i) const { return norms_[i]; }
  bool is_zero(std::size_t i) const { return norms_[i] == 0.0; }
  std::size_t zero_vectors() const {
    return static_cast<std::size_t>(std::count(norms_.begin(), norms_.end(), 0.0));
  }

  const std::vector<double>& data() const noexcept { return data_; }

 private:
  friend EmbeddingSpace normalize_space(EmbeddingSpace space);
  template <typename Fn>
  friend EmbeddingSpace transform_space(EmbeddingSpace space, Fn&& fn);

  std::string lang_;
  std::size_t dim_ = 0;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t, detail::StringHash, std::equal_to<>> index_;
  std::vector<double> data_;
  std::vector<double> norms_;
  bool normalized_ = false;
};

/// Scales every nonzero vector to unit length. Zero vectors stay zero and
/// are reported through `zero_vectors()`.
inline EmbeddingSpace normalize_space(EmbeddingSpace space) {
  const std::size_t dim = space.dim_;
  for (std::size_t i = 0; i < space.size(); ++i) {
    std::span<double> row(space.data_.data() + i * dim, dim);
    const double n = space.norms_[i];
    if (n > 0.0) {
      for (double& x : row) x /= n;
      space.norms_[i] = detail::norm(row);
    }
  }
  space.normalized_ = true;
  return space;
}

/// Rewrites every vector in place via fn(in, out), then re-normalizes.
template <typename Fn>
EmbeddingSpace transform_space(EmbeddingSpace space, Fn&& fn) {
  const std::size_t dim = space.dim_;
  Vector scratch(dim);
  for (std::size_t i = 0; i < space.size(); ++i) {
    std::span<double> row(space.data_.data() + i * dim, dim);
    fn(std::span<const double>(row), std::span<double>(scratch));
    std::copy(scratch.begin(), scratch.end(), row.begin());
    space.norms_[i] = detail::norm(row);
  }
  return normalize_space(std::move(space));
}

struct LoadOptions {
  std::optional<std::size_t> max_vocab;
  std::optional<std::size_t> expected_dim;
  std::string lang;
};

struct LoadReport {
  std::size_t lines = 0;
  std::size_t duplicates = 0;
  bool header = false;
};

/// Reads the word2vec/fastText text format: an optional "V D" header line,
/// then `term x1 ... xD` per line. The first whitespace run ends the term.
inline EmbeddingSpace load_embeddings(std::istream& in, const LoadOptions& opts = {},
                                      LoadReport* report = nullptr) {
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  rep = {};
  std::optional<std::size_t> dim = opts.expected_dim;
  EmbeddingSpace space;
  bool space_ready = false;
  std::string raw;
  std::size_t line_no = 0;
  Vector values;

  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = detail::trim_line(raw);
    auto fields = detail::split_ws(line);
    if (fields.empty()) continue;

    if (line_no == 1 && fields.size() == 2) {
      auto v = detail::parse_integer(fields[0]);
      auto d = detail::parse_integer(fields[1]);
      if (v && d && *v >= 0 && *d > 0) {
        if (opts.expected_dim && *opts.expected_dim != static_cast<std::size_t>(*d)) {
          throw FormatError(fmt::format("header declares dimension {}, expected {}", *d,
                                        *opts.expected_dim));
        }
        dim = static_cast<std::size_t>(*d);
        rep.header = true;
        continue;
      }
    }

    const std::size_t got = fields.size() - 1;
    if (!dim) dim = got;
    if (got != *dim || got == 0) {
      throw FormatError(fmt::format("dimension mismatch at line {}: got {} values, expected {}",
                                    line_no, got, *dim));
    }
    if (!space_ready) {
      space = EmbeddingSpace(opts.lang, *dim);
      space_ready = true;
    }
    values.clear();
    for (std::size_t i = 1; i < fields.size(); ++i) {
      auto x = detail::parse_real(fields[i]);
      if (!x) throw FormatError(fmt::format("malformed number '{}' at line {}", fields[i], line_no));
      if (!std::isfinite(*x)) throw FormatError(fmt::format("non-finite value at line {}", line_no));
      values.push_back(*x);
    }
    ++rep.lines;
    if (!space.add(std::string(fields[0]), values)) {
      ++rep.duplicates;
      continue;
    }
    if (opts.max_vocab && space.size() >= *opts.max_vocab) break;
  }
  if (!space_ready) {
    if (!dim) throw FormatError("embedding file contains no vectors");
    space = EmbeddingSpace(opts.lang, *dim);
  }
  return space;
}

inline EmbeddingSpace load_embeddings(const std::string& path, const LoadOptions& opts = {},
                                      LoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open embedding file '{}'", path));
  return load_embeddings(in, opts, report);
}

/// Writes the text format with a header; values round-trip exactly.
inline void write_embeddings(std::ostream& out, const EmbeddingSpace& space) {
  out << space.size() << ' ' << space.dim() << '\n';
  for (std::size_t i = 0; i < space.size(); ++i) {
    out << space.term(i);
    for (double x : space.vector(i)) out << ' ' << fmt::format("{}", x);
    out << '\n';
  }
}

/// Cosine similarity clamped to [-1, 1]; nullopt when either vector is zero.
inline std::optional<double> cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw ContractError(fmt::format("cosine of vectors with lengths {} and {}", u.size(), v.size()));
  }
  const double nu = detail::norm(u);
  const double nv = detail::norm(v);
  if (nu == 0.0 || nv == 0.0) return std::nullopt;
  return std::clamp(detail::dot(u, v) / (nu * nv), -1.0, 1.0);
}

struct Neighbor {
  std::size_t index;
  double score;
};

// Score assigned to vocabulary entries whose similarity is undefined.
inline constexpr double kUndefinedSimilarity = -2.0;

namespace detail {

// Cosine of `query` (norm `qn`) against every row of `space`.
inline void cosine_scan(const EmbeddingSpace& space, std::span<const double> query, double qn,
                        std::vector<double>& out) {
  out.resize(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) {
    const double n = space.norm(i);
    out[i] = (qn == 0.0 || n == 0.0)
                 ? kUndefinedSimilarity
                 : std::clamp(dot(query, space.vector(i)) / (qn * n), -1.0, 1.0);
  }
}

inline std::vector<Neighbor> top_k(const EmbeddingSpace& space, const std::vector<double>& scores,
                                   std::size_t k) {
  std::vector<Neighbor> all;
  all.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) all.push_back({i, scores[i]});
  k = std::min(k, all.size());
  auto better = [&](const Neighbor& a, const Neighbor& b) {
    if (a.score != b.score) return a.score > b.score;
    return space.term(a.index) < space.term(b.index);
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

// Mean of the `n` largest values (fewer if scores is shorter).
inline double mean_top_n(std::vector<double> scores, std::size_t n) {
  n = std::min(n, scores.size());
  if (n == 0) return 0.0;
  std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(n), scores.end(),
                    std::greater<>{});
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += scores[i];
  return sum / static_cast<double>(n);
}

}  // namespace detail

/// Exact top-k cosine neighbors of `query` over the whole vocabulary.
/// Ordered by descending score, then ascending term.
inline std::vector<Neighbor> nearest_neighbors(const EmbeddingSpace& space,
                                               std::span<const double> query, std::size_t k) {
  if (query.size() != space.dim()) {
    throw ContractError(fmt::format("query has dimension {}, space has {}", query.size(), space.dim()));
  }
  if (k == 0) return {};
  std::vector<double> scores;
  detail::cosine_scan(space, query, detail::norm(query), scores);
  return detail::top_k(space, scores, k);
}

/// Precomputed neighborhoods for cross-domain similarity local scaling
/// between a query-side space and a candidate space:
///   csls(x, y) = 2 cos(x, y) - r_cand(x) - r_query(y)
/// where r_query(y) is the mean cosine of candidate y to its n nearest
/// neighbors in the query-side space, and r_cand(x) is the mean cosine of x
/// to its n nearest candidates.
class CslsScaler {
 public:
  CslsScaler(const EmbeddingSpace& query_side, const EmbeddingSpace& candidates,
             std::size_t n, unsigned jobs = 1)
      : candidates_(&candidates), n_(n) {
    if (n == 0) throw ContractError("CSLS neighborhood size must be at least 1");
    if (query_side.dim() != candidates.dim()) {
      throw ContractError("CSLS spaces must share dimensionality");
    }
    radius_.resize(candidates.size());
    parallel_for(candidates.size(), jobs, [&](std::size_t i) {
      std::vector<double> scores;
      detail::cosine_scan(query_side, candidates.vector(i), candidates.norm(i), scores);
      radius_[i] = detail::mean_top_n(std::move(scores), n_);
    });
  }

  const EmbeddingSpace& candidates() const noexcept { return *candidates_; }
  std::size_t neighborhood() const noexcept { return n_; }
  double candidate_radius(std::size_t i) const { return radius_[i]; }

  /// Mean cosine of `query` to its n nearest candidates.
  double query_radius(std::span<const double> query) const {
    std::vector<double> scores;
    detail::cosine_scan(*candidates_, query, detail::norm(query), scores);
    return detail::mean_top_n(std::move(scores), n_);
  }

  /// CSLS of `query` against every candidate.
  void scan(std::span<const double> query, std::vector<double>& out) const {
    detail::cosine_scan(*candidates_, query, detail::norm(query), out);
    const double rq = detail::mean_top_n(out, n_);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i] != kUndefinedSimilarity) out[i] = 2.0 * out[i] - rq - radius_[i];
      else out[i] = -4.0;  // below the CSLS range [-3, 3]
    }
  }

 private:
  const EmbeddingSpace* candidates_;
  std::size_t n_;
  std::vector<double> radius_;
};

/// Exact top-k CSLS neighbors of `query` among the scaler's candidates.
inline std::vector<Neighbor> nearest_neighbors(const CslsScaler& csls, std::span<const double> query,
                                               std::size_t k) {
  const EmbeddingSpace& space = csls.candidates();
  if (query.size() != space.dim()) {
    throw ContractError(fmt::format("query has dimension {}, space has {}", query.size(), space.dim()));
  }
  if (k == 0) return {};
  std::vector<double> scores;
  csls.scan(query, scores);
  return detail::top_k(space, scores, k);
}

enum class Metric { cosine, csls };

inline Metric parse_metric(std::string_view name) {
  if (name == "cosine") return Metric::cosine;
  if (name == "csls") return Metric::csls;
  throw UsageError(fmt::format("unknown metric '{}' (expected cosine or csls)", name));
}

/// Similarity choice for cross-space retrieval; `csls_n` only applies to CSLS.
struct MetricSpec {
  Metric metric = Metric::cosine;
  std::size_t csls_n = 10;
};

}  // namespace clir
