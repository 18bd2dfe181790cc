#pragma once

// Retrieval models over an IndexedCollection: embedding aggregation with
// cosine relevance, query likelihood with Dirichlet smoothing (with or
// without term-by-term query translation), and rank fusion. Also TREC run
// file reading and writing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "clir/corpus_index.hpp"
#include "clir/embedding_store.hpp"
#include "clir/error.hpp"

namespace clir {

inline constexpr double kDefaultMu = 1000.0;
inline constexpr std::size_t kDefaultDepth = 1000;
// Score given when cosine relevance is undefined (zero query or document vector).
inline constexpr double kCosineSentinel = -2.0;
// Score given to empty documents by the query-likelihood models.
inline constexpr double kEmptyDocScore = -std::numeric_limits<double>::infinity();

struct Query {
  std::string id;
  std::string lang;
  std::vector<std::string> tokens;
  std::optional<std::vector<std::string>> translated_tokens;
};

struct RunEntry {
  std::string doc_id;
  double score;
  std::size_t rank;
};

/// One query's ranking: descending score, ties by ascending doc id, ranks 1..n.
struct RankedRun {
  std::string query_id;
  std::vector<RunEntry> entries;

  std::vector<std::string> doc_ids() const {
    std::vector<std::string> ids;
    ids.reserve(entries.size());
    for (const auto& e : entries) ids.push_back(e.doc_id);
    return ids;
  }
};

/// Sorts scored documents into a run and truncates it to `depth`.
inline RankedRun make_run(std::string query_id, std::vector<std::pair<std::string, double>> scored,
                          std::optional<std::size_t> depth = std::nullopt) {
  auto better = [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  };
  const std::size_t keep = depth ? std::min(*depth, scored.size()) : scored.size();
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), better);
  RankedRun run{std::move(query_id), {}};
  run.entries.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    run.entries.push_back({std::move(scored[i].first), scored[i].second, i + 1});
  }
  return run;
}

// ---------------------------------------------------------------------------
// Embedding aggregation

inline RankedRun rank_bwe_agg(const IndexedCollection& index, const std::string& query_id,
                              std::span<const double> query_vec, Weighting weighting,
                              std::optional<std::size_t> depth = std::nullopt) {
  if (query_vec.size() != index.embedding_dim()) {
    throw ContractError(fmt::format("query embedding has dimension {}, index has {}", query_vec.size(),
                                    index.embedding_dim()));
  }
  const double qn = detail::norm(query_vec);
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(index.doc_count());
  for (std::size_t d = 0; d < index.doc_count(); ++d) {
    const double dn = index.doc_vector_norm(d, weighting);
    double score = kCosineSentinel;
    if (qn != 0.0 && dn != 0.0) {
      score = std::clamp(detail::dot(query_vec, index.doc_vector(d, weighting)) / (qn * dn), -1.0, 1.0);
    }
    scored.emplace_back(index.doc(d).id, score);
  }
  return make_run(query_id, std::move(scored), depth);
}

/// Cosine between the query's summed embedding in `space` (the shared
/// space the index was built against) and each document embedding.
inline RankedRun rank_bwe_agg(const IndexedCollection& index, const Query& query, const EmbeddingSpace& space,
                              Weighting weighting, std::optional<std::size_t> depth = std::nullopt) {
  if (space.dim() != index.embedding_dim()) {
    throw ContractError(fmt::format("space dimension {} does not match index dimension {}", space.dim(),
                                    index.embedding_dim()));
  }
  const auto q = query_embedding(space, query.tokens);
  return rank_bwe_agg(index, query.id, q.vec, weighting, depth);
}

// ---------------------------------------------------------------------------
// Query translation

/// Replaces each token with its cosine 1-NN in `target`. Tokens missing from
/// `source`, or whose source vector is zero, are kept unchanged.
class QueryTranslator {
 public:
  QueryTranslator(const EmbeddingSpace& source, const EmbeddingSpace& target)
      : source_(&source), target_(&target) {
    if (source.dim() != target.dim()) throw ContractError("translation spaces must share dimensionality");
  }

  std::string translate(const std::string& token) const {
    auto idx = source_->find(token);
    if (!idx || source_->is_zero(*idx) || target_->empty()) return token;
    const auto nn = nearest_neighbors(*target_, source_->vector(*idx), 1);
    return target_->term(nn.front().index);
  }

  Query translate(Query query) const {
    std::unordered_map<std::string, std::string> cache;
    std::vector<std::string> out;
    out.reserve(query.tokens.size());
    for (const auto& tok : query.tokens) {
      auto it = cache.find(tok);
      if (it == cache.end()) it = cache.emplace(tok, translate(tok)).first;
      out.push_back(it->second);
    }
    query.translated_tokens = std::move(out);
    return query;
  }

 private:
  const EmbeddingSpace* source_;
  const EmbeddingSpace* target_;
};

inline Query translate_query(Query query, const EmbeddingSpace& source, const EmbeddingSpace& target) {
  return QueryTranslator(source, target).translate(std::move(query));
}

// ---------------------------------------------------------------------------
// Query likelihood with Dirichlet smoothing

struct LmScore {
  double log_score = 0.0;
  std::size_t skipped = 0;  // query tokens absent from the collection
};

/// Log query likelihood under Dirichlet smoothing:
///   Σ_t ln(λ P(t|d) + (1 − λ) P(t|D)),  λ = N_d / (N_d + μ)
/// with P(t|d) = tf/N_d and P(t|D) = cf/|D|. Tokens with cf = 0 are skipped.
class DirichletScorer {
 public:
  DirichletScorer(const IndexedCollection& index, std::span<const std::string> query_tokens, double mu)
      : index_(&index), mu_(mu) {
    if (!(mu > 0.0) || !std::isfinite(mu)) throw ContractError("Dirichlet mu must be positive and finite");
    const auto total = static_cast<double>(index.total_tokens());
    for (const auto& tok : query_tokens) {
      auto t = index.term_id(tok);
      if (!t || index.cf(*t) == 0) {
        ++skipped_;
        continue;
      }
      terms_.push_back({*t, static_cast<double>(index.cf(*t)) / total});
    }
  }

  std::size_t skipped() const noexcept { return skipped_; }

  double score(std::size_t doc) const {
    const auto len = static_cast<double>(index_->doc_length(doc));
    if (len == 0.0) return kEmptyDocScore;
    const double lambda = len / (len + mu_);
    double sum = 0.0;
    for (const auto& [term, p_collection] : terms_) {
      const double p_doc = static_cast<double>(index_->tf(doc, term)) / len;
      sum += std::log(lambda * p_doc + (1.0 - lambda) * p_collection);
    }
    return sum;
  }

 private:
  struct ScoredTerm {
    TermId term;
    double p_collection;
  };
  const IndexedCollection* index_;
  double mu_;
  std::vector<ScoredTerm> terms_;
  std::size_t skipped_ = 0;
};

inline LmScore score_lm_dirichlet(const IndexedCollection& index, std::size_t doc,
                                  std::span<const std::string> query_tokens, double mu = kDefaultMu) {
  DirichletScorer scorer(index, query_tokens, mu);
  return {scorer.score(doc), scorer.skipped()};
}

inline RankedRun rank_query_likelihood(const IndexedCollection& index, const std::string& query_id,
                                       std::span<const std::string> tokens, double mu = kDefaultMu,
                                       std::optional<std::size_t> depth = std::nullopt) {
  const DirichletScorer scorer(index, tokens, mu);
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(index.doc_count());
  for (std::size_t d = 0; d < index.doc_count(); ++d) scored.emplace_back(index.doc(d).id, scorer.score(d));
  return make_run(query_id, std::move(scored), depth);
}

/// Monolingual query likelihood on the untranslated query.
inline RankedRun rank_lm_uni(const IndexedCollection& index, const Query& query, double mu = kDefaultMu,
                             std::optional<std::size_t> depth = std::nullopt) {
  return rank_query_likelihood(index, query.id, query.tokens, mu, depth);
}

/// Query likelihood on the term-by-term translated query. A query that
/// already carries translated tokens is not translated again.
inline RankedRun rank_tbt_qt(const IndexedCollection& index, const Query& query, const EmbeddingSpace& source,
                             const EmbeddingSpace& target, double mu = kDefaultMu,
                             std::optional<std::size_t> depth = std::nullopt) {
  if (query.translated_tokens) return rank_query_likelihood(index, query.id, *query.translated_tokens, mu, depth);
  const auto translated = translate_query(query, source, target);
  return rank_query_likelihood(index, query.id, *translated.translated_tokens, mu, depth);
}

// ---------------------------------------------------------------------------
// Rank fusion

inline double fused_rank_score(double r1, double r2, double lambda) { return lambda * r1 + (1.0 - lambda) * r2; }

/// Orders documents by λ·r1 + (1 − λ)·r2 ascending. A document missing from
/// one run takes that run's last rank + 1. Stored scores are the negated
/// fused values, so the usual descending-score order holds.
inline RankedRun ensemble_rank(const RankedRun& run1, const RankedRun& run2, double lambda,
                               std::optional<std::size_t> depth = std::nullopt) {
  if (run1.query_id != run2.query_id) {
    throw ContractError(fmt::format("cannot fuse runs for different queries ('{}' vs '{}')", run1.query_id,
                                    run2.query_id));
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("ensemble lambda must lie in [0, 1]");

  auto ranks_of = [](const RankedRun& run) {
    std::unordered_map<std::string, double> ranks;
    std::size_t last = 0;
    for (const auto& e : run.entries) {
      ranks.emplace(e.doc_id, static_cast<double>(e.rank));
      last = std::max(last, e.rank);
    }
    return std::pair{std::move(ranks), static_cast<double>(last + 1)};
  };
  const auto [ranks1, missing1] = ranks_of(run1);
  const auto [ranks2, missing2] = ranks_of(run2);

  std::vector<std::string> docs;
  std::unordered_set<std::string> seen;
  for (const auto* run : {&run1, &run2}) {
    for (const auto& e : run->entries) {
      if (seen.insert(e.doc_id).second) docs.push_back(e.doc_id);
    }
  }
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(docs.size());
  for (auto& doc : docs) {
    auto a = ranks1.find(doc);
    auto b = ranks2.find(doc);
    const double r1 = a != ranks1.end() ? a->second : missing1;
    const double r2 = b != ranks2.end() ? b->second : missing2;
    scored.emplace_back(std::move(doc), -fused_rank_score(r1, r2, lambda));
  }
  return make_run(run1.query_id, std::move(scored), depth);
}

// ---------------------------------------------------------------------------
// TREC run files: `query_id Q0 doc_id rank score run_tag`

inline void write_run(std::ostream& out, const RankedRun& run, std::string_view tag) {
  for (const auto& e : run.entries) {
    out << fmt::format("{} Q0 {} {} {:.6f} {}\n", run.query_id, e.doc_id, e.rank, e.score, tag);
  }
}

inline void write_runs(std::ostream& out, const std::vector<RankedRun>& runs, std::string_view tag) {
  for (const auto& run : runs) write_run(out, run, tag);
}

/// Reads a run file. Queries keep their order of first appearance; entries
/// are ordered by rank, which must be 1..n without gaps or repeats.
inline std::vector<RankedRun> read_runs(std::istream& in) {
  std::vector<RankedRun> runs;
  std::map<std::string, std::size_t, std::less<>> where;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto f = detail::split_ws(detail::trim_line(raw));
    if (f.empty()) continue;
    if (f.size() != 6) throw FormatError(fmt::format("run line {}: expected 6 fields, got {}", line_no, f.size()));
    auto rank = detail::parse_integer(f[3]);
    auto score = detail::parse_real(f[4]);
    if (!rank || *rank < 1 || !score || std::isnan(*score)) {
      throw FormatError(fmt::format("run line {}: bad rank or score", line_no));
    }
    auto [it, inserted] = where.try_emplace(std::string(f[0]), runs.size());
    if (inserted) runs.push_back({std::string(f[0]), {}});
    runs[it->second].entries.push_back({std::string(f[2]), *score, static_cast<std::size_t>(*rank)});
  }
  for (auto& run : runs) {
    std::sort(run.entries.begin(), run.entries.end(), [](const RunEntry& a, const RunEntry& b) { return a.rank < b.rank; });
    std::unordered_set<std::string> docs;
    for (std::size_t i = 0; i < run.entries.size(); ++i) {
      if (run.entries[i].rank != i + 1) {
        throw FormatError(fmt::format("run for query '{}' has non-contiguous ranks", run.query_id));
      }
      if (!docs.insert(run.entries[i].doc_id).second) {
        throw FormatError(fmt::format("run for query '{}' repeats document '{}'", run.query_id, run.entries[i].doc_id));
      }
    }
  }
  return runs;
}

inline std::vector<RankedRun> read_runs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open run file '{}'", path));
  return read_runs(in);
}

}  // namespace clir
