#pragma once

// Text preprocessing and the collection index: term statistics for the
// query-likelihood models and aggregated document embeddings for the
// embedding-based models.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include "clir/embedding_store.hpp"
#include "clir/error.hpp"
#include "clir/parallel.hpp"

namespace clir {

using TermId = std::uint32_t;
using StopwordSet = std::unordered_set<std::string, detail::StringHash, std::equal_to<>>;

namespace detail {

inline void append_utf8(std::string& out, UChar32 c) {
  char buf[U8_MAX_LENGTH];
  std::int32_t len = 0;
  UBool error = false;
  U8_APPEND(reinterpret_cast<std::uint8_t*>(buf), len, U8_MAX_LENGTH, c, error);
  if (!error) out.append(buf, static_cast<std::size_t>(len));
}

}  // namespace detail

/// Lowercases with Unicode simple case folding, splits on everything that
/// is not a letter or digit, drops one-character tokens and stopwords.
/// Invalid UTF-8 bytes act as delimiters.
inline std::vector<std::string> preprocess(std::string_view text, const StopwordSet& stopwords = {}) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t code_points = 0;
  auto flush = [&] {
    if (code_points > 1 && !stopwords.contains(current)) tokens.push_back(current);
    current.clear();
    code_points = 0;
  };
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(text.data());
  const auto length = static_cast<std::int32_t>(text.size());
  std::int32_t i = 0;
  while (i < length) {
    UChar32 c = 0;
    U8_NEXT(bytes, i, length, c);
    if (c >= 0 && u_isalnum(c)) {
      detail::append_utf8(current, u_foldCase(c, U_FOLD_CASE_DEFAULT));
      ++code_points;
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

/// Case-folds a single term the same way `preprocess` folds token text.
inline std::string fold_case(std::string_view term) {
  std::string out;
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(term.data());
  const auto length = static_cast<std::int32_t>(term.size());
  std::int32_t i = 0;
  while (i < length) {
    UChar32 c = 0;
    U8_NEXT(bytes, i, length, c);
    if (c >= 0) detail::append_utf8(out, u_foldCase(c, U_FOLD_CASE_DEFAULT));
  }
  return out;
}

/// One stopword per line; entries are case-folded. Blank lines are ignored.
inline StopwordSet load_stopwords(std::istream& in) {
  StopwordSet words;
  std::string raw;
  while (std::getline(in, raw)) {
    auto fields = detail::split_ws(detail::trim_line(raw));
    if (fields.empty()) continue;
    words.insert(fold_case(fields[0]));
  }
  return words;
}

inline StopwordSet load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open stopword file '{}'", path));
  return load_stopwords(in);
}

struct RawDocument {
  std::string id;
  std::string text;
};

/// JSONL, one `{"id": ..., "text": ...}` object per line.
inline std::vector<RawDocument> read_collection(std::istream& in) {
  std::vector<RawDocument> docs;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = detail::trim_line(raw);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(fmt::format("collection line {}: invalid JSON ({})", line_no, e.what()));
    }
    if (!obj.is_object() || !obj.contains("id") || !obj.contains("text") || !obj["id"].is_string() ||
        !obj["text"].is_string()) {
      throw FormatError(fmt::format("collection line {}: expected string fields 'id' and 'text'", line_no));
    }
    docs.push_back({obj["id"].get<std::string>(), obj["text"].get<std::string>()});
  }
  return docs;
}

inline std::vector<RawDocument> read_collection(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open collection '{}'", path));
  return read_collection(in);
}

struct Document {
  std::string id;
  std::vector<std::string> tokens;

  std::size_t length() const noexcept { return tokens.size(); }
};

enum class Weighting { add, idf };

/// Term statistics and aggregated embeddings for a fixed document set.
///
/// Term ids are assigned in lexicographic term order, so every statistic is
/// independent of document ingestion order. Language-model statistics cover
/// all tokens; document embeddings cover only tokens in the embedding space.
class IndexedCollection {
 public:
  struct Posting {
    TermId term;
    std::uint32_t count;
  };

  std::size_t doc_count() const noexcept { return docs_.size(); }
  const std::vector<Document>& docs() const noexcept { return docs_; }
  const Document& doc(std::size_t i) const { return docs_.at(i); }
  std::size_t doc_length(std::size_t i) const { return docs_[i].length(); }

  std::size_t term_count() const noexcept { return terms_.size(); }
  const std::vector<std::string>& terms() const noexcept { return terms_; }
  std::optional<TermId> term_id(std::string_view term) const {
    auto it = term_index_.find(term);
    if (it == term_index_.end()) return std::nullopt;
    return it->second;
  }

  std::uint64_t total_tokens() const noexcept { return total_tokens_; }
  std::uint64_t cf(TermId t) const { return cf_[t]; }
  std::uint32_t df(TermId t) const { return df_[t]; }
  double idf(TermId t) const { return idf_[t]; }
  std::uint64_t cf(std::string_view term) const { return lookup(term, cf_, std::uint64_t{0}); }
  std::uint32_t df(std::string_view term) const { return lookup(term, df_, std::uint32_t{0}); }
  double idf(std::string_view term) const { return lookup(term, idf_, 0.0); }

  /// Sorted by term id.
  std::span<const Posting> postings(std::size_t doc) const { return doc_tf_[doc]; }

  std::uint32_t tf(std::size_t doc, TermId t) const {
    const auto& p = doc_tf_[doc];
    auto it = std::lower_bound(p.begin(), p.end(), t, [](const Posting& a, TermId b) { return a.term < b; });
    return (it != p.end() && it->term == t) ? it->count : 0;
  }
  std::uint32_t tf(std::size_t doc, std::string_view term) const {
    auto t = term_id(term);
    return t ? tf(doc, *t) : 0;
  }

  std::size_t embedding_dim() const noexcept { return dim_; }
  std::span<const double> doc_vector(std::size_t doc, Weighting w) const {
    const auto& buf = w == Weighting::add ? vec_add_ : vec_idf_;
    return {buf.data() + doc * dim_, dim_};
  }
  bool doc_vector_is_zero(std::size_t doc, Weighting w) const {
    return (w == Weighting::add ? norm_add_ : norm_idf_)[doc] == 0.0;
  }
  double doc_vector_norm(std::size_t doc, Weighting w) const {
    return (w == Weighting::add ? norm_add_ : norm_idf_)[doc];
  }
  /// Tokens of `doc` that contributed to its embedding.
  std::size_t embedded_tokens(std::size_t doc) const { return embedded_[doc]; }
  /// Tokens skipped for embedding aggregation, over the whole collection.
  std::uint64_t oov_tokens() const noexcept { return oov_tokens_; }

  std::optional<std::size_t> find_doc(std::string_view id) const {
    auto it = doc_index_.find(id);
    if (it == doc_index_.end()) return std::nullopt;
    return it->second;
  }

  /// Builds term statistics from tokenized documents in one pass. Doc
  /// vectors are left to the caller (see `build_index` / `load_index`).
  static IndexedCollection from_documents(std::vector<Document> docs, std::size_t dim) {
    if (docs.empty()) throw ContractError("cannot index an empty collection");
    IndexedCollection c;
    c.dim_ = dim;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (!c.doc_index_.emplace(docs[i].id, i).second) {
        throw ContractError(fmt::format("duplicate document id '{}'", docs[i].id));
      }
    }
    std::set<std::string_view> vocab;
    for (const auto& d : docs) vocab.insert(d.tokens.begin(), d.tokens.end());
    c.terms_.assign(vocab.begin(), vocab.end());
    for (std::size_t i = 0; i < c.terms_.size(); ++i) c.term_index_.emplace(c.terms_[i], static_cast<TermId>(i));

    c.cf_.assign(c.terms_.size(), 0);
    c.df_.assign(c.terms_.size(), 0);
    c.doc_tf_.resize(docs.size());
    std::vector<TermId> ids;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      ids.clear();
      for (const auto& tok : docs[i].tokens) ids.push_back(c.term_index_.find(tok)->second);
      std::sort(ids.begin(), ids.end());
      auto& postings = c.doc_tf_[i];
      for (std::size_t j = 0; j < ids.size();) {
        std::size_t k = j;
        while (k < ids.size() && ids[k] == ids[j]) ++k;
        postings.push_back({ids[j], static_cast<std::uint32_t>(k - j)});
        c.cf_[ids[j]] += k - j;
        c.df_[ids[j]] += 1;
        j = k;
      }
      c.total_tokens_ += ids.size();
    }
    const auto n = static_cast<double>(docs.size());
    c.idf_.resize(c.terms_.size());
    for (std::size_t t = 0; t < c.terms_.size(); ++t) c.idf_[t] = std::log(n / static_cast<double>(c.df_[t]));
    c.docs_ = std::move(docs);
    c.vec_add_.assign(c.docs_.size() * dim, 0.0);
    c.vec_idf_.assign(c.docs_.size() * dim, 0.0);
    c.norm_add_.assign(c.docs_.size(), 0.0);
    c.norm_idf_.assign(c.docs_.size(), 0.0);
    c.embedded_.assign(c.docs_.size(), 0);
    c.recompute_derived();
    return c;
  }

  /// Sums token vectors (multiplicity counts) into both document embeddings.
  void aggregate_embeddings(const EmbeddingSpace& space, unsigned jobs = 1) {
    if (space.dim() != dim_) throw ContractError("embedding space does not match index dimension");
    parallel_for(docs_.size(), jobs, [&](std::size_t i) {
      std::span<double> add(vec_add_.data() + i * dim_, dim_);
      std::span<double> weighted(vec_idf_.data() + i * dim_, dim_);
      std::size_t embedded = 0;
      for (const auto& tok : docs_[i].tokens) {
        auto idx = space.find(tok);
        if (!idx) continue;
        ++embedded;
        const double w = idf_[term_index_.find(tok)->second];
        const auto v = space.vector(*idx);
        for (std::size_t j = 0; j < dim_; ++j) {
          add[j] += v[j];
          weighted[j] += w * v[j];
        }
      }
      embedded_[i] = embedded;
    });
    recompute_derived();
  }

  /// Installs stored document embeddings (used when reloading an index).
  void set_doc_vectors(std::size_t doc, std::span<const double> add, std::span<const double> weighted,
                       std::size_t embedded) {
    if (add.size() != dim_ || weighted.size() != dim_) throw FormatError("stored document vector has wrong dimension");
    std::copy(add.begin(), add.end(), vec_add_.begin() + static_cast<std::ptrdiff_t>(doc * dim_));
    std::copy(weighted.begin(), weighted.end(), vec_idf_.begin() + static_cast<std::ptrdiff_t>(doc * dim_));
    embedded_[doc] = embedded;
  }

  void recompute_derived() {
    oov_tokens_ = 0;
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      norm_add_[i] = detail::norm(doc_vector(i, Weighting::add));
      norm_idf_[i] = detail::norm(doc_vector(i, Weighting::idf));
      oov_tokens_ += docs_[i].length() - embedded_[i];
    }
  }

 private:
  template <typename T>
  T lookup(std::string_view term, const std::vector<T>& table, T missing) const {
    auto t = term_id(term);
    return t ? table[*t] : missing;
  }

  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t, detail::StringHash, std::equal_to<>> doc_index_;
  std::vector<std::string> terms_;
  std::unordered_map<std::string, TermId, detail::StringHash, std::equal_to<>> term_index_;
  std::vector<std::vector<Posting>> doc_tf_;
  std::vector<std::uint64_t> cf_;
  std::vector<std::uint32_t> df_;
  std::vector<double> idf_;
  std::uint64_t total_tokens_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> vec_add_, vec_idf_;
  std::vector<double> norm_add_, norm_idf_;
  std::vector<std::size_t> embedded_;
  std::uint64_t oov_tokens_ = 0;
};

/// Preprocesses and indexes a collection. `space` may be null, in which
/// case no document embeddings are built (embedding_dim() == 0).
inline IndexedCollection build_index(const std::vector<RawDocument>& collection, const EmbeddingSpace* space,
                                     const StopwordSet& stopwords = {}, unsigned jobs = 1) {
  if (collection.empty()) throw ContractError("cannot index an empty collection");
  if (space && !space->normalized()) throw ContractError("build_index requires a normalized embedding space");
  std::vector<Document> docs(collection.size());
  parallel_for(collection.size(), jobs, [&](std::size_t i) {
    docs[i].id = collection[i].id;
    docs[i].tokens = preprocess(collection[i].text, stopwords);
  });
  auto index = IndexedCollection::from_documents(std::move(docs), space ? space->dim() : 0);
  if (space) index.aggregate_embeddings(*space, jobs);
  return index;
}

inline constexpr int kIndexFormatVersion = 1;

/// Writes `manifest.json` and `documents.jsonl` into `dir`. Reals are
/// written in shortest round-trip form, so reloading is lossless.
inline void save_index(const IndexedCollection& index, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {
      {"format", "clir-index"},
      {"version", kIndexFormatVersion},
      {"doc_count", index.doc_count()},
      {"term_count", index.term_count()},
      {"total_tokens", index.total_tokens()},
      {"embedding_dim", index.embedding_dim()},
      {"oov_tokens", index.oov_tokens()},
  };
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw FormatError(fmt::format("cannot write index manifest in '{}'", dir.string()));
    out << manifest.dump(2) << '\n';
  }
  std::ofstream out(dir / "documents.jsonl");
  if (!out) throw FormatError(fmt::format("cannot write index documents in '{}'", dir.string()));
  for (std::size_t i = 0; i < index.doc_count(); ++i) {
    const auto add = index.doc_vector(i, Weighting::add);
    const auto idf = index.doc_vector(i, Weighting::idf);
    nlohmann::json line = {
        {"id", index.doc(i).id},
        {"tokens", index.doc(i).tokens},
        {"embedded", index.embedded_tokens(i)},
        {"vec_add", std::vector<double>(add.begin(), add.end())},
        {"vec_idf", std::vector<double>(idf.begin(), idf.end())},
    };
    out << line.dump() << '\n';
  }
}

inline IndexedCollection load_index(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw FormatError(fmt::format("no index manifest in '{}'", dir.string()));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("corrupt index manifest: {}", e.what()));
  }
  if (manifest.value("format", "") != "clir-index" || manifest.value("version", 0) != kIndexFormatVersion) {
    throw FormatError(fmt::format("unsupported index format in '{}'", dir.string()));
  }
  const auto dim = manifest.at("embedding_dim").get<std::size_t>();

  std::ifstream in(dir / "documents.jsonl");
  if (!in) throw FormatError(fmt::format("no index documents in '{}'", dir.string()));
  std::vector<Document> docs;
  struct Stored {
    std::vector<double> add, idf;
    std::size_t embedded;
  };
  std::vector<Stored> stored;
  std::string raw;
  std::size_t line_no = 0;
  try {
    while (std::getline(in, raw)) {
      ++line_no;
      if (raw.empty()) continue;
      auto obj = nlohmann::json::parse(raw);
      docs.push_back({obj.at("id").get<std::string>(), obj.at("tokens").get<std::vector<std::string>>()});
      stored.push_back({obj.at("vec_add").get<std::vector<double>>(), obj.at("vec_idf").get<std::vector<double>>(),
                        obj.at("embedded").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("index documents line {}: {}", line_no, e.what()));
  }
  if (docs.size() != manifest.at("doc_count").get<std::size_t>()) {
    throw FormatError("index document count does not match manifest");
  }
  auto index = IndexedCollection::from_documents(std::move(docs), dim);
  for (std::size_t i = 0; i < stored.size(); ++i) {
    index.set_doc_vectors(i, stored[i].add, stored[i].idf, stored[i].embedded);
  }
  index.recompute_derived();
  return index;
}

struct QueryEmbedding {
  Vector vec;
  std::size_t in_vocab = 0;
  std::size_t oov = 0;

  bool is_zero() const { return detail::norm(vec) == 0.0; }
};

/// Unweighted sum of in-vocabulary token vectors; OOV tokens are skipped.
inline QueryEmbedding query_embedding(const EmbeddingSpace& space, std::span<const std::string> tokens) {
  QueryEmbedding q;
  q.vec.assign(space.dim(), 0.0);
  for (const auto& tok : tokens) {
    auto idx = space.find(tok);
    if (!idx) {
      ++q.oov;
      continue;
    }
    ++q.in_vocab;
    const auto v = space.vector(*idx);
    for (std::size_t j = 0; j < v.size(); ++j) q.vec[j] += v[j];
  }
  return q;
}

}  // namespace clir
