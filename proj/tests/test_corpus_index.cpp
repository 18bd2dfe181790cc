#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "clir/corpus_index.hpp"
#include "support.hpp"

namespace clir {
namespace {

using Tokens = std::vector<std::string>;

EmbeddingSpace space_of(const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  EmbeddingSpace s("xx", rows.front().second.size());
  for (const auto& [t, v] : rows) s.add(t, v);
  return normalize_space(std::move(s));
}

IndexedCollection toy_index() {
  return IndexedCollection::from_documents({{"d1", {"a", "b", "a"}}, {"d2", {"b", "c"}}}, 0);
}

TEST(Preprocess, LowercasesAndDropsPunctuationAndStopwords) {
  const StopwordSet stop{"the"};
  EXPECT_EQ(preprocess("The cat, the CAT!", stop), (Tokens{"cat", "cat"}));
}

TEST(Preprocess, DropsOneCharacterTokens) {
  EXPECT_TRUE(preprocess("a b c").empty());
  EXPECT_EQ(preprocess("U.S. policy"), Tokens{"policy"});
  EXPECT_TRUE(preprocess("").empty());
}

TEST(Preprocess, UnicodeLettersDigitsAndFolding) {
  EXPECT_EQ(preprocess("École ΣΟΦΙΑ—Straße"), (Tokens{"école", "σοφια", "straße"}));
  EXPECT_EQ(preprocess("covid19 in 2003, x1"), (Tokens{"covid19", "in", "2003", "x1"}));
  // Length counts code points, not bytes.
  EXPECT_TRUE(preprocess("é ü").empty());
  // Invalid UTF-8 acts as a delimiter.
  EXPECT_EQ(preprocess(std::string("ab\xff" "cd")), (Tokens{"ab", "cd"}));
}

TEST(Preprocess, StopwordsMatchAfterFolding) {
  std::istringstream in("The\nDE\n\n");
  const auto stop = load_stopwords(in);
  EXPECT_EQ(preprocess("the De huis", stop), Tokens{"huis"});
}

TEST(ReadCollection, ParsesJsonlAndReportsBadLines) {
  std::istringstream in("{\"id\": \"d1\", \"text\": \"hello world\"}\n\n{\"id\":\"d2\",\"text\":\"x\"}\r\n");
  const auto docs = read_collection(in);
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[1].id, "d2");
  std::istringstream bad("{\"id\": \"d1\", \"text\": \"ok\"}\n{\"id\": 3, \"text\": \"\"}\n");
  try {
    read_collection(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::istringstream garbage("not json\n");
  EXPECT_THROW(read_collection(garbage), FormatError);
}

TEST(BuildIndex, HandCountedStatistics) {
  const auto idx = toy_index();
  EXPECT_EQ(idx.doc_count(), 2u);
  EXPECT_EQ(idx.df("b"), 2u);
  EXPECT_EQ(idx.idf("b"), 0.0);
  EXPECT_NEAR(idx.idf("a"), 0.6931471805599453, 1e-15);
  EXPECT_EQ(idx.total_tokens(), 5u);
  EXPECT_EQ(idx.cf("a"), 2u);
  EXPECT_EQ(idx.tf(0, "a"), 2u);
  EXPECT_EQ(idx.tf(1, "a"), 0u);
  EXPECT_EQ(idx.cf("zzz"), 0u);
  EXPECT_EQ(idx.doc_length(0), 3u);
}

TEST(BuildIndex, ErrorsOnDuplicateIdAndEmptyCollection) {
  try {
    build_index({{"d1", "hello"}, {"d1", "world"}}, nullptr);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("d1"), std::string::npos);
  }
  EXPECT_THROW(build_index({}, nullptr), ContractError);
  EmbeddingSpace raw("r", 1);
  raw.add("x", std::vector<double>{2});
  EXPECT_THROW(build_index({{"d", "xx"}}, &raw), ContractError);
}

TEST(BuildIndex, DocumentVectors) {
  const auto space = space_of({{"xx", {1, 0}}, {"yy", {0, 1}}});
  // Single document: every idf is ln(1) = 0.
  const auto one = build_index({{"d", "xx xx"}}, &space);
  EXPECT_EQ(one.doc_vector(0, Weighting::add)[0], 2.0);
  EXPECT_EQ(one.doc_vector(0, Weighting::add)[1], 0.0);
  EXPECT_TRUE(one.doc_vector_is_zero(0, Weighting::idf));

  const auto two = build_index({{"d1", "xx xx yy qq"}, {"d2", "qq zz"}}, &space);
  const double idf = std::log(2.0);
  EXPECT_DOUBLE_EQ(two.doc_vector(0, Weighting::idf)[0], 2 * idf);
  EXPECT_DOUBLE_EQ(two.doc_vector(0, Weighting::idf)[1], idf);
  EXPECT_TRUE(two.doc_vector_is_zero(1, Weighting::add));
  EXPECT_EQ(two.embedded_tokens(0), 3u);
  EXPECT_EQ(two.oov_tokens(), 3u);
  // LM statistics keep embedding-OOV tokens.
  EXPECT_EQ(two.total_tokens(), 6u);
  EXPECT_EQ(two.cf("qq"), 2u);
}

// Random collections drawn from a small vocabulary.
std::vector<RawDocument> random_collection(std::mt19937_64& rng, std::size_t docs, std::size_t vocab) {
  std::uniform_int_distribution<std::size_t> len(0, 12), term(0, vocab - 1);
  std::vector<RawDocument> out;
  for (std::size_t d = 0; d < docs; ++d) {
    std::string text;
    for (std::size_t i = len(rng); i > 0; --i) text += testing::term_name("w", term(rng)) + " ";
    out.push_back({testing::term_name("doc", d), text});
  }
  return out;
}

TEST(BuildIndex, PropertyStatisticsConsistent) {
  std::mt19937_64 rng(17);
  EmbeddingSpace raw("xx", 3);
  for (std::size_t i = 0; i < 15; ++i) raw.add(testing::term_name("w", i), testing::random_unit(rng, 3));
  const auto space = normalize_space(raw);
  for (int trial = 0; trial < 20; ++trial) {
    const auto idx = build_index(random_collection(rng, 1 + trial, 20), &space);
    std::uint64_t sum_cf = 0;
    for (TermId t = 0; t < idx.term_count(); ++t) {
      std::uint64_t sum_tf = 0;
      std::uint32_t docs_with = 0;
      for (std::size_t d = 0; d < idx.doc_count(); ++d) {
        sum_tf += idx.tf(d, t);
        docs_with += idx.tf(d, t) > 0;
      }
      EXPECT_EQ(sum_tf, idx.cf(t));
      EXPECT_EQ(docs_with, idx.df(t));
      EXPECT_GE(idx.df(t), 1u);
      EXPECT_LE(idx.df(t), idx.doc_count());
      EXPECT_GE(idx.idf(t), 0.0);
      sum_cf += idx.cf(t);
    }
    EXPECT_EQ(sum_cf, idx.total_tokens());
    for (std::size_t d = 0; d < idx.doc_count(); ++d) {
      std::uint64_t sum = 0;
      for (const auto& p : idx.postings(d)) sum += p.count;
      EXPECT_EQ(sum, idx.doc_length(d));
    }
  }
}

TEST(BuildIndex, PropertyTermInEveryDocGivesZeroIdfVectors) {
  const auto space = space_of({{"aa", {1, 0}}, {"bb", {0, 1}}});
  const auto idx = build_index({{"d1", "aa bb"}, {"d2", "bb aa aa"}, {"d3", "aa bb bb"}}, &space);
  for (TermId t = 0; t < idx.term_count(); ++t) EXPECT_EQ(idx.idf(t), 0.0);
  for (std::size_t d = 0; d < idx.doc_count(); ++d) EXPECT_TRUE(idx.doc_vector_is_zero(d, Weighting::idf));
}

TEST(BuildIndex, PropertyIngestionOrderIndependent) {
  std::mt19937_64 rng(19);
  EmbeddingSpace raw("xx", 4);
  for (std::size_t i = 0; i < 10; ++i) raw.add(testing::term_name("w", i), testing::random_unit(rng, 4));
  const auto space = normalize_space(raw);
  for (int trial = 0; trial < 10; ++trial) {
    auto docs = random_collection(rng, 12, 14);
    const auto a = build_index(docs, &space);
    std::shuffle(docs.begin(), docs.end(), rng);
    const auto b = build_index(docs, &space, {}, 4);
    EXPECT_EQ(a.terms(), b.terms());
    EXPECT_EQ(a.total_tokens(), b.total_tokens());
    for (TermId t = 0; t < a.term_count(); ++t) {
      EXPECT_EQ(a.cf(t), b.cf(t));
      EXPECT_EQ(a.df(t), b.df(t));
      EXPECT_EQ(a.idf(t), b.idf(t));
    }
    for (std::size_t d = 0; d < a.doc_count(); ++d) {
      const auto other = *b.find_doc(a.doc(d).id);
      for (auto w : {Weighting::add, Weighting::idf}) {
        const auto u = a.doc_vector(d, w), v = b.doc_vector(other, w);
        EXPECT_TRUE(std::equal(u.begin(), u.end(), v.begin()));
      }
    }
  }
}

TEST(IndexPersistence, RoundTripPreservesEverything) {
  std::mt19937_64 rng(23);
  EmbeddingSpace raw("xx", 5);
  for (std::size_t i = 0; i < 12; ++i) raw.add(testing::term_name("w", i), testing::random_unit(rng, 5));
  const auto space = normalize_space(raw);
  const auto idx = build_index(random_collection(rng, 15, 18), &space);
  const auto dir = testing::scratch_dir("index_rt");
  save_index(idx, dir / "idx");
  const auto back = load_index(dir / "idx");
  EXPECT_EQ(back.terms(), idx.terms());
  EXPECT_EQ(back.total_tokens(), idx.total_tokens());
  EXPECT_EQ(back.oov_tokens(), idx.oov_tokens());
  EXPECT_EQ(back.embedding_dim(), idx.embedding_dim());
  for (std::size_t d = 0; d < idx.doc_count(); ++d) {
    EXPECT_EQ(back.doc(d).id, idx.doc(d).id);
    EXPECT_EQ(back.doc(d).tokens, idx.doc(d).tokens);
    for (auto w : {Weighting::add, Weighting::idf}) {
      const auto u = idx.doc_vector(d, w), v = back.doc_vector(d, w);
      EXPECT_TRUE(std::equal(u.begin(), u.end(), v.begin()));
      EXPECT_EQ(idx.doc_vector_norm(d, w), back.doc_vector_norm(d, w));
    }
  }
  for (TermId t = 0; t < idx.term_count(); ++t) EXPECT_EQ(back.idf(t), idx.idf(t));
  std::filesystem::remove_all(dir);
}

TEST(IndexPersistence, RejectsMissingOrForeignDirectories) {
  const auto dir = testing::scratch_dir("index_bad");
  EXPECT_THROW(load_index(dir), FormatError);
  testing::spit(dir / "manifest.json", R"({"format": "other", "version": 1})");
  EXPECT_THROW(load_index(dir), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(QueryEmbedding, SumsInVocabularyTokens) {
  const auto space = space_of({{"cat", {1, 0}}, {"fish", {0, 1}}});
  const Tokens cat{"cat"}, both{"cat", "fish"}, oov{"zzz"}, twice{"cat", "cat", "zzz"};
  EXPECT_EQ(query_embedding(space, cat).vec, (std::vector<double>{1, 0}));
  EXPECT_EQ(query_embedding(space, both).vec, (std::vector<double>{1, 1}));
  const auto z = query_embedding(space, oov);
  EXPECT_TRUE(z.is_zero());
  EXPECT_EQ(z.oov, 1u);
  const auto t = query_embedding(space, twice);
  EXPECT_EQ(t.vec, (std::vector<double>{2, 0}));
  EXPECT_EQ(t.in_vocab, 2u);
}

}  // namespace
}  // namespace clir
