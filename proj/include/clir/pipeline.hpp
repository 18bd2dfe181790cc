#pragma once

// Batch pipeline steps behind the command-line tool: align, index, run, eval.
// Each step reads its inputs from files, writes outputs atomically and
// returns a plain-text report.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "clir/alignment.hpp"
#include "clir/corpus_index.hpp"
#include "clir/embedding_store.hpp"
#include "clir/error.hpp"
#include "clir/evaluation.hpp"
#include "clir/io.hpp"
#include "clir/parallel.hpp"
#include "clir/ranking.hpp"

namespace clir {

enum class Model { bwe_agg_add, bwe_agg_idf, tbt_qt, lm_uni, ensemble };

inline constexpr std::string_view kModelNames = "bwe-agg-add, bwe-agg-idf, tbt-qt, lm-uni, ensemble";

inline Model parse_model(std::string_view name) {
  if (name == "bwe-agg-add") return Model::bwe_agg_add;
  if (name == "bwe-agg-idf") return Model::bwe_agg_idf;
  if (name == "tbt-qt") return Model::tbt_qt;
  if (name == "lm-uni") return Model::lm_uni;
  if (name == "ensemble") return Model::ensemble;
  throw UsageError(fmt::format("unknown model '{}' (valid models: {})", name, kModelNames));
}

/// Loads and normalizes a vector file.
inline EmbeddingSpace load_space(const std::string& path, std::string lang, std::optional<std::size_t> max_vocab) {
  LoadOptions opts;
  opts.lang = std::move(lang);
  opts.max_vocab = max_vocab;
  return normalize_space(load_embeddings(path, opts));
}

// ---------------------------------------------------------------------------

struct AlignConfig {
  std::string source_vectors;
  std::string target_vectors;
  std::string source_lang = "src";
  std::string target_lang = "tgt";
  std::optional<std::string> seed_dict;
  std::optional<std::string> init_map;
  std::optional<std::string> test_dict;
  std::string out_map;
  std::optional<std::string> aligned_out;  // also write the projected source vectors
  std::optional<std::size_t> max_vocab;
  std::optional<std::size_t> max_pairs;
  MetricSpec metric;
  std::size_t refine_iters = 1;
  bool center = false;
  unsigned jobs = 1;
};

inline std::string cmd_align(const AlignConfig& cfg) {
  if (!cfg.seed_dict && !cfg.init_map) {
    throw UsageError("unsupervised bootstrap requires an initial map or dictionary");
  }
  const auto source = load_space(cfg.source_vectors, cfg.source_lang, cfg.max_vocab);
  const auto target = load_space(cfg.target_vectors, cfg.target_lang, cfg.max_vocab);
  if (source.dim() != target.dim()) {
    throw ContractError(fmt::format("source dimension {} differs from target dimension {}", source.dim(), target.dim()));
  }
  std::ostringstream report;
  const FitOptions fit{cfg.center};
  AlignmentMap map;
  if (cfg.seed_dict) {
    DictionaryReport drep;
    const auto dict = load_dictionary(*cfg.seed_dict, &drep);
    map = procrustes_fit(source, target, dict, fit);
    report << fmt::format("seed_pairs\t{}\nseed_usable\t{}\n", dict.size(), map.fitted_on);
  } else {
    map = read_alignment(*cfg.init_map);
    if (map.dim() != source.dim()) throw ContractError("initial map dimension does not match the vectors");
  }
  map = refine_alignment(source, target, std::move(map), cfg.refine_iters, cfg.metric, cfg.max_pairs, fit, cfg.jobs);
  map.source_lang = cfg.source_lang;
  map.target_lang = cfg.target_lang;

  report << fmt::format("refine_iters\t{}\nfitted_on\t{}\north_error\t{:.3e}\n", cfg.refine_iters, map.fitted_on,
                        map.orthogonality_error());
  if (map.warning) report << "warning\t" << *map.warning << '\n';

  std::ostringstream out;
  write_alignment(out, map);
  write_file_atomic(cfg.out_map, out.str());

  if (cfg.aligned_out || cfg.test_dict) {
    const auto aligned = apply_alignment(source, map);
    if (cfg.aligned_out) {
      std::ostringstream vec;
      write_embeddings(vec, aligned);
      write_file_atomic(*cfg.aligned_out, vec.str());
    }
    if (cfg.test_dict) {
      const auto test = load_dictionary(*cfg.test_dict);
      for (std::size_t k : {std::size_t{1}, std::size_t{5}}) {
        const auto bli = evaluate_bli(aligned, target, test, k, cfg.metric, cfg.jobs);
        report << fmt::format("bli_p@{}\t{:.4f}\n", k, bli.precision);
        if (k == 1) {
          report << fmt::format("bli_evaluated\t{}\nbli_missing_source\t{}\nbli_missing_target\t{}\n", bli.evaluated,
                                bli.missing_source, bli.missing_target);
        }
      }
    }
  }
  return report.str();
}

// ---------------------------------------------------------------------------

struct IndexConfig {
  std::string collection;
  std::optional<std::string> vectors;
  std::string lang = "tgt";
  std::optional<std::string> stopwords;
  std::string out_dir;
  std::optional<std::size_t> max_vocab;
  unsigned jobs = 1;
};

inline std::string cmd_index(const IndexConfig& cfg) {
  const auto docs = read_collection(cfg.collection);
  std::optional<EmbeddingSpace> space;
  if (cfg.vectors) space = load_space(*cfg.vectors, cfg.lang, cfg.max_vocab);
  const StopwordSet stop = cfg.stopwords ? load_stopwords(*cfg.stopwords) : StopwordSet{};
  const auto index = build_index(docs, space ? &*space : nullptr, stop, cfg.jobs);

  namespace fs = std::filesystem;
  const fs::path out(cfg.out_dir);
  fs::path tmp = out;
  tmp += fmt::format(".tmp{}", ::getpid());
  fs::remove_all(tmp);
  save_index(index, tmp);
  fs::remove_all(out);
  fs::rename(tmp, out);

  const double oov_rate = index.total_tokens() == 0
                              ? 0.0
                              : static_cast<double>(index.oov_tokens()) / static_cast<double>(index.total_tokens());
  return fmt::format("N\t{}\ntotal_tokens\t{}\nterms\t{}\nembedding_dim\t{}\nembedding_oov_rate\t{:.4f}\n",
                     index.doc_count(), index.total_tokens(), index.term_count(), index.embedding_dim(), oov_rate);
}

// ---------------------------------------------------------------------------

struct RunConfig {
  std::string model = "tbt-qt";
  std::optional<std::string> index_dir;
  std::optional<std::string> topics;
  std::optional<std::string> source_vectors;
  std::optional<std::string> target_vectors;
  std::optional<std::string> map;  // absent: source vectors are already in the shared space
  std::optional<std::string> source_stopwords;
  std::string source_lang = "src";
  std::string target_lang = "tgt";
  std::optional<std::string> run1;  // ensemble inputs: TbT-QT run
  std::optional<std::string> run2;  // and BWE-Agg-IDF run
  double mu = kDefaultMu;
  double lambda = 0.7;
  std::size_t depth = kDefaultDepth;
  std::optional<std::size_t> max_vocab;
  std::string run_tag = "clir";
  std::string out;
  unsigned jobs = 1;
};

namespace detail {

inline const std::string& required(const std::optional<std::string>& v, std::string_view flag, std::string_view model) {
  if (!v) throw UsageError(fmt::format("model {} requires --{}", model, flag));
  return *v;
}

inline EmbeddingSpace shared_source_space(const RunConfig& cfg, std::string_view model) {
  auto space = load_space(required(cfg.source_vectors, "source-vectors", model), cfg.source_lang, cfg.max_vocab);
  if (cfg.map) space = apply_alignment(std::move(space), read_alignment(*cfg.map));
  return space;
}

}  // namespace detail

inline std::vector<RankedRun> fuse_runs(const std::vector<RankedRun>& first, const std::vector<RankedRun>& second,
                                        double lambda, std::optional<std::size_t> depth) {
  std::map<std::string, const RankedRun*, std::less<>> other;
  for (const auto& r : second) other.emplace(r.query_id, &r);
  if (other.size() != first.size()) throw ContractError("ensemble inputs cover different query sets");
  std::vector<RankedRun> fused;
  for (const auto& r : first) {
    auto it = other.find(r.query_id);
    if (it == other.end()) throw ContractError(fmt::format("query '{}' missing from second ensemble input", r.query_id));
    fused.push_back(ensemble_rank(r, *it->second, lambda, depth));
  }
  return fused;
}

inline std::string cmd_run(const RunConfig& cfg) {
  const Model model = parse_model(cfg.model);
  if (!(cfg.mu > 0.0)) throw UsageError("--mu must be positive");
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw UsageError("--lambda must lie in [0, 1]");
  if (cfg.depth == 0) throw UsageError("--depth must be positive");

  std::vector<RankedRun> runs;
  if (model == Model::ensemble) {
    if (!cfg.run1 || !cfg.run2) throw UsageError("model ensemble requires two input runs (--run1 and --run2)");
    runs = fuse_runs(read_runs(*cfg.run1), read_runs(*cfg.run2), cfg.lambda, cfg.depth);
  } else {
    const auto index = load_index(detail::required(cfg.index_dir, "index", cfg.model));
    const auto topics = read_topics(detail::required(cfg.topics, "topics", cfg.model));
    const StopwordSet stop = cfg.source_stopwords ? load_stopwords(*cfg.source_stopwords) : StopwordSet{};
    std::vector<Query> queries;
    for (const auto& t : topics) queries.push_back({t.id, cfg.source_lang, preprocess(t.text(), stop), std::nullopt});

    std::optional<EmbeddingSpace> source, target;
    if (model != Model::lm_uni) source = detail::shared_source_space(cfg, cfg.model);
    if (model == Model::tbt_qt) {
      target = load_space(detail::required(cfg.target_vectors, "target-vectors", cfg.model), cfg.target_lang,
                          cfg.max_vocab);
    }
    if ((model == Model::bwe_agg_add || model == Model::bwe_agg_idf) && source->dim() != index.embedding_dim()) {
      throw ContractError(fmt::format("source space dimension {} does not match index embedding dimension {}",
                                      source->dim(), index.embedding_dim()));
    }

    runs.resize(queries.size());
    parallel_for(queries.size(), cfg.jobs, [&](std::size_t i) {
      switch (model) {
        case Model::bwe_agg_add: runs[i] = rank_bwe_agg(index, queries[i], *source, Weighting::add, cfg.depth); break;
        case Model::bwe_agg_idf: runs[i] = rank_bwe_agg(index, queries[i], *source, Weighting::idf, cfg.depth); break;
        case Model::tbt_qt: runs[i] = rank_tbt_qt(index, queries[i], *source, *target, cfg.mu, cfg.depth); break;
        case Model::lm_uni: runs[i] = rank_lm_uni(index, queries[i], cfg.mu, cfg.depth); break;
        case Model::ensemble: break;
      }
    });
  }

  std::ostringstream out;
  write_runs(out, runs, cfg.run_tag);
  write_file_atomic(cfg.out, out.str());
  std::size_t entries = 0;
  for (const auto& r : runs) entries += r.entries.size();
  return fmt::format("model\t{}\nqueries\t{}\nentries\t{}\n", cfg.model, runs.size(), entries);
}

// ---------------------------------------------------------------------------

struct EvalConfig {
  std::string run;
  std::string qrels;
  std::optional<std::string> out;
  std::vector<std::size_t> cutoffs = {5, 10};
};

/// Returns the metric table; diagnostics about excluded or missing queries go to `notes`.
inline std::string cmd_eval(const EvalConfig& cfg, std::string* notes = nullptr) {
  const auto runs = read_runs(cfg.run);
  QrelsReport qrep;
  const auto qrels = parse_qrels(cfg.qrels, &qrep);
  const auto report = mean_average_precision(runs, qrels);
  std::ostringstream table;
  write_metric_rows(table, evaluate_runs(runs, qrels, cfg.cutoffs));
  if (cfg.out) write_file_atomic(*cfg.out, table.str());
  if (notes) {
    std::ostringstream n;
    if (qrep.duplicates) n << fmt::format("qrels: {} duplicate judgments (last wins)\n", qrep.duplicates);
    for (const auto& q : report.missing_runs) n << fmt::format("query {}: judged but not in run (AP 0)\n", q);
    for (const auto& q : report.unjudged_runs) n << fmt::format("query {}: not judged (ignored)\n", q);
    for (const auto& q : report.no_relevant) n << fmt::format("query {}: no relevant documents (excluded)\n", q);
    *notes = n.str();
  }
  return table.str();
}

}  // namespace clir
