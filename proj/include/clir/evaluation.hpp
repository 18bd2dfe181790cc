#pragma once

// Relevance judgments and trec_eval-style metrics (AP, MAP, P@k).

#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "clir/error.hpp"
#include "clir/ranking.hpp"

namespace clir {

using DocSet = std::set<std::string, std::less<>>;

/// (query, doc) → graded relevance; anything > 0 counts as relevant.
class Qrels {
 public:
  /// Returns false when the pair was already judged (the new grade wins).
  bool set(const std::string& query, const std::string& doc, int relevance) {
    auto& judged = judgments_[query];
    auto [it, inserted] = judged.insert_or_assign(doc, relevance);
    return inserted;
  }

  std::optional<int> relevance(std::string_view query, std::string_view doc) const {
    auto q = judgments_.find(query);
    if (q == judgments_.end()) return std::nullopt;
    auto d = q->second.find(doc);
    if (d == q->second.end()) return std::nullopt;
    return d->second;
  }

  DocSet relevant(std::string_view query) const {
    DocSet out;
    auto q = judgments_.find(query);
    if (q == judgments_.end()) return out;
    for (const auto& [doc, rel] : q->second) {
      if (rel > 0) out.insert(doc);
    }
    return out;
  }

  /// Judged query ids in ascending order.
  std::vector<std::string> queries() const {
    std::vector<std::string> out;
    for (const auto& [q, _] : judgments_) out.push_back(q);
    return out;
  }

  bool contains(std::string_view query) const { return judgments_.find(query) != judgments_.end(); }

 private:
  std::map<std::string, std::map<std::string, int, std::less<>>, std::less<>> judgments_;
};

struct QrelsReport {
  std::size_t lines = 0;
  std::size_t duplicates = 0;
};

/// TREC qrels: `query_id iteration doc_id relevance`.
inline Qrels parse_qrels(std::istream& in, QrelsReport* report = nullptr) {
  QrelsReport local;
  QrelsReport& rep = report ? *report : local;
  rep = {};
  Qrels qrels;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto f = detail::split_ws(detail::trim_line(raw));
    if (f.empty()) continue;
    if (f.size() != 4) throw FormatError(fmt::format("qrels line {}: expected 4 fields, got {}", line_no, f.size()));
    auto rel = detail::parse_integer(f[3]);
    if (!rel || *rel < 0) throw FormatError(fmt::format("qrels line {}: relevance must be a non-negative integer", line_no));
    ++rep.lines;
    if (!qrels.set(std::string(f[0]), std::string(f[2]), static_cast<int>(*rel))) ++rep.duplicates;
  }
  return qrels;
}

inline Qrels parse_qrels(const std::string& path, QrelsReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open qrels '{}'", path));
  return parse_qrels(in, report);
}

/// Mean over relevant documents of precision at each relevant rank; relevant
/// documents not retrieved contribute zero.
inline double average_precision(const RankedRun& run, const DocSet& relevant) {
  if (relevant.empty()) throw ContractError(fmt::format("query '{}' has no relevant documents", run.query_id));
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < run.entries.size(); ++i) {
    if (relevant.contains(run.entries[i].doc_id)) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

/// |top-k ∩ relevant| / k, with a fixed denominator even for short runs.
inline double precision_at_k(const RankedRun& run, const DocSet& relevant, std::size_t k) {
  if (k == 0) throw ContractError("precision_at_k requires k >= 1");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, run.entries.size()); ++i) {
    if (relevant.contains(run.entries[i].doc_id)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(k);
}

struct QueryScore {
  std::string query_id;
  double average_precision;
};

struct MapReport {
  double map = 0.0;
  std::vector<QueryScore> per_query;       // evaluable queries, ascending id
  std::vector<std::string> missing_runs;   // judged queries absent from the runs (AP 0)
  std::vector<std::string> unjudged_runs;  // run queries absent from the qrels (ignored)
  std::vector<std::string> no_relevant;    // judged queries without relevant documents (excluded)
};

/// Mean AP over judged queries with at least one relevant document.
/// Fails unless at least one of those queries appears in the runs.
inline MapReport mean_average_precision(const std::vector<RankedRun>& runs, const Qrels& qrels) {
  std::map<std::string, const RankedRun*, std::less<>> by_query;
  for (const auto& run : runs) by_query.emplace(run.query_id, &run);

  MapReport report;
  for (const auto& [qid, _] : by_query) {
    if (!qrels.contains(qid)) report.unjudged_runs.push_back(qid);
  }
  double sum = 0.0;
  std::size_t retrieved = 0;
  for (const auto& qid : qrels.queries()) {
    const auto relevant = qrels.relevant(qid);
    if (relevant.empty()) {
      report.no_relevant.push_back(qid);
      continue;
    }
    double ap = 0.0;
    if (auto it = by_query.find(qid); it != by_query.end()) {
      ap = average_precision(*it->second, relevant);
      ++retrieved;
    } else {
      report.missing_runs.push_back(qid);
    }
    report.per_query.push_back({qid, ap});
    sum += ap;
  }
  // Missing queries only count towards the mean once the run overlaps the judgments at all.
  if (retrieved == 0) throw ContractError("zero evaluable queries");
  report.map = sum / static_cast<double>(report.per_query.size());
  return report;
}

struct MetricRow {
  std::string metric;
  std::string query_id;  // "all" for the summary
  double value;
};

/// MAP plus P@k for each requested cutoff, per query then summarised.
inline std::vector<MetricRow> evaluate_runs(const std::vector<RankedRun>& runs, const Qrels& qrels,
                                            const std::vector<std::size_t>& cutoffs = {5, 10}) {
  const auto report = mean_average_precision(runs, qrels);
  std::map<std::string, const RankedRun*, std::less<>> by_query;
  for (const auto& run : runs) by_query.emplace(run.query_id, &run);
  const RankedRun empty;

  std::vector<MetricRow> rows;
  std::vector<double> totals(cutoffs.size(), 0.0);
  for (const auto& [qid, ap] : report.per_query) {
    rows.push_back({"map", qid, ap});
    auto it = by_query.find(qid);
    const RankedRun& run = it != by_query.end() ? *it->second : empty;
    const auto relevant = qrels.relevant(qid);
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      const double p = precision_at_k(run, relevant, cutoffs[c]);
      totals[c] += p;
      rows.push_back({fmt::format("P_{}", cutoffs[c]), qid, p});
    }
  }
  rows.push_back({"map", "all", report.map});
  const auto n = static_cast<double>(report.per_query.size());
  for (std::size_t c = 0; c < cutoffs.size(); ++c) {
    rows.push_back({fmt::format("P_{}", cutoffs[c]), "all", totals[c] / n});
  }
  return rows;
}

/// Tab-separated `metric  query_id  value`, value to 4 decimals.
inline void write_metric_rows(std::ostream& out, const std::vector<MetricRow>& rows) {
  for (const auto& r : rows) out << fmt::format("{}\t{}\t{:.4f}\n", r.metric, r.query_id, r.value);
}

}  // namespace clir
