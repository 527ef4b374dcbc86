#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddsi/corpus.hpp"
#include "ddsi/model.hpp"

namespace ddsi {

struct QueryRun {
  RankedList list;
  DocId gold = 0;
};

using EvalRun = std::vector<QueryRun>;

/// 1-based rank of `gold` within the first `k` entries, or 0 if absent.
std::int64_t gold_rank(const RankedList& list, DocId gold, std::int64_t k);

double hits_at_k(const EvalRun& run, std::int64_t k);
double mrr_at_k(const EvalRun& run, std::int64_t k = 10);

std::size_t lcs_len(std::span<const TokenId> a, std::span<const TokenId> b);
/// LCS F1 with recall lcs/|a| and precision lcs/|b|. Throws EmptyDocument.
double rouge_l(std::span<const TokenId> a, std::span<const TokenId> b);
/// Mean rouge_l over unordered pairs. Throws TooFewDocs for fewer than two.
double homogenization(std::span<const TokenSeq> docs);
/// Sum over n = 1..4 of unique/total n-grams pooled across docs; n-grams stay
/// within a document.
double ngd(std::span<const TokenSeq> docs);
/// Raw bytes / raw-DEFLATE (level 6) bytes of the texts joined by '\n'.
double compression_ratio(std::span<const std::string> texts);

struct MetricsReport {
  std::string dataset = "synthetic";
  std::optional<double> alpha;
  double hits1 = 0.0;
  double hits5 = 0.0;
  double hits10 = 0.0;
  double mrr10 = 0.0;
  std::optional<double> rouge_l_hom;
  std::optional<double> ngd;
  std::optional<double> cr;
  std::int64_t num_queries = 0;

  bool operator==(const MetricsReport&) const = default;
};

/// Diversity metrics of one retrieved set: homogenization, NGD and CR.
struct SetDiversity {
  std::optional<double> rouge_l_hom;
  std::optional<double> ngd;
  std::optional<double> cr;
};
SetDiversity set_diversity(const Corpus& corpus, std::span<const DocId> docids);

/// Relevance and diversity metrics of an existing run against the corpus.
MetricsReport score_run(const EvalRun& run, const Corpus& corpus);

/// Forward + top-`cutoff` per query, then score_run. Throws KOutOfRange.
MetricsReport evaluate(const ModelParams& p, std::span<const QueryExample> queries,
                       const Corpus& corpus, std::int64_t cutoff = 10,
                       EvalRun* run_out = nullptr);

EvalRun retrieve(const ModelParams& p, std::span<const QueryExample> queries, std::int64_t cutoff);

/// `qid<TAB>docid<TAB>rank<TAB>score`, no header, scores printed round-trip exact.
void write_run(const EvalRun& run, std::ostream& out);
/// Reads a run file; gold labels come from `queries` (matched by qid).
EvalRun read_run(std::istream& in, std::span<const QueryExample> queries);

inline constexpr std::string_view kReportColumns[] = {
    "dataset", "alpha", "Hits@1", "Hits@5", "Hits@10", "MRR@10", "ROUGE-L", "NGD", "CR"};

void write_report_tsv(std::span<const MetricsReport> reports, std::ostream& out);
/// Throws ColumnMismatch when the header differs from kReportColumns.
std::vector<MetricsReport> read_report_tsv(std::istream& in);
std::string format_report_table(std::span<const MetricsReport> reports);
/// Dataset ascending, then alpha descending (missing alpha last).
void sort_reports(std::vector<MetricsReport>& reports);

}  // namespace ddsi
