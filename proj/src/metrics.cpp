#include "ddsi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <zlib.h>

#include "ddsi/error.hpp"

namespace ddsi {

std::int64_t gold_rank(const RankedList& list, DocId gold, std::int64_t k) {
  const auto lim = std::min<std::size_t>(list.entries.size(), static_cast<std::size_t>(std::max<std::int64_t>(k, 0)));
  for (std::size_t i = 0; i < lim; ++i) {
    if (list.entries[i].docid == gold) return static_cast<std::int64_t>(i) + 1;
  }
  return 0;
}

double hits_at_k(const EvalRun& run, std::int64_t k) {
  if (run.empty()) throw Error(Errc::EmptyRun, "no queries in run");
  std::size_t hits = 0;
  for (const auto& q : run) hits += gold_rank(q.list, q.gold, k) > 0;
  return static_cast<double>(hits) / static_cast<double>(run.size());
}

double mrr_at_k(const EvalRun& run, std::int64_t k) {
  if (run.empty()) throw Error(Errc::EmptyRun, "no queries in run");
  double sum = 0.0;
  for (const auto& q : run) {
    auto r = gold_rank(q.list, q.gold, k);
    if (r > 0) sum += 1.0 / static_cast<double>(r);
  }
  return sum / static_cast<double>(run.size());
}

std::size_t lcs_len(std::span<const TokenId> a, std::span<const TokenId> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const TokenId> a, std::span<const TokenId> b) {
  if (a.empty() || b.empty()) throw Error(Errc::EmptyDocument, "rouge_l of an empty document");
  const auto l = static_cast<double>(lcs_len(a, b));
  if (l == 0.0) return 0.0;
  const double recall = l / static_cast<double>(a.size());
  const double precision = l / static_cast<double>(b.size());
  return 2.0 * precision * recall / (precision + recall);
}

double homogenization(std::span<const TokenSeq> docs) {
  if (docs.size() < 2) throw Error(Errc::TooFewDocs, "homogenization needs two documents");
  double sum = 0.0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (std::size_t j = i + 1; j < docs.size(); ++j) sum += rouge_l(docs[i], docs[j]);
  }
  return sum / static_cast<double>(docs.size() * (docs.size() - 1) / 2);
}

double ngd(std::span<const TokenSeq> docs) {
  bool any = false;
  for (const auto& d : docs) any = any || !d.empty();
  if (!any) throw Error(Errc::EmptyInput, "ngd of empty input");
  double score = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::set<std::vector<TokenId>> unique;
    std::size_t total = 0;
    for (const auto& d : docs) {
      for (std::size_t i = 0; i + n <= d.size(); ++i) {
        unique.emplace(d.begin() + static_cast<std::ptrdiff_t>(i),
                       d.begin() + static_cast<std::ptrdiff_t>(i + n));
        ++total;
      }
    }
    if (total > 0) score += static_cast<double>(unique.size()) / static_cast<double>(total);
  }
  return score;
}

namespace {

std::size_t deflated_size(const std::string& raw) {
  z_stream zs{};
  // Negative window bits select a raw RFC 1951 stream without zlib framing.
  if (deflateInit2(&zs, 6, Z_DEFLATED, -15, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw Error(Errc::Io, "deflateInit2 failed");
  }
  std::vector<unsigned char> buf(deflateBound(&zs, raw.size()));
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(raw.data()));
  zs.avail_in = static_cast<uInt>(raw.size());
  zs.next_out = buf.data();
  zs.avail_out = static_cast<uInt>(buf.size());
  const int rc = deflate(&zs, Z_FINISH);
  const auto produced = zs.total_out;
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error(Errc::Io, "deflate failed");
  return produced;
}

}  // namespace

double compression_ratio(std::span<const std::string> texts) {
  std::string raw;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (i) raw.push_back('\n');
    raw += texts[i];
  }
  if (raw.empty()) throw Error(Errc::EmptyInput, "compression ratio of empty input");
  return static_cast<double>(raw.size()) / static_cast<double>(deflated_size(raw));
}

SetDiversity set_diversity(const Corpus& corpus, std::span<const DocId> docids) {
  std::vector<TokenSeq> toks;
  std::vector<std::string> texts;
  for (auto id : docids) {
    toks.push_back(corpus.doc(id).tokens);
    texts.push_back(corpus.doc(id).text);
  }
  SetDiversity out;
  if (toks.size() >= 2) out.rouge_l_hom = homogenization(toks);
  if (!toks.empty()) {
    out.ngd = ngd(toks);
    out.cr = compression_ratio(texts);
  }
  return out;
}

MetricsReport score_run(const EvalRun& run, const Corpus& corpus) {
  MetricsReport r;
  r.num_queries = static_cast<std::int64_t>(run.size());
  r.hits1 = hits_at_k(run, 1);
  r.hits5 = hits_at_k(run, 5);
  r.hits10 = hits_at_k(run, 10);
  r.mrr10 = mrr_at_k(run, 10);

  // Per-query diversity, averaged in query order. A metric is reported only
  // when every query's set admits it.
  double hom = 0.0, ng = 0.0, cr = 0.0;
  bool has_hom = true, has_ngd = true, has_cr = true;
  for (const auto& q : run) {
    auto ids = q.list.docids();
    for (auto id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= corpus.size()) {
        throw Error(Errc::KOutOfRange, "run references unknown docid " + std::to_string(id), id);
      }
    }
    auto div = set_diversity(corpus, ids);
    if (div.rouge_l_hom) hom += *div.rouge_l_hom; else has_hom = false;
    if (div.ngd) ng += *div.ngd; else has_ngd = false;
    if (div.cr) cr += *div.cr; else has_cr = false;
  }
  const double nq = static_cast<double>(run.size());
  if (has_hom) r.rouge_l_hom = hom / nq;
  if (has_ngd) r.ngd = ng / nq;
  if (has_cr) r.cr = cr / nq;
  return r;
}

EvalRun retrieve(const ModelParams& p, std::span<const QueryExample> queries, std::int64_t cutoff) {
  if (cutoff < 1 || cutoff > p.dims.docs) {
    throw Error(Errc::KOutOfRange, "cutoff " + std::to_string(cutoff) + " with N=" +
                                       std::to_string(p.dims.docs), cutoff);
  }
  EvalRun run;
  run.reserve(queries.size());
  for (const auto& q : queries) {
    run.push_back({top_k(forward(p, q.tokens), cutoff, q.qid), q.gold_docid});
  }
  return run;
}

MetricsReport evaluate(const ModelParams& p, std::span<const QueryExample> queries,
                       const Corpus& corpus, std::int64_t cutoff, EvalRun* run_out) {
  if (static_cast<std::size_t>(p.dims.docs) != corpus.size()) {
    throw Error(Errc::ShapeMismatch, "model and corpus disagree on N");
  }
  auto run = retrieve(p, queries, cutoff);
  auto report = score_run(run, corpus);
  if (run_out) *run_out = std::move(run);
  return report;
}

namespace {

std::string fmt_exact(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fmt_opt(const std::optional<double>& x) { return x ? fmt_exact(*x) : "NA"; }

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

double parse_double(const std::string& s, std::int64_t lineno) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(Errc::MalformedLine, "line " + std::to_string(lineno) + ": bad number '" + s + "'", lineno);
}

std::optional<double> parse_opt(const std::string& s, std::int64_t lineno) {
  if (s == "NA") return std::nullopt;
  return parse_double(s, lineno);
}

}  // namespace

void write_run(const EvalRun& run, std::ostream& out) {
  for (const auto& q : run) {
    for (std::size_t i = 0; i < q.list.entries.size(); ++i) {
      const auto& e = q.list.entries[i];
      out << q.list.qid << '\t' << e.docid << '\t' << (i + 1) << '\t' << fmt_exact(e.score) << '\n';
    }
  }
}

EvalRun read_run(std::istream& in, std::span<const QueryExample> queries) {
  std::map<std::int32_t, DocId> gold;
  for (const auto& q : queries) gold[q.qid] = q.gold_docid;
  EvalRun run;
  std::map<std::int32_t, std::size_t> slot;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 4) throw Error(Errc::MalformedLine, "line " + std::to_string(lineno), lineno);
    const auto qid = static_cast<std::int32_t>(parse_double(f[0], lineno));
    const auto docid = static_cast<DocId>(parse_double(f[1], lineno));
    const auto rank = static_cast<std::int64_t>(parse_double(f[2], lineno));
    const double score = parse_double(f[3], lineno);
    auto g = gold.find(qid);
    if (g == gold.end()) throw Error(Errc::MalformedLine, "unknown qid " + std::to_string(qid), lineno);
    auto [it, fresh] = slot.try_emplace(qid, run.size());
    if (fresh) run.push_back({RankedList{qid, {}}, g->second});
    auto& entries = run[it->second].list.entries;
    if (rank != static_cast<std::int64_t>(entries.size()) + 1) {
      throw Error(Errc::MalformedLine, "ranks must be consecutive from 1", lineno);
    }
    entries.push_back({docid, score});
  }
  return run;
}

void write_report_tsv(std::span<const MetricsReport> reports, std::ostream& out) {
  for (std::size_t i = 0; i < std::size(kReportColumns); ++i) {
    out << (i ? "\t" : "") << kReportColumns[i];
  }
  out << '\n';
  for (const auto& r : reports) {
    out << r.dataset << '\t' << fmt_opt(r.alpha) << '\t' << fmt_exact(r.hits1) << '\t'
        << fmt_exact(r.hits5) << '\t' << fmt_exact(r.hits10) << '\t' << fmt_exact(r.mrr10) << '\t'
        << fmt_opt(r.rouge_l_hom) << '\t' << fmt_opt(r.ngd) << '\t' << fmt_opt(r.cr) << '\n';
  }
}

std::vector<MetricsReport> read_report_tsv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::ColumnMismatch, "report has no header");
  auto header = split_tabs(line);
  const auto expected = std::size(kReportColumns);
  bool ok = header.size() == expected;
  for (std::size_t i = 0; ok && i < expected; ++i) ok = header[i] == kReportColumns[i];
  if (!ok) throw Error(Errc::ColumnMismatch, "unexpected report columns: " + line);

  std::vector<MetricsReport> out;
  std::int64_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != expected) {
      throw Error(Errc::ColumnMismatch, "line " + std::to_string(lineno) + " has " +
                                            std::to_string(f.size()) + " fields", lineno);
    }
    MetricsReport r;
    r.dataset = f[0];
    r.alpha = parse_opt(f[1], lineno);
    r.hits1 = parse_double(f[2], lineno);
    r.hits5 = parse_double(f[3], lineno);
    r.hits10 = parse_double(f[4], lineno);
    r.mrr10 = parse_double(f[5], lineno);
    r.rouge_l_hom = parse_opt(f[6], lineno);
    r.ngd = parse_opt(f[7], lineno);
    r.cr = parse_opt(f[8], lineno);
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_report_table(std::span<const MetricsReport> reports) {
  auto cell = [](const std::optional<double>& x, const char* fmt) {
    if (!x) return std::string("NA");
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, *x);
    return std::string(buf);
  };
  std::vector<std::vector<std::string>> rows;
  rows.emplace_back(std::begin(kReportColumns), std::end(kReportColumns));
  rows.front()[0] = "Dataset";
  for (const auto& r : reports) {
    rows.push_back({r.dataset, cell(r.alpha, "%.4g"), cell(r.hits1, "%.4f"), cell(r.hits5, "%.4f"),
                    cell(r.hits10, "%.4f"), cell(r.mrr10, "%.4f"), cell(r.rouge_l_hom, "%.3f"),
                    cell(r.ngd, "%.3f"), cell(r.cr, "%.3f")});
  }
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto rule = [&] {
    for (auto w : width) out << '+' << std::string(w + 2, '-');
    out << "+\n";
  };
  rule();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      out << "| " << rows[r][c] << std::string(width[c] - rows[r][c].size() + 1, ' ');
    }
    out << "|\n";
    if (r == 0) rule();
  }
  rule();
  return out.str();
}

void sort_reports(std::vector<MetricsReport>& reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const MetricsReport& a, const MetricsReport& b) {
    if (a.dataset != b.dataset) return a.dataset < b.dataset;
    if (a.alpha.has_value() != b.alpha.has_value()) return a.alpha.has_value();
    return a.alpha.value_or(0.0) > b.alpha.value_or(0.0);
  });
}

}  // namespace ddsi
