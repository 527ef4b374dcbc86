#include "ddsi/mmr.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "ddsi/error.hpp"

namespace ddsi {

void MmrConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(Errc::InvalidConfig, "lambda must be in [0, 1]");
  if (m < 1) throw Error(Errc::InvalidConfig, "m must be >= 1");
  if (pool < m) throw Error(Errc::InvalidConfig, "pool must be >= m");
}

RankedList mmr_rerank(std::span<const double> query, std::span<const Candidate> candidates,
                      const MmrConfig& cfg, std::int32_t qid) {
  cfg.validate();
  const std::size_t n = candidates.size();
  if (static_cast<std::size_t>(cfg.m) > n) {
    throw Error(Errc::InvalidConfig, "m exceeds the number of candidates", cfg.m);
  }
  std::set<DocId> ids;
  for (const auto& c : candidates) {
    if (!ids.insert(c.docid).second) throw Error(Errc::InvalidConfig, "duplicate candidate docid", c.docid);
  }

  std::vector<double> relevance(n);
  for (std::size_t i = 0; i < n; ++i) relevance[i] = cosine(candidates[i].vec, query);

  // Running max similarity to the selected set; unused while R is empty.
  std::vector<double> max_sim(n, -std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);

  RankedList out;
  out.qid = qid;
  for (std::int64_t step = 0; step < cfg.m; ++step) {
    std::size_t best = n;
    double best_score = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double penalty = step == 0 ? 0.0 : max_sim[i];
      const double score = cfg.lambda * relevance[i] - (1.0 - cfg.lambda) * penalty;
      if (best == n || score > best_score ||
          (score == best_score && candidates[i].docid < candidates[best].docid)) {
        best = i;
        best_score = score;
      }
    }
    taken[best] = true;
    out.entries.push_back({candidates[best].docid, best_score});
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i]) max_sim[i] = std::max(max_sim[i], cosine(candidates[i].vec, candidates[best].vec));
    }
  }
  return out;
}

RankedList retrieve_then_rerank(const ModelParams& p, std::span<const TokenId> tokens,
                                const MmrConfig& cfg, std::int32_t qid) {
  cfg.validate();
  if (cfg.pool > p.dims.docs) {
    throw Error(Errc::KOutOfRange, "pool exceeds N", cfg.pool);
  }
  auto enc = encode(p, tokens);
  auto logits = score_docs(p, enc.query);
  auto pool = top_k(logits, cfg.pool, qid);
  std::vector<Candidate> cands;
  cands.reserve(pool.entries.size());
  for (const auto& e : pool.entries) cands.push_back({e.docid, p.cls_row(e.docid)});
  return mmr_rerank(enc.query, cands, cfg, qid);
}

}  // namespace ddsi
