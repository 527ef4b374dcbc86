#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ddsi/model.hpp"

namespace ddsi {

struct MmrConfig {
  double lambda = 0.5;
  std::int64_t m = 10;
  std::int64_t pool = 20;

  void validate() const;
};

struct Candidate {
  DocId docid = 0;
  std::span<const double> vec;
};

/// Greedy maximal marginal relevance. Each step picks the unselected
/// candidate maximizing lambda*cos(d, q) - (1-lambda)*max_{r in R} cos(d, r),
/// with the max over an empty R taken as 0 and ties to the lower docid. The
/// recorded score is the MMR score at selection time.
RankedList mmr_rerank(std::span<const double> query, std::span<const Candidate> candidates,
                      const MmrConfig& cfg, std::int32_t qid = 0);

/// Top-`pool` docids by logit, re-ranked with cls_w rows as document vectors.
RankedList retrieve_then_rerank(const ModelParams& p, std::span<const TokenId> tokens,
                                const MmrConfig& cfg, std::int32_t qid = 0);

}  // namespace ddsi
