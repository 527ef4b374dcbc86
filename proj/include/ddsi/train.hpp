#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddsi/corpus.hpp"
#include "ddsi/model.hpp"

namespace ddsi {

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

struct TrainConfig {
  double alpha = 1.0;
  std::int64_t k = 10;
  double lr = 1e-3;
  std::int64_t epochs = 30;
  std::int64_t batch_size = 32;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::int64_t dim = 64;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  /// Throws InvalidConfig, or KTooSmall / KOutOfRange for k. `num_docs` <= 0
  /// skips the K <= N check.
  void validate(std::int64_t num_docs = 0) const;
};

inline constexpr double kProbFloor = 1e-12;

struct LossBreakdown {
  double ce = 0.0;
  double diversity = 0.0;
  double alpha = 1.0;
  double total = 0.0;
  /// Top-K docids per batch example, in batch order. Empty when alpha == 1.
  std::vector<std::vector<DocId>> selected_topk;
};

/// alpha * ce + (1 - alpha) * diversity.
double combine_loss(double alpha, double ce, double diversity);

/// -log(max(probs[gold], 1e-12)).
double cross_entropy(std::span<const double> probs, DocId gold);

/// Mean cosine over the K(K-1)/2 unordered pairs of cls_w rows in `topk`.
/// A pair with a zero row contributes 0.
double diversity_term(const ModelParams& p, std::span<const DocId> topk);

/// Per-batch objective. Top-K sets are taken from each example's own logits
/// unless `fixed_topk` supplies them.
LossBreakdown total_loss(const ModelParams& p, std::span<const QueryExample> batch,
                         const TrainConfig& cfg,
                         const std::vector<std::vector<DocId>>* fixed_topk = nullptr);

struct BackwardResult {
  LossBreakdown loss;
  Gradients grads;
};

/// Exact gradients of `total_loss` with the top-K selection held constant.
/// Diversity gradients reach only the selected cls_w rows.
BackwardResult backward(const ModelParams& p, std::span<const QueryExample> batch,
                        const TrainConfig& cfg,
                        const std::vector<std::vector<DocId>>* fixed_topk = nullptr);

struct OptimizerState {
  std::int64_t t = 0;
  ParamTensors m;
  ParamTensors v;
};

OptimizerState make_optimizer_state(const Dims& dims);

/// One in-place update. Throws ShapeMismatch.
void step(ModelParams& p, const Gradients& g, OptimizerState& state, const TrainConfig& cfg);

struct EpochRecord {
  std::int64_t epoch = 0;
  LossBreakdown loss;  // example-weighted means over the epoch's batches
  double train_hits1 = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
};

TrainResult train(const Corpus& corpus, std::span<const QueryExample> queries,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// `epoch<TAB>ce<TAB>diversity<TAB>total<TAB>train_hits1` with a header line.
std::string format_history(const std::vector<EpochRecord>& history);

namespace instrumentation {
/// Number of diversity_term evaluations since the last reset.
std::uint64_t diversity_calls();
void reset_diversity_calls();
}  // namespace instrumentation

}  // namespace ddsi
