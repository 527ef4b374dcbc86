#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ddsi/corpus.hpp"

namespace ddsi {

struct Dims {
  std::int64_t vocab = 0;  // V
  std::int64_t dim = 0;    // d
  std::int64_t docs = 0;   // N

  bool operator==(const Dims&) const = default;
};

/// Number of scalars in a model with these dims. Depends on nothing else.
std::int64_t param_count(const Dims& dims);

/// Dense row-major parameter tensors. The same layout is used for gradients
/// and optimizer moments.
struct ParamTensors {
  Dims dims;
  std::vector<double> embed;     // V x d
  std::vector<double> hidden_w;  // d x d
  std::vector<double> hidden_b;  // d
  std::vector<double> cls_w;     // N x d, row i represents docid i
  std::vector<double> cls_b;     // N

  static ParamTensors zeros(const Dims& dims);

  std::array<std::span<double>, 5> tensors();
  std::array<std::span<const double>, 5> tensors() const;

  std::span<const double> embed_row(TokenId t) const;
  std::span<const double> cls_row(DocId d) const;
  std::span<double> cls_row(DocId d);

  std::int64_t size() const { return param_count(dims); }
  bool all_finite() const;

  bool operator==(const ParamTensors&) const = default;
};

struct ModelParams : ParamTensors {};
struct Gradients : ParamTensors {};

ModelParams init_model(std::int64_t vocab, std::int64_t dim, std::int64_t docs, std::uint64_t seed);

/// Records the sequence of primitive ops (name and shape) a forward pass
/// executes. Used to show inference work does not depend on training config.
class OpTrace {
 public:
  void record(std::string_view op, std::initializer_list<std::int64_t> shape);
  std::uint64_t hash() const { return hash_; }
  const std::vector<std::string>& ops() const { return ops_; }

 private:
  std::vector<std::string> ops_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

/// Intermediates of one query encoding, kept for the backward pass.
struct Encoding {
  std::vector<double> pooled;  // mean of token embeddings
  std::vector<double> query;   // tanh(hidden_w * pooled + hidden_b)
};

Encoding encode(const ModelParams& p, std::span<const TokenId> tokens, OpTrace* trace = nullptr);
std::vector<double> encode_query(const ModelParams& p, std::span<const TokenId> tokens);

/// cls_w * query + cls_b.
std::vector<double> score_docs(const ModelParams& p, std::span<const double> query,
                               OpTrace* trace = nullptr);
std::vector<double> forward(const ModelParams& p, std::span<const TokenId> tokens,
                            OpTrace* trace = nullptr);

std::vector<double> softmax(std::span<const double> logits);

struct RankedEntry {
  DocId docid = 0;
  double score = 0.0;

  bool operator==(const RankedEntry&) const = default;
};

struct RankedList {
  std::int32_t qid = 0;
  std::vector<RankedEntry> entries;

  std::vector<DocId> docids() const;
  bool operator==(const RankedList&) const = default;
};

/// K highest logits, ties to the smaller docid. Throws KOutOfRange unless 1 <= k <= N.
RankedList top_k(std::span<const double> logits, std::int64_t k, std::int32_t qid = 0);

/// u.v / (|u||v|). Throws ZeroVector if either norm is zero.
double cosine(std::span<const double> u, std::span<const double> v);

}  // namespace ddsi
