#include "ddsi/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ddsi/error.hpp"
#include "ddsi/rng.hpp"

namespace ddsi {

std::int64_t param_count(const Dims& dims) {
  const auto [v, d, n] = dims;
  return v * d + d * d + d + n * d + n;
}

ParamTensors ParamTensors::zeros(const Dims& dims) {
  ParamTensors t;
  t.dims = dims;
  const auto v = static_cast<std::size_t>(dims.vocab);
  const auto d = static_cast<std::size_t>(dims.dim);
  const auto n = static_cast<std::size_t>(dims.docs);
  t.embed.assign(v * d, 0.0);
  t.hidden_w.assign(d * d, 0.0);
  t.hidden_b.assign(d, 0.0);
  t.cls_w.assign(n * d, 0.0);
  t.cls_b.assign(n, 0.0);
  return t;
}

std::array<std::span<double>, 5> ParamTensors::tensors() {
  return {std::span(embed), std::span(hidden_w), std::span(hidden_b), std::span(cls_w),
          std::span(cls_b)};
}

std::array<std::span<const double>, 5> ParamTensors::tensors() const {
  return {std::span(embed), std::span(hidden_w), std::span(hidden_b), std::span(cls_w),
          std::span(cls_b)};
}

std::span<const double> ParamTensors::embed_row(TokenId t) const {
  const auto d = static_cast<std::size_t>(dims.dim);
  return std::span(embed).subspan(static_cast<std::size_t>(t) * d, d);
}

std::span<const double> ParamTensors::cls_row(DocId id) const {
  const auto d = static_cast<std::size_t>(dims.dim);
  return std::span(cls_w).subspan(static_cast<std::size_t>(id) * d, d);
}

std::span<double> ParamTensors::cls_row(DocId id) {
  const auto d = static_cast<std::size_t>(dims.dim);
  return std::span(cls_w).subspan(static_cast<std::size_t>(id) * d, d);
}

bool ParamTensors::all_finite() const {
  for (auto t : tensors()) {
    for (double x : t) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

ModelParams init_model(std::int64_t vocab, std::int64_t dim, std::int64_t docs, std::uint64_t seed) {
  if (vocab < 1 || dim < 1 || docs < 1) {
    throw Error(Errc::InvalidDims, "V, d and N must all be >= 1");
  }
  ModelParams p;
  static_cast<ParamTensors&>(p) = ParamTensors::zeros({vocab, dim, docs});
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  Rng rng(seed);
  for (auto& x : p.embed) x = rng.uniform(-bound, bound);
  for (auto& x : p.hidden_w) x = rng.uniform(-bound, bound);
  for (auto& x : p.cls_w) x = rng.uniform(-bound, bound);
  return p;
}

void OpTrace::record(std::string_view op, std::initializer_list<std::int64_t> shape) {
  std::string entry(op);
  for (auto s : shape) entry += ":" + std::to_string(s);
  // FNV-1a over the entry plus a separator.
  for (unsigned char c : entry) {
    hash_ ^= c;
    hash_ *= 0x100000001b3ULL;
  }
  hash_ ^= 0xff;
  hash_ *= 0x100000001b3ULL;
  ops_.push_back(std::move(entry));
}

Encoding encode(const ModelParams& p, std::span<const TokenId> tokens, OpTrace* trace) {
  if (tokens.empty()) throw Error(Errc::EmptyQuery, "query has no tokens");
  const auto d = static_cast<std::size_t>(p.dims.dim);
  Encoding enc;
  enc.pooled.assign(d, 0.0);
  for (auto t : tokens) {
    if (t < 0 || t >= p.dims.vocab) {
      throw Error(Errc::TokenOutOfRange, "token " + std::to_string(t), t);
    }
    auto row = p.embed_row(t);
    for (std::size_t k = 0; k < d; ++k) enc.pooled[k] += row[k];
  }
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (auto& x : enc.pooled) x *= inv;
  if (trace) trace->record("embed_mean", {static_cast<std::int64_t>(tokens.size()), p.dims.dim});

  enc.query.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double acc = p.hidden_b[i];
    const double* w = &p.hidden_w[i * d];
    for (std::size_t k = 0; k < d; ++k) acc += w[k] * enc.pooled[k];
    enc.query[i] = std::tanh(acc);
  }
  if (trace) {
    trace->record("affine", {p.dims.dim, p.dims.dim});
    trace->record("tanh", {p.dims.dim});
  }
  return enc;
}

std::vector<double> encode_query(const ModelParams& p, std::span<const TokenId> tokens) {
  return encode(p, tokens).query;
}

std::vector<double> score_docs(const ModelParams& p, std::span<const double> query, OpTrace* trace) {
  const auto d = static_cast<std::size_t>(p.dims.dim);
  const auto n = static_cast<std::size_t>(p.dims.docs);
  std::vector<double> logits(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = p.cls_b[i];
    const double* w = &p.cls_w[i * d];
    for (std::size_t k = 0; k < d; ++k) acc += w[k] * query[k];
    logits[i] = acc;
  }
  if (trace) trace->record("affine", {p.dims.docs, p.dims.dim});
  return logits;
}

std::vector<double> forward(const ModelParams& p, std::span<const TokenId> tokens, OpTrace* trace) {
  auto enc = encode(p, tokens, trace);
  return score_docs(p, enc.query, trace);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

std::vector<DocId> RankedList::docids() const {
  std::vector<DocId> ids;
  ids.reserve(entries.size());
  for (const auto& e : entries) ids.push_back(e.docid);
  return ids;
}

RankedList top_k(std::span<const double> logits, std::int64_t k, std::int32_t qid) {
  const auto n = static_cast<std::int64_t>(logits.size());
  if (k < 1 || k > n) {
    throw Error(Errc::KOutOfRange, "K=" + std::to_string(k) + " with N=" + std::to_string(n), k);
  }
  std::vector<DocId> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](DocId a, DocId b) {
    const double la = logits[static_cast<std::size_t>(a)];
    const double lb = logits[static_cast<std::size_t>(b)];
    if (la != lb) return la > lb;
    return a < b;
  });
  RankedList out;
  out.qid = qid;
  out.entries.reserve(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    const DocId id = order[static_cast<std::size_t>(i)];
    out.entries.push_back({id, logits[static_cast<std::size_t>(id)]});
  }
  return out;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error(Errc::ShapeMismatch, "cosine of unequal lengths");
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw Error(Errc::ZeroVector, "cosine of a zero vector");
  double c = dot / (std::sqrt(uu) * std::sqrt(vv));
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace ddsi
