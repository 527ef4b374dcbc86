#include "ddsi/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "ddsi/error.hpp"
#include "ddsi/rng.hpp"

namespace ddsi {

namespace {

std::atomic<std::uint64_t> g_diversity_calls{0};

struct RowNorms {
  double dot;
  double nu;
  double nv;
};

RowNorms row_norms(std::span<const double> u, std::span<const double> v) {
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  return {dot, std::sqrt(uu), std::sqrt(vv)};
}

void check_topk(const ModelParams& p, std::span<const DocId> topk) {
  if (topk.size() < 2) {
    throw Error(Errc::KTooSmall, "diversity needs K >= 2", static_cast<std::int64_t>(topk.size()));
  }
  std::set<DocId> seen;
  for (auto d : topk) {
    if (d < 0 || d >= p.dims.docs) throw Error(Errc::KOutOfRange, "docid " + std::to_string(d), d);
    if (!seen.insert(d).second) throw Error(Errc::InvalidConfig, "duplicate docid in top-K", d);
  }
}

void check_batch(const ModelParams& p, std::span<const QueryExample> batch,
                 const std::vector<std::vector<DocId>>* fixed_topk) {
  if (batch.empty()) throw Error(Errc::EmptyInput, "empty batch");
  if (fixed_topk && fixed_topk->size() != batch.size()) {
    throw Error(Errc::ShapeMismatch, "one top-K set per batch example required");
  }
  for (const auto& ex : batch) {
    if (ex.gold_docid < 0 || ex.gold_docid >= p.dims.docs) {
      throw Error(Errc::GoldDocidOutOfRange, "gold docid " + std::to_string(ex.gold_docid),
                  ex.gold_docid);
    }
  }
}

std::vector<DocId> select_topk(std::span<const double> logits, const TrainConfig& cfg,
                               const std::vector<std::vector<DocId>>* fixed_topk, std::size_t i) {
  if (fixed_topk) return (*fixed_topk)[i];
  return top_k(logits, cfg.k).docids();
}

// Adds scale * d(mean pairwise cosine)/d(rows) into grad rows.
void add_diversity_grad(const ModelParams& p, std::span<const DocId> topk, double scale,
                        Gradients& g) {
  const auto d = static_cast<std::size_t>(p.dims.dim);
  const double pairs = static_cast<double>(topk.size() * (topk.size() - 1) / 2);
  const double s = scale / pairs;
  for (std::size_t a = 0; a < topk.size(); ++a) {
    for (std::size_t b = a + 1; b < topk.size(); ++b) {
      auto u = p.cls_row(topk[a]);
      auto v = p.cls_row(topk[b]);
      auto [dot, nu, nv] = row_norms(u, v);
      if (nu == 0.0 || nv == 0.0) continue;
      const double c = dot / (nu * nv);
      auto gu = g.cls_row(topk[a]);
      auto gv = g.cls_row(topk[b]);
      for (std::size_t k = 0; k < d; ++k) {
        gu[k] += s * (v[k] / (nu * nv) - c * u[k] / (nu * nu));
        gv[k] += s * (u[k] / (nu * nv) - c * v[k] / (nv * nv));
      }
    }
  }
}

}  // namespace

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw Error(Errc::InvalidConfig, "unknown optimizer '" + name + "'");
}

void TrainConfig::validate(std::int64_t num_docs) const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(Errc::InvalidConfig, what);
  };
  require(alpha >= 0.0 && alpha <= 1.0, "alpha must be in [0, 1]");
  if (k < 2) throw Error(Errc::KTooSmall, "K must be >= 2", k);
  if (num_docs > 0 && k > num_docs) {
    throw Error(Errc::KOutOfRange, "K=" + std::to_string(k) + " exceeds N=" + std::to_string(num_docs), k);
  }
  require(lr > 0.0 && std::isfinite(lr), "lr must be > 0");
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(dim >= 1, "dim must be >= 1");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "beta1 must be in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "beta2 must be in [0, 1)");
  require(adam_eps > 0.0, "eps must be > 0");
}

double combine_loss(double alpha, double ce, double diversity) {
  return alpha * ce + (1.0 - alpha) * diversity;
}

double cross_entropy(std::span<const double> probs, DocId gold) {
  if (gold < 0 || static_cast<std::size_t>(gold) >= probs.size()) {
    throw Error(Errc::GoldDocidOutOfRange, "gold docid " + std::to_string(gold), gold);
  }
  return -std::log(std::max(probs[static_cast<std::size_t>(gold)], kProbFloor));
}

double diversity_term(const ModelParams& p, std::span<const DocId> topk) {
  check_topk(p, topk);
  g_diversity_calls.fetch_add(1, std::memory_order_relaxed);
  double sum = 0.0;
  for (std::size_t a = 0; a < topk.size(); ++a) {
    for (std::size_t b = a + 1; b < topk.size(); ++b) {
      auto [dot, nu, nv] = row_norms(p.cls_row(topk[a]), p.cls_row(topk[b]));
      if (nu == 0.0 || nv == 0.0) continue;
      sum += dot / (nu * nv);
    }
  }
  return sum / static_cast<double>(topk.size() * (topk.size() - 1) / 2);
}

LossBreakdown total_loss(const ModelParams& p, std::span<const QueryExample> batch,
                         const TrainConfig& cfg, const std::vector<std::vector<DocId>>* fixed_topk) {
  check_batch(p, batch, fixed_topk);
  const bool diverse = cfg.alpha != 1.0;
  LossBreakdown out;
  out.alpha = cfg.alpha;
  double ce_sum = 0.0, div_sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto logits = forward(p, batch[i].tokens);
    ce_sum += cross_entropy(softmax(logits), batch[i].gold_docid);
    if (diverse) {
      auto sel = select_topk(logits, cfg, fixed_topk, i);
      div_sum += diversity_term(p, sel);
      out.selected_topk.push_back(std::move(sel));
    }
  }
  const double b = static_cast<double>(batch.size());
  out.ce = ce_sum / b;
  out.diversity = diverse ? div_sum / b : 0.0;
  out.total = combine_loss(cfg.alpha, out.ce, out.diversity);
  return out;
}

BackwardResult backward(const ModelParams& p, std::span<const QueryExample> batch,
                        const TrainConfig& cfg, const std::vector<std::vector<DocId>>* fixed_topk) {
  check_batch(p, batch, fixed_topk);
  const auto d = static_cast<std::size_t>(p.dims.dim);
  const auto n = static_cast<std::size_t>(p.dims.docs);
  const bool diverse = cfg.alpha != 1.0;
  const double b = static_cast<double>(batch.size());
  const double ce_scale = cfg.alpha / b;
  const double div_scale = (1.0 - cfg.alpha) / b;

  BackwardResult res;
  static_cast<ParamTensors&>(res.grads) = ParamTensors::zeros(p.dims);
  Gradients& g = res.grads;
  LossBreakdown& loss = res.loss;
  loss.alpha = cfg.alpha;

  double ce_sum = 0.0, div_sum = 0.0;
  std::vector<double> dz(n), dq(d), dh(d), dpooled(d);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    auto enc = encode(p, ex.tokens);
    auto logits = score_docs(p, enc.query);
    auto probs = softmax(logits);
    const auto gold = static_cast<std::size_t>(ex.gold_docid);
    ce_sum += cross_entropy(probs, ex.gold_docid);

    // Below the floor the loss is constant in the parameters.
    if (probs[gold] >= kProbFloor) {
      for (std::size_t j = 0; j < n; ++j) dz[j] = ce_scale * probs[j];
      dz[gold] -= ce_scale;

      std::fill(dq.begin(), dq.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double* w = &p.cls_w[j * d];
        double* gw = &g.cls_w[j * d];
        for (std::size_t k = 0; k < d; ++k) {
          gw[k] += dz[j] * enc.query[k];
          dq[k] += dz[j] * w[k];
        }
        g.cls_b[j] += dz[j];
      }
      for (std::size_t k = 0; k < d; ++k) dh[k] = dq[k] * (1.0 - enc.query[k] * enc.query[k]);

      std::fill(dpooled.begin(), dpooled.end(), 0.0);
      for (std::size_t r = 0; r < d; ++r) {
        const double* w = &p.hidden_w[r * d];
        double* gw = &g.hidden_w[r * d];
        for (std::size_t k = 0; k < d; ++k) {
          gw[k] += dh[r] * enc.pooled[k];
          dpooled[k] += w[k] * dh[r];
        }
        g.hidden_b[r] += dh[r];
      }
      const double inv_len = 1.0 / static_cast<double>(ex.tokens.size());
      for (auto t : ex.tokens) {
        double* ge = &g.embed[static_cast<std::size_t>(t) * d];
        for (std::size_t k = 0; k < d; ++k) ge[k] += dpooled[k] * inv_len;
      }
    }

    if (diverse) {
      auto sel = select_topk(logits, cfg, fixed_topk, i);
      div_sum += diversity_term(p, sel);
      add_diversity_grad(p, sel, div_scale, g);
      loss.selected_topk.push_back(std::move(sel));
    }
  }
  loss.ce = ce_sum / b;
  loss.diversity = diverse ? div_sum / b : 0.0;
  loss.total = combine_loss(cfg.alpha, loss.ce, loss.diversity);
  if (!g.all_finite()) throw Error(Errc::NonFiniteGradient, "gradient has non-finite entries");
  return res;
}

OptimizerState make_optimizer_state(const Dims& dims) {
  return {0, ParamTensors::zeros(dims), ParamTensors::zeros(dims)};
}

void step(ModelParams& p, const Gradients& g, OptimizerState& state, const TrainConfig& cfg) {
  if (!(p.dims == g.dims)) throw Error(Errc::ShapeMismatch, "gradient dims differ from params");
  auto params = p.tensors();
  auto grads = g.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size()) throw Error(Errc::ShapeMismatch, "tensor size differs");
  }

  if (cfg.optimizer == OptimizerKind::Sgd) {
    for (std::size_t t = 0; t < params.size(); ++t) {
      for (std::size_t i = 0; i < params[t].size(); ++i) params[t][i] -= cfg.lr * grads[t][i];
    }
    return;
  }

  if (!(state.m.dims == p.dims) || !(state.v.dims == p.dims)) {
    if (state.t != 0) throw Error(Errc::ShapeMismatch, "optimizer state dims differ from params");
    state = make_optimizer_state(p.dims);
  }
  ++state.t;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  auto ms = state.m.tensors();
  auto vs = state.v.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double gi = grads[t][i];
      ms[t][i] = b1 * ms[t][i] + (1.0 - b1) * gi;
      vs[t][i] = b2 * vs[t][i] + (1.0 - b2) * gi * gi;
      const double mhat = ms[t][i] / c1;
      const double vhat = vs[t][i] / c2;
      params[t][i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

namespace {

double hits_at_1(const ModelParams& p, std::span<const QueryExample> queries) {
  std::size_t hits = 0;
  for (const auto& q : queries) {
    auto logits = forward(p, q.tokens);
    if (top_k(logits, 1).entries.front().docid == q.gold_docid) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

}  // namespace

TrainResult train(const Corpus& corpus, std::span<const QueryExample> queries, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  const auto n = static_cast<std::int64_t>(corpus.size());
  if (n == 0) throw Error(Errc::EmptyInput, "empty corpus");
  if (queries.empty()) throw Error(Errc::EmptyInput, "no training queries");
  cfg.validate(n);

  TrainResult result;
  result.params = init_model(static_cast<std::int64_t>(corpus.vocab.size()), cfg.dim, n, cfg.seed);
  auto& p = result.params;
  auto state = make_optimizer_state(p.dims);

  std::vector<std::size_t> order(queries.size());
  std::vector<QueryExample> batch;
  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span(order));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss.alpha = cfg.alpha;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    std::int64_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++batch_index) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) {
        batch.push_back(queries[order[i]]);
      }
      BackwardResult br;
      try {
        br = backward(p, batch, cfg);
      } catch (const Error& e) {
        if (e.code() != Errc::NonFiniteGradient) throw;
        throw Error(Errc::NonFiniteGradient, "epoch " + std::to_string(epoch) + " batch " +
                                                 std::to_string(batch_index));
      }
      const double w = static_cast<double>(batch.size());
      rec.loss.ce += w * br.loss.ce;
      rec.loss.diversity += w * br.loss.diversity;
      rec.loss.total += w * br.loss.total;
      step(p, br.grads, state, cfg);
    }
    const double total = static_cast<double>(queries.size());
    rec.loss.ce /= total;
    rec.loss.diversity /= total;
    rec.loss.total /= total;
    rec.train_hits1 = hits_at_1(p, queries);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

std::string format_history(const std::vector<EpochRecord>& history) {
  std::string out = "epoch\tce\tdiversity\ttotal\ttrain_hits1\n";
  char buf[256];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%lld\t%.9g\t%.9g\t%.9g\t%.9g\n", static_cast<long long>(r.epoch),
                  r.loss.ce, r.loss.diversity, r.loss.total, r.train_hits1);
    out += buf;
  }
  return out;
}

namespace instrumentation {
std::uint64_t diversity_calls() { return g_diversity_calls.load(std::memory_order_relaxed); }
void reset_diversity_calls() { g_diversity_calls.store(0, std::memory_order_relaxed); }
}  // namespace instrumentation

}  // namespace ddsi
