#include <doctest.h>

#include <cmath>
#include <set>

#include "ddsi/checkpoint.hpp"
#include "ddsi/error.hpp"
#include "ddsi/metrics.hpp"
#include "ddsi/train.hpp"
#include "oracles/instances.hpp"
#include "oracles/reference_loss.hpp"

using namespace ddsi;
using doctest::Approx;

namespace {

Errc error_code(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected ddsi::Error");
  return Errc::Io;
}

TrainConfig config(double alpha, std::int64_t k) {
  TrainConfig cfg;
  cfg.alpha = alpha;
  cfg.k = k;
  return cfg;
}

void set_row(ModelParams& p, DocId d, std::vector<double> v) {
  auto row = p.cls_row(d);
  std::copy(v.begin(), v.end(), row.begin());
}

}  // namespace

TEST_CASE("cross_entropy") {
  CHECK(cross_entropy(std::vector<double>{0, 1, 0}, 1) == 0.0);
  CHECK(cross_entropy(std::vector<double>(4, 0.25), 2) == Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(cross_entropy(std::vector<double>(4, 0.25), 2) == Approx(1.3863).epsilon(1e-4));
  CHECK(cross_entropy(std::vector<double>{1.0, 1e-20}, 1) == -std::log(1e-12));
  CHECK(error_code([] { cross_entropy(std::vector<double>{1.0}, 1); }) == Errc::GoldDocidOutOfRange);
}

TEST_CASE("diversity_term") {
  auto p = init_model(2, 2, 3, 0);
  SUBCASE("identical rows") {
    for (DocId d = 0; d < 3; ++d) set_row(p, d, {0.6, -0.8});
    CHECK(diversity_term(p, std::vector<DocId>{0, 1, 2}) == Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("orthogonal pair") {
    set_row(p, 0, {1, 0});
    set_row(p, 1, {0, 3});
    CHECK(diversity_term(p, std::vector<DocId>{0, 1}) == 0.0);
  }
  SUBCASE("e1, e2 and their bisector") {
    set_row(p, 0, {1, 0});
    set_row(p, 1, {0, 1});
    set_row(p, 2, {M_SQRT1_2, M_SQRT1_2});
    const double expected = (0.0 + M_SQRT1_2 + M_SQRT1_2) / 3.0;
    CHECK(diversity_term(p, std::vector<DocId>{0, 1, 2}) == Approx(expected).epsilon(1e-14));
    CHECK(diversity_term(p, std::vector<DocId>{0, 1, 2}) == Approx(0.4714).epsilon(1e-4));
  }
  SUBCASE("a zero row contributes nothing") {
    set_row(p, 0, {1, 0});
    set_row(p, 1, {0, 0});
    set_row(p, 2, {1, 0});
    CHECK(diversity_term(p, std::vector<DocId>{0, 1, 2}) == Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("may go negative") {
    set_row(p, 0, {1, 0});
    set_row(p, 1, {-1, 0});
    CHECK(diversity_term(p, std::vector<DocId>{0, 1}) == -1.0);
  }
  CHECK(error_code([&] { diversity_term(p, std::vector<DocId>{0}); }) == Errc::KTooSmall);
}

TEST_CASE("total_loss combines the terms linearly") {
  CHECK(combine_loss(0.5, 1.0, 0.4) == Approx(0.7).epsilon(1e-15));

  auto inst = oracle::random_instance(17, 6, 5, 8, 4);
  auto ce_only = total_loss(inst.params, inst.batch, config(1.0, 3));
  CHECK(ce_only.total == ce_only.ce);
  CHECK(ce_only.diversity == 0.0);
  CHECK(ce_only.selected_topk.empty());

  auto div_only = total_loss(inst.params, inst.batch, config(0.0, 3));
  CHECK(div_only.total == div_only.diversity);
  CHECK(div_only.ce == ce_only.ce);
  REQUIRE(div_only.selected_topk.size() == 4);

  for (double a : {0.25, 0.5, 0.75}) {
    auto l = total_loss(inst.params, inst.batch, config(a, 3));
    CHECK(l.total == a * l.ce + (1.0 - a) * l.diversity);
    CHECK(l.diversity == div_only.diversity);
  }
}

TEST_CASE("alpha = 1 never evaluates the diversity term") {
  auto inst = oracle::random_instance(3, 6, 5, 8, 4);
  instrumentation::reset_diversity_calls();
  auto br = backward(inst.params, inst.batch, config(1.0, 3));
  total_loss(inst.params, inst.batch, config(1.0, 3));
  CHECK(instrumentation::diversity_calls() == 0);
  CHECK(br.loss.total == br.loss.ce);
  backward(inst.params, inst.batch, config(0.5, 3));
  CHECK(instrumentation::diversity_calls() == 4);
}

TEST_CASE("backward matches central differences") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    for (double alpha : {0.0, 0.5, 1.0}) {
      auto inst = oracle::random_instance(seed, 6, 5, 8, 4);
      auto br = backward(inst.params, inst.batch, config(alpha, 3));
      auto ref = oracle::to_ref(inst.batch, br.loss.selected_topk);
      CHECK(oracle::ref_loss(inst.params, ref, alpha) == Approx(br.loss.total).epsilon(1e-12));
      auto check = oracle::finite_difference_check(inst.params, br.grads, ref, alpha);
      CHECK(check.checked == static_cast<std::size_t>(inst.params.size()));
      CHECK_MESSAGE(check.failures == 0, "seed " << seed << " alpha " << alpha << " worst " << check.worst_rel);
    }
  }
}

TEST_CASE("gradient locality") {
  auto inst = oracle::random_instance(8, 6, 5, 30, 2);
  SUBCASE("cross-entropy reaches every row through the softmax") {
    // Only the diversity term is row-local; the softmax normalizer gives every
    // classifier row a cross-entropy gradient of p_j * q.
    auto br = backward(inst.params, inst.batch, config(0.5, 3));
    std::set<DocId> touched;
    for (const auto& s : br.loss.selected_topk) touched.insert(s.begin(), s.end());
    for (const auto& q : inst.batch) touched.insert(q.gold_docid);
    REQUIRE(touched.size() < 30);
    for (DocId d = 0; d < 30; ++d) {
      auto row = br.grads.cls_row(d);
      CHECK(std::any_of(row.begin(), row.end(), [](double x) { return x != 0.0; }));
    }
  }
  SUBCASE("the diversity term reaches only selected classifier rows") {
    auto br = backward(inst.params, inst.batch, config(0.0, 3));
    std::set<DocId> selected;
    for (const auto& s : br.loss.selected_topk) selected.insert(s.begin(), s.end());
    const auto& g = br.grads;
    for (double x : g.embed) CHECK(x == 0.0);
    for (double x : g.hidden_w) CHECK(x == 0.0);
    for (double x : g.hidden_b) CHECK(x == 0.0);
    for (double x : g.cls_b) CHECK(x == 0.0);
    for (DocId d = 0; d < 30; ++d) {
      if (selected.count(d)) continue;
      for (double x : g.cls_row(d)) CHECK(x == 0.0);
    }
  }
  SUBCASE("tokens absent from the batch get no embedding gradient") {
    auto br = backward(inst.params, inst.batch, config(1.0, 3));
    std::set<TokenId> used;
    for (const auto& q : inst.batch) used.insert(q.tokens.begin(), q.tokens.end());
    for (TokenId t = 0; t < 6; ++t) {
      if (used.count(t)) continue;
      for (std::size_t k = 0; k < 5; ++k) CHECK(br.grads.embed[static_cast<std::size_t>(t) * 5 + k] == 0.0);
    }
  }
}

TEST_CASE("a small diversity step lowers the diversity of the selected set") {
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto inst = oracle::random_instance(1000 + seed, 6, 5, 8, 4);
    auto cfg = config(0.0, 3);
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.lr = 1e-3;
    auto br = backward(inst.params, inst.batch, cfg);
    auto before = total_loss(inst.params, inst.batch, cfg, &br.loss.selected_topk).diversity;
    auto state = make_optimizer_state(inst.params.dims);
    step(inst.params, br.grads, state, cfg);
    auto after = total_loss(inst.params, inst.batch, cfg, &br.loss.selected_topk).diversity;
    decreased += after < before;
  }
  CHECK(decreased >= 95);
}

TEST_CASE("step") {
  auto p = init_model(4, 3, 5, 2);
  SUBCASE("zero gradient leaves parameters bitwise unchanged") {
    for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
      auto q = p;
      TrainConfig cfg;
      cfg.optimizer = kind;
      auto state = make_optimizer_state(q.dims);
      Gradients g;
      static_cast<ParamTensors&>(g) = ParamTensors::zeros(q.dims);
      step(q, g, state, cfg);
      CHECK(q == p);
    }
  }
  SUBCASE("sgd with lr 1 and g = theta zeroes the model") {
    auto q = p;
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.lr = 1.0;
    Gradients g;
    static_cast<ParamTensors&>(g) = q;
    auto state = make_optimizer_state(q.dims);
    step(q, g, state, cfg);
    for (auto t : q.tensors())
      for (double x : t) CHECK(x == 0.0);
  }
  SUBCASE("adam first step moves each parameter by about lr") {
    auto q = p;
    TrainConfig cfg;
    cfg.lr = 0.01;
    Gradients g;
    static_cast<ParamTensors&>(g) = ParamTensors::zeros(q.dims);
    g.cls_b[2] = 5.0;
    g.cls_b[3] = -0.001;
    auto state = make_optimizer_state(q.dims);
    step(q, g, state, cfg);
    CHECK(q.cls_b[2] == Approx(-0.01).epsilon(1e-6));
    CHECK(q.cls_b[3] == Approx(0.01).epsilon(1e-4));
    CHECK(state.t == 1);
  }
  SUBCASE("identical inputs give identical outputs") {
    auto inst = oracle::random_instance(4, 6, 5, 8, 4);
    auto br = backward(inst.params, inst.batch, config(0.5, 3));
    auto a = inst.params, b = inst.params;
    auto sa = make_optimizer_state(a.dims), sb = make_optimizer_state(b.dims);
    TrainConfig cfg;
    for (int i = 0; i < 3; ++i) {
      step(a, br.grads, sa, cfg);
      step(b, br.grads, sb, cfg);
    }
    CHECK(a == b);
  }
  SUBCASE("shape mismatch") {
    auto q = p;
    Gradients g;
    static_cast<ParamTensors&>(g) = ParamTensors::zeros({4, 3, 6});
    auto state = make_optimizer_state(q.dims);
    CHECK(error_code([&] { step(q, g, state, TrainConfig{}); }) == Errc::ShapeMismatch);
  }
}

TEST_CASE("non-finite gradients abort") {
  auto inst = oracle::random_instance(5, 6, 5, 8, 2);
  inst.params.cls_w[0] = std::numeric_limits<double>::infinity();
  CHECK(error_code([&] { backward(inst.params, inst.batch, config(0.5, 3)); }) == Errc::NonFiniteGradient);
}

TEST_CASE("train config validation") {
  CHECK(error_code([] { config(1.5, 3).validate(); }) == Errc::InvalidConfig);
  CHECK(error_code([] { config(0.5, 1).validate(); }) == Errc::KTooSmall);
  CHECK(error_code([] { config(0.5, 9).validate(8); }) == Errc::KOutOfRange);
  auto cfg = config(0.5, 3);
  cfg.lr = 0.0;
  CHECK(error_code([&] { cfg.validate(); }) == Errc::InvalidConfig);
  CHECK(parse_optimizer("sgd") == OptimizerKind::Sgd);
  CHECK(error_code([] { parse_optimizer("rmsprop"); }) == Errc::InvalidConfig);
}

TEST_CASE("training is deterministic and alpha changes the run") {
  SyntheticConfig sc;
  sc.num_topics = 3;
  sc.docs_per_topic = 4;
  auto data = generate_synthetic(sc);
  TrainConfig cfg;
  cfg.k = 3;
  cfg.epochs = 3;
  cfg.dim = 8;
  auto a = train(data.corpus, data.train, cfg);
  auto b = train(data.corpus, data.train, cfg);
  CHECK(serialize_checkpoint(a.params) == serialize_checkpoint(b.params));
  CHECK(format_history(a.history) == format_history(b.history));
  for (const auto& r : a.history) CHECK(r.loss.diversity == 0.0);

  cfg.alpha = 0.999999;
  auto c = train(data.corpus, data.train, cfg);
  CHECK(format_history(c.history) != format_history(a.history));
  CHECK(c.history.front().loss.diversity != 0.0);
  CHECK(c.params.size() == a.params.size());
}

TEST_CASE("baseline training fits the standard synthetic training set") {
  auto data = generate_synthetic(SyntheticConfig{});
  TrainConfig cfg;  // alpha = 1, 30 epochs
  auto res = train(data.corpus, data.train, cfg);
  REQUIRE(res.history.size() == 30);
  // Observed 0.80 at 30 epochs.
  CHECK(res.history.back().train_hits1 >= 0.75);
  CHECK(res.history.back().loss.ce < res.history.front().loss.ce);
}

TEST_CASE("format_history") {
  EpochRecord r;
  r.epoch = 1;
  r.loss.ce = 2.5;
  r.loss.diversity = 0.25;
  r.loss.total = 1.375;
  r.train_hits1 = 0.5;
  CHECK(format_history({r}) == "epoch\tce\tdiversity\ttotal\ttrain_hits1\n1\t2.5\t0.25\t1.375\t0.5\n");
}
