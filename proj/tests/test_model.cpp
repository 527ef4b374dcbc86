#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ddsi/checkpoint.hpp"
#include "ddsi/error.hpp"
#include "ddsi/model.hpp"
#include "ddsi/rng.hpp"

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

std::vector<double> random_vec(Rng& r, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = r.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("init_model") {
  auto a = init_model(10, 4, 5, 3);
  auto b = init_model(10, 4, 5, 3);
  CHECK(a == b);
  CHECK(a.size() == 85);
  CHECK(param_count({10, 4, 5}) == 85);
  for (double x : a.hidden_b) CHECK(x == 0.0);
  for (double x : a.cls_b) CHECK(x == 0.0);
  for (double x : a.cls_w) CHECK(std::fabs(x) <= 0.5);
  CHECK_FALSE(init_model(10, 4, 5, 4) == a);
  CHECK(error_code([] { init_model(0, 4, 5, 1); }) == Errc::InvalidDims);
  CHECK(error_code([] { init_model(3, 0, 5, 1); }) == Errc::InvalidDims);
}

TEST_CASE("encode_query") {
  auto p = init_model(6, 3, 4, 1);

  SUBCASE("zero embeddings leave tanh of the bias") {
    std::fill(p.embed.begin(), p.embed.end(), 0.0);
    p.hidden_b = {0.1, -0.2, 0.3};
    auto q = encode_query(p, std::vector<TokenId>{1, 2, 5});
    for (std::size_t i = 0; i < 3; ++i) CHECK(q[i] == std::tanh(p.hidden_b[i]));
  }
  SUBCASE("single token pools to its embedding") {
    auto enc = encode(p, std::vector<TokenId>{4});
    auto row = p.embed_row(4);
    for (std::size_t i = 0; i < 3; ++i) CHECK(enc.pooled[i] == row[i]);
  }
  SUBCASE("token order does not matter") {
    auto q1 = encode_query(p, std::vector<TokenId>{1, 2, 3});
    auto q2 = encode_query(p, std::vector<TokenId>{3, 1, 2});
    for (std::size_t i = 0; i < 3; ++i) CHECK(q1[i] == Approx(q2[i]).epsilon(1e-15));
  }
  SUBCASE("errors") {
    CHECK(error_code([&] { encode_query(p, std::vector<TokenId>{}); }) == Errc::EmptyQuery);
    CHECK(error_code([&] { encode_query(p, std::vector<TokenId>{6}); }) == Errc::TokenOutOfRange);
    CHECK(error_code([&] { encode_query(p, std::vector<TokenId>{-1}); }) == Errc::TokenOutOfRange);
  }
}

TEST_CASE("forward") {
  auto p = init_model(6, 3, 4, 2);
  const std::vector<TokenId> q{1, 2};

  SUBCASE("zero classifier returns the bias") {
    std::fill(p.cls_w.begin(), p.cls_w.end(), 0.0);
    p.cls_b = {0.5, -1.0, 2.0, 0.0};
    CHECK(forward(p, q) == p.cls_b);
  }
  SUBCASE("single document has probability one") {
    auto one = init_model(6, 3, 1, 2);
    auto probs = softmax(forward(one, q));
    REQUIRE(probs.size() == 1);
    CHECK(probs[0] == 1.0);
  }
  SUBCASE("duplicate rows tie") {
    auto r1 = p.cls_row(1);
    std::copy(r1.begin(), r1.end(), p.cls_row(3).begin());
    auto z = forward(p, q);
    CHECK(z[1] == z[3]);
  }
  SUBCASE("shifting every bias shifts every logit and keeps the ranking") {
    auto z0 = forward(p, q);
    for (auto& b : p.cls_b) b += 3.25;
    auto z1 = forward(p, q);
    for (std::size_t i = 0; i < z0.size(); ++i) CHECK(z1[i] == Approx(z0[i] + 3.25).epsilon(1e-14));
    CHECK(top_k(z0, 4).docids() == top_k(z1, 4).docids());
  }
}

TEST_CASE("softmax") {
  auto u = softmax(std::vector<double>{0, 0, 0, 0});
  for (double x : u) CHECK(x == 0.25);

  auto big = softmax(std::vector<double>{1000.0, 0.0});
  CHECK(big[0] == 1.0);
  CHECK(big[1] == Approx(0.0));
  CHECK(std::isfinite(big[1]));

  auto r = softmax(std::vector<double>{std::log(1.0), std::log(2.0), std::log(3.0)});
  CHECK(r[0] == Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(r[1] == Approx(2.0 / 6.0).epsilon(1e-12));
  CHECK(r[2] == Approx(3.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("softmax sums to one and ignores constant shifts") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto z = random_vec(rng, 1 + rng.below(40), -30.0, 30.0);
    auto p = softmax(z);
    double s = std::accumulate(p.begin(), p.end(), 0.0);
    CHECK(std::fabs(s - 1.0) <= 1e-12);
    const double c = rng.uniform(-50.0, 50.0);
    for (auto& x : z) x += c;
    auto q = softmax(z);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::fabs(p[i] - q[i]) <= 1e-12);
  }
}

TEST_CASE("top_k") {
  auto r = top_k(std::vector<double>{0.1, 0.9, 0.5}, 2);
  REQUIRE(r.entries.size() == 2);
  CHECK(r.entries[0] == RankedEntry{1, 0.9});
  CHECK(r.entries[1] == RankedEntry{2, 0.5});

  CHECK(top_k(std::vector<double>(5, 1.0), 3).docids() == std::vector<DocId>{0, 1, 2});

  auto all = top_k(std::vector<double>{0.3, -1.0, 0.3, 2.0}, 4).docids();
  CHECK(all == std::vector<DocId>{3, 0, 2, 1});

  CHECK(error_code([] { top_k(std::vector<double>{1.0, 2.0}, 3); }) == Errc::KOutOfRange);
  CHECK(error_code([] { top_k(std::vector<double>{1.0, 2.0}, 0); }) == Errc::KOutOfRange);
}

TEST_CASE("top_k prefix property and ordering") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::int64_t>(1 + rng.below(30));
    std::vector<double> z(static_cast<std::size_t>(n));
    // Coarse values so ties are common.
    for (auto& x : z) x = static_cast<double>(rng.below(6));
    const auto k = static_cast<std::int64_t>(1 + rng.below(static_cast<std::uint64_t>(n)));
    auto full = top_k(z, n);
    auto part = top_k(z, k);
    CHECK(std::equal(part.entries.begin(), part.entries.end(), full.entries.begin()));
    for (std::size_t i = 1; i < full.entries.size(); ++i) {
      const auto& a = full.entries[i - 1];
      const auto& b = full.entries[i];
      CHECK((a.score > b.score || (a.score == b.score && a.docid < b.docid)));
    }
  }
}

TEST_CASE("cosine") {
  const std::vector<double> x{0.3, -2.0, 1.5};
  CHECK(cosine(x, x) == Approx(1.0).epsilon(1e-15));
  CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(cosine(std::vector<double>{1, 2}, std::vector<double>{2, 1}) == Approx(0.8).epsilon(1e-15));
  CHECK(error_code([] { cosine(std::vector<double>{0, 0}, std::vector<double>{1, 1}); }) == Errc::ZeroVector);

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto n = 1 + rng.below(10);
    auto u = random_vec(rng, n);
    auto v = random_vec(rng, n);
    const double c = cosine(u, v);
    CHECK(c == cosine(v, u));
    CHECK(c <= 1.0);
    CHECK(c >= -1.0);
  }
}

TEST_CASE("op trace depends only on dims and query length") {
  auto a = init_model(6, 3, 4, 1);
  auto b = init_model(6, 3, 4, 99);
  OpTrace ta, tb, tc;
  forward(a, std::vector<TokenId>{1, 2}, &ta);
  forward(b, std::vector<TokenId>{4, 5}, &tb);
  forward(b, std::vector<TokenId>{4, 5, 1}, &tc);
  CHECK(ta.hash() == tb.hash());
  CHECK(ta.ops() == tb.ops());
  CHECK(ta.hash() != tc.hash());
  CHECK(ta.ops().size() == 4);
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto p = round_to_f32(init_model(7, 5, 9, 21));
  for (auto& b : p.cls_b) b = 0.125;
  auto bytes = serialize_checkpoint(p);
  CHECK(bytes.size() == 20 + 4 * static_cast<std::size_t>(p.size()));
  CHECK(std::equal(bytes.begin(), bytes.begin() + 4, "DDSI"));
  auto back = deserialize_checkpoint(bytes);
  CHECK(back == p);
  CHECK(serialize_checkpoint(back) == bytes);

  // Double-precision parameters narrow to f32 exactly once.
  auto wide = init_model(7, 5, 9, 21);
  auto narrowed = deserialize_checkpoint(serialize_checkpoint(wide));
  CHECK(narrowed == round_to_f32(wide));
  CHECK(serialize_checkpoint(narrowed) == serialize_checkpoint(wide));
}

TEST_CASE("checkpoint header fields are little-endian") {
  auto p = init_model(3, 2, 258, 0);
  auto bytes = serialize_checkpoint(p);
  CHECK(bytes[4] == 1);  // version
  CHECK(bytes[8] == 3);
  CHECK(bytes[12] == 2);
  CHECK(bytes[16] == 2);  // 258 = 0x0102
  CHECK(bytes[17] == 1);
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto bytes = serialize_checkpoint(init_model(3, 2, 4, 0));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(error_code([&] { deserialize_checkpoint(bad_magic); }) == Errc::CheckpointVersionMismatch);
  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK(error_code([&] { deserialize_checkpoint(bad_version); }) == Errc::CheckpointVersionMismatch);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK(error_code([&] { deserialize_checkpoint(truncated); }) == Errc::ShapeMismatch);
  CHECK(error_code([&] { deserialize_checkpoint(std::vector<std::uint8_t>{'D'}); }) ==
        Errc::CheckpointVersionMismatch);
}
