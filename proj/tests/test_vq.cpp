#include <limits>

#include "doctest.h"
#include "ndsc/autodiff.hpp"
#include "ndsc/error.hpp"
#include "ndsc/vq.hpp"
#include "support.hpp"

using namespace ndsc;
using testsupport::random_tensor;

namespace {
double sqdist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::int32_t brute_force(std::span<const double> z, const vq::Codebook& cb) {
  std::int32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cb.size(); ++k) {
    const double d = sqdist(z, cb.code(k));
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::int32_t>(k);
    }
  }
  return best;
}
}  // namespace

TEST_SUITE("vq") {
  TEST_CASE("codebook validation") {
    CHECK_NOTHROW(vq::Codebook(Tensor::matrix({{0}, {1}})));
    CHECK_THROWS_AS(vq::Codebook(Tensor::matrix({{0}, {1}, {2}})), ConfigError);
    CHECK_THROWS_AS(vq::Codebook(Tensor::matrix({{0}})), ConfigError);
    CHECK_THROWS_AS(vq::Codebook(Tensor::vector({0, 1})), ConfigError);
    CHECK_THROWS_AS(vq::Codebook(Tensor::matrix({{0}, {std::numeric_limits<double>::infinity()}})), ConfigError);
    CHECK(vq::Codebook(Tensor({16, 4})).bits() == 4);
  }

  TEST_CASE("nearest code examples") {
    const vq::Codebook cb(Tensor::matrix({{0}, {1}}));
    const std::vector<double> a{0.2}, tie{0.5};
    auto q = vq::quantize(a, cb);
    CHECK(q.index == 0);
    CHECK(q.code == std::vector<double>{0.0});
    CHECK(vq::quantize(tie, cb).index == 0);
    const std::vector<double> wrong{0.1, 0.2};
    CHECK_THROWS_AS(vq::quantize(wrong, cb), ConfigError);
  }

  TEST_CASE("quantize equals an exhaustive scan and never increases distance") {
    auto rng = make_rng(11, 0);
    for (int trial = 0; trial < 100; ++trial) {
      const vq::Codebook cb(random_tensor({16, 4}, rng));
      const Tensor z = random_tensor({4}, rng);
      const auto q = vq::quantize(z.data(), cb);
      CHECK(q.index == brute_force(z.data(), cb));
      const double got = sqdist(z.data(), q.code);
      for (std::size_t k = 0; k < cb.size(); ++k) CHECK(got <= sqdist(z.data(), cb.code(k)));
    }
  }

  TEST_CASE("quantize is idempotent on code vectors") {
    auto rng = make_rng(12, 0);
    const vq::Codebook cb(random_tensor({8, 3}, rng));
    for (std::size_t k = 0; k < cb.size(); ++k) {
      const auto q = vq::quantize(cb.code(k), cb);
      CHECK(std::equal(q.code.begin(), q.code.end(), cb.code(k).begin()));
    }
  }

  TEST_CASE("batch quantize matches per-row calls") {
    auto rng = make_rng(13, 0);
    const vq::Codebook cb(random_tensor({32, 5}, rng));
    const Tensor z = random_tensor({20, 5}, rng);
    const auto idx = vq::quantize_batch(z, cb);
    REQUIRE(idx.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) {
      CHECK(idx[i] == vq::quantize(z.row(i), cb).index);
      CHECK(idx[i] >= 0);
      CHECK(idx[i] < 32);
    }
    Tensor same({6, 5}, 0.3);
    const auto all = vq::quantize_batch(same, cb);
    CHECK(std::all_of(all.begin(), all.end(), [&](std::int32_t i) { return i == all[0]; }));
    const Tensor first({1, 5}, std::vector<double>(z.row(0).begin(), z.row(0).end()));
    CHECK(vq::quantize_batch(first, cb)[0] == vq::quantize(z.row(0), cb).index);
  }

  TEST_CASE("loss term values") {
    CHECK(vq::loss_terms(Tensor::matrix({{1.0}}), Tensor::matrix({{0.0}})).codebook == 1.0);
    CHECK(vq::loss_terms(Tensor::matrix({{1.0}}), Tensor::matrix({{0.0}})).commitment == 1.0);
    const auto same = vq::loss_terms(Tensor::matrix({{1.0, 2.0}}), Tensor::matrix({{1.0, 2.0}}));
    CHECK(same.codebook == 0.0);
    CHECK(same.commitment == 0.0);
  }

  TEST_CASE("straight-through forward value and encoder gradient") {
    ParamSet p;
    p.add("z", Tensor::vector({0.3, -0.7}));
    Tape tape(&p);
    Var z = tape.param("z");
    Var code = tape.constant(Tensor::vector({1.0, -2.0}));
    Var st = tape.straight_through(z, code);
    CHECK(tape.value(st) == Tensor::vector({1.0, -2.0}));
    tape.backward(tape.sum(tape.mul(st, st)));
    CHECK(p.at("z").grad == Tensor::vector({2.0, -4.0}));
  }

  TEST_CASE("straight-through passes zero when the loss ignores the decoder input") {
    ParamSet p;
    p.add("z", Tensor::vector({0.3}));
    p.add("other", Tensor::vector({2.0}));
    Tape tape(&p);
    Var st = tape.straight_through(tape.param("z"), tape.constant(Tensor::vector({1.0})));
    (void)st;
    tape.backward(tape.sum(tape.param("other")));
    CHECK(p.at("z").grad == Tensor::vector({0.0}));
  }

  TEST_CASE("encoder gradient through the quantizer equals the decoder-input gradient") {
    auto rng = make_rng(14, 0);
    ParamSet p;
    add_affine(p, "enc", 3, 4, rng);
    add_affine(p, "dec", 4, 3, rng);
    p.add("codebook", random_tensor({8, 2}, rng));
    Tape tape(&p);
    const Tensor x = random_tensor({5, 3}, rng);
    Var z = tape.dense(tape.constant(x), "enc");            // 5 x 4
    Var rows = tape.reshape(z, {10, 2});
    auto q = vq::quantize_on_tape(tape, rows, tape.param("codebook"));
    Var dec_in = tape.reshape(q.quantized, {5, 4});
    Var out = tape.gelu(tape.dense(dec_in, "dec"));
    tape.backward(tape.mean_square(tape.sub(out, tape.constant(x))));
    const Tensor& gz = tape.grad(rows);
    const Tensor& gq = tape.grad(q.quantized);
    REQUIRE(gz.size() == gq.size());
    for (std::size_t i = 0; i < gz.size(); ++i) CHECK(gz[i] == gq[i]);
    // Reconstruction alone never reaches the codebook.
    for (double g : p.at("codebook").grad.data()) CHECK(g == 0.0);
  }

  TEST_CASE("loss terms route gradient to one side each") {
    auto rng = make_rng(15, 0);
    auto grads = [&](bool use_codebook_term) {
      ParamSet p;
      p.add("z", random_tensor({6, 3}, rng));
      p.add("codebook", random_tensor({4, 3}, rng));
      Tape tape(&p);
      auto q = vq::quantize_on_tape(tape, tape.param("z"), tape.param("codebook"));
      tape.backward(use_codebook_term ? q.codebook_loss : q.commitment_loss);
      return std::pair{p.at("z").grad, p.at("codebook").grad};
    };
    auto [gz_cb, gc_cb] = grads(true);
    auto [gz_cm, gc_cm] = grads(false);
    for (double g : gz_cb.data()) CHECK(g == 0.0);
    CHECK(std::any_of(gc_cb.data().begin(), gc_cb.data().end(), [](double g) { return g != 0.0; }));
    for (double g : gc_cm.data()) CHECK(g == 0.0);
    CHECK(std::any_of(gz_cm.data().begin(), gz_cm.data().end(), [](double g) { return g != 0.0; }));
  }
}
