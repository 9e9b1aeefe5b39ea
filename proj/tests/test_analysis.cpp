#include <cmath>

#include "doctest.h"
#include "ndsc/analysis.hpp"
#include "ndsc/error.hpp"
#include "ndsc/sources.hpp"
#include "support.hpp"

using namespace ndsc;
using namespace ndsc::analysis;

namespace {
codec::CodecConfig tiny(codec::Variant v, std::size_t x_dim = 3, std::size_t si_dim = 3) {
  codec::CodecConfig c;
  c.variant = v;
  c.x_dim = x_dim;
  c.si_dim = si_dim;
  c.latent_len = 2;
  c.code_dim = 2;
  c.codebook_bits = 2;
  c.hidden = {8};
  c.si_hidden = 4;
  return c;
}
}  // namespace

TEST_SUITE("analysis") {
  TEST_CASE("metric examples") {
    CHECK(psnr(0.01, 1.0).db == doctest::Approx(20.0));
    CHECK(psnr(1.0, 1.0).db == doctest::Approx(0.0));
    const std::vector<double> a{1, 2, 3};
    CHECK(mse(a, a) == 0.0);
    CHECK(psnr(mse(a, a), 1.0).infinite);
    CHECK(std::isinf(psnr(0.0, 1.0).db));
    const std::vector<double> b{2, 2, 1};
    CHECK(mse(a, b) == doctest::Approx(5.0 / 3.0));
    CHECK_THROWS_AS(mse(a, std::vector<double>{1, 2}), ConfigError);
    CHECK_THROWS_AS(psnr(0.1, 0.0), ConfigError);
    CHECK(bpp(4096, 128 * 256) == 0.125);
    CHECK(bpp(2048, 32768) == 0.0625);
    CHECK(bpp(0, 10) == 0.0);
    CHECK_THROWS_AS(bpp(1, 0), ConfigError);
  }

  TEST_CASE("psnr strictly decreases with mse") {
    double prev = psnr(1e-6, 1.0).db;
    for (double m = 2e-6; m < 10.0; m *= 1.9) {
      const double p = psnr(m, 1.0).db;
      CHECK(p < prev);
      prev = p;
    }
  }

  TEST_CASE("rd csv layout") {
    std::vector<RDPoint> rows(2);
    rows[0] = {4096, 0.125, 0.01, Psnr{20.0, false}, "distributed", 3};
    rows[1] = {2, std::nullopt, 0.5, std::nullopt, "separate", std::nullopt};
    CHECK(rd_csv(rows) ==
          "rate_bits,bpp,mse,psnr_db,variant,seed\n"
          "4096,0.125,0.01,20,distributed,3\n"
          "2,,0.5,,separate,mean\n");
    const std::vector<DiversityRow> d{{"distributed", 1.5, 16, 7}};
    CHECK(diversity_csv(d) == "model,diversity_l2,pool_size,seed\ndistributed,1.5,16,7\n");
  }

  TEST_CASE("single config sweep") {
    const auto tr = sources::gen_gaussian(300, 0.1, 1), va = sources::gen_gaussian(100, 0.1, 2),
               te = sources::gen_gaussian(100, 0.1, 3);
    SweepEntry e{tiny(codec::Variant::separate, 1, 1), {}};
    e.options.epochs = 2;
    const std::vector<std::uint64_t> seeds{4};
    const auto sweep = rd_sweep(tr, va, te, std::span(&e, 1), seeds);
    REQUIRE(sweep.rows.size() == 2);
    CHECK(sweep.rows[0].rate_bits == 4);
    CHECK(sweep.rows[0].seed == std::optional<std::uint64_t>(4));
    CHECK_FALSE(sweep.rows[1].seed.has_value());
    CHECK(sweep.rows[1].mse == sweep.rows[0].mse);
    CHECK_FALSE(sweep.rows[0].psnr.has_value());
    SweepEntry bad{tiny(codec::Variant::separate, 2, 1), {}};
    CHECK_THROWS_AS(rd_sweep(tr, va, te, std::span(&bad, 1), seeds), ConfigError);
  }

  TEST_CASE("sweeps are reproducible and independent of the worker count") {
    const auto tr = sources::gen_gaussian(300, 0.1, 1), va = sources::gen_gaussian(100, 0.1, 2),
               te = sources::gen_gaussian(100, 0.1, 3);
    std::vector<SweepEntry> entries;
    for (unsigned b : {1u, 2u}) {
      SweepEntry e{tiny(codec::Variant::distributed, 1, 1), {}};
      e.config.latent_len = 1;
      e.config.codebook_bits = b;
      e.options.epochs = 2;
      entries.push_back(e);
    }
    const std::vector<std::uint64_t> seeds{1, 2};
    SweepOptions one, three;
    one.jobs = 1;
    three.jobs = 3;
    const auto a = rd_sweep(tr, va, te, entries, seeds, one);
    const auto b = rd_sweep(tr, va, te, entries, seeds, three);
    CHECK(rd_csv(a.rows) == rd_csv(b.rows));
    REQUIRE(a.rows.size() == 6);
    CHECK(a.runs[1].config_index == 0);
    CHECK(a.runs[1].seed == 2);
    CHECK(a.runs[2].config_index == 1);
    CHECK(a.rows[2].mse == doctest::Approx((a.rows[0].mse + a.rows[1].mse) / 2));
  }

  TEST_CASE("diversity examples") {
    auto rng = make_rng(31, 0);
    const auto sep = codec::init_model(tiny(codec::Variant::separate), 1);
    const Tensor x = testsupport::random_tensor({5, 3}, rng), pool = testsupport::random_tensor({4, 3}, rng);
    CHECK(bin_diversity(sep, x, pool) == 0.0);

    const auto dist = codec::init_model(tiny(codec::Variant::distributed), 1);
    const Tensor x1 = testsupport::random_tensor({1, 3}, rng), pair = testsupport::random_tensor({2, 3}, rng);
    const auto m = codec::encode(dist, x1.row(0));
    const auto a = codec::decode(dist, m, pair.row(0)), b = codec::decode(dist, m, pair.row(1));
    double sq = 0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(bin_diversity(dist, x1, pair) == doctest::Approx(std::sqrt(sq)).epsilon(1e-12));
    CHECK_THROWS_AS(bin_diversity(dist, x1, pair.reshaped({1, 6})), ConfigError);
    const Tensor one_row({1, 3});
    CHECK_THROWS_AS(bin_diversity(dist, x1, one_row), ConfigError);
  }

  TEST_CASE("diversity ignores the order of inputs and pool") {
    auto rng = make_rng(32, 0);
    const auto dist = codec::init_model(tiny(codec::Variant::distributed), 2);
    const Tensor x = testsupport::random_tensor({6, 3}, rng), pool = testsupport::random_tensor({5, 3}, rng);
    auto flip_rows = [](const Tensor& t) {
      Tensor out = t;
      for (std::size_t r = 0; r < t.rows(); ++r)
        std::copy(t.row(t.rows() - 1 - r).begin(), t.row(t.rows() - 1 - r).end(), out.row(r).begin());
      return out;
    };
    const double base = bin_diversity(dist, x, pool);
    CHECK(bin_diversity(dist, flip_rows(x), pool) == doctest::Approx(base).epsilon(1e-12));
    CHECK(bin_diversity(dist, x, flip_rows(pool)) == doctest::Approx(base).epsilon(1e-12));
  }

  TEST_CASE("side-information swap") {
    const auto te = sources::gen_gaussian(400, 0.1, 5), marg = sources::gen_gaussian(400, 0.1, 6);
    const auto sep = codec::init_model(tiny(codec::Variant::separate, 1, 1), 3);
    const auto r = si_swap_eval(sep, te, marg, 1);
    REQUIRE(r.size() == 3);
    CHECK(r[0].mse == r[1].mse);
    CHECK(r[0].mse == r[2].mse);

    const auto tr = sources::gen_gaussian(3000, 0.1, 7), va = sources::gen_gaussian(500, 0.1, 8);
    codec::CodecConfig c;
    c.codebook_bits = 1;
    codec::TrainOptions o;
    o.epochs = 10;
    o.seed = 2;
    const auto dist = codec::train(c, tr, va, o).model;
    const auto d = si_swap_eval(dist, te, marg, 1);
    CHECK(d[0].mode == SwapMode::true_si);
    CHECK(d[0].mse < d[1].mse);
    CHECK(d[0].mse < d[2].mse);
    CHECK(d[0].mse == doctest::Approx(codec::evaluate_mse(dist, te)).epsilon(1e-12));

    c.variant = codec::Variant::uncorrelated_si;
    const auto unc = codec::train(c, tr, va, o).model;
    const auto u = si_swap_eval(unc, te, marg, 1);
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b) CHECK(std::abs(u[a].mse - u[b].mse) <= 2 * (u[a].std_error + u[b].std_error));
  }
}
