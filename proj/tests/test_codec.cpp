#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "ndsc/binio.hpp"
#include "ndsc/codec.hpp"
#include "ndsc/error.hpp"
#include "ndsc/sources.hpp"
#include "support.hpp"

using namespace ndsc;
using namespace ndsc::codec;
namespace fs = std::filesystem;

namespace {
CodecConfig small_config(Variant v, std::size_t L = 4, unsigned b = 3) {
  CodecConfig c;
  c.variant = v;
  c.x_dim = 6;
  c.si_dim = 5;
  c.latent_len = L;
  c.code_dim = 2;
  c.codebook_bits = b;
  c.hidden = {8};
  c.si_hidden = 4;
  return c;
}

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "ndsc_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<double> random_row(std::size_t n, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

double se_of_mean(const std::vector<double>& v) {
  double m = 0.0, s = 0.0;
  for (double x : v) m += x / static_cast<double>(v.size());
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}
}  // namespace

TEST_SUITE("codec") {
  TEST_CASE("rate accounting") {
    CodecConfig c;
    c.latent_len = 512;
    c.codebook_bits = 4;
    CHECK(rate_bits(c) == 2048);
    c.latent_len = 1;
    c.codebook_bits = 1;
    CHECK(rate_bits(c) == 1);
    c.latent_len = 16 * 32;
    c.codebook_bits = 8;
    CHECK(rate_bits(c) == 4096);
    c.quantizer = QuantizerKind::uniform;
    c.latent_len = 5;
    c.code_dim = 1;
    c.levels = 4;
    CHECK(rate_bits(c) == 10);
    c.levels = 5;
    CHECK(rate_bits(c) == 15);
  }

  TEST_CASE("message bit packing is big-endian and zero padded") {
    Message m{{1, 2, 3}, 3};
    CHECK(m.bit_length() == 9);
    const auto bytes = m.pack();
    CHECK(bytes == std::vector<std::uint8_t>{0x29, 0x80});
    CHECK(Message::unpack(bytes, 3, 3) == m);
    const std::vector<std::uint8_t> dirty{0x29, 0x81};
    CHECK_THROWS_AS(Message::unpack(dirty, 3, 3), DataError);
    const std::vector<std::uint8_t> short_buf{0x29};
    CHECK_THROWS_AS(Message::unpack(short_buf, 3, 3), DataError);
  }

  TEST_CASE("message packing round-trips random indices") {
    auto rng = make_rng(21, 0);
    for (unsigned b = 1; b <= 16; ++b) {
      Message m;
      m.bits_per_index = b;
      std::uniform_int_distribution<std::uint32_t> idx(0, (1u << b) - 1);
      m.indices.resize(1 + b * 3);
      for (auto& i : m.indices) i = idx(rng);
      const auto bytes = m.pack();
      CHECK(bytes.size() == (m.bit_length() + 7) / 8);
      CHECK(Message::unpack(bytes, m.indices.size(), b) == m);
    }
  }

  TEST_CASE("uniform cells") {
    const UniformCells cells{4, 0.0, 1.0};
    CHECK(cells.index(0.3) == 1);
    CHECK(cells.center(1) == 0.375);
    CHECK(cells.center(0) == 0.125);
    CHECK(cells.center(3) == 0.875);
    CHECK(cells.index(0.0) == 0);
    CHECK(cells.index(1.0) == 3);
    CHECK(cells.index(-5.0) == 0);
    CHECK(cells.index(7.0) == 3);
  }

  TEST_CASE("config validation and strict json") {
    CodecConfig c = small_config(Variant::joint);
    CHECK(config_from_json(config_to_json(c)).codebook_bits == 3);
    auto j = config_to_json(c);
    j["extra"] = 1;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
    j = config_to_json(c);
    j["codebook_bits"] = 17;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
    j = config_to_json(c);
    j["variant"] = "psychic";
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
    j = config_to_json(c);
    j["latent_len"] = "four";
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
    CHECK(parse_variant("uncorrelated_si") == Variant::uncorrelated_si);
  }

  TEST_CASE("fresh model emits L indices below 2^b") {
    const auto model = init_model(small_config(Variant::distributed, 4, 3), 1);
    auto rng = make_rng(22, 0);
    for (int i = 0; i < 20; ++i) {
      const auto x = random_row(6, rng);
      const auto m = encode(model, x);
      CHECK(m.indices.size() == 4);
      for (auto idx : m.indices) CHECK(idx < 8);
      CHECK(encode(model, x) == m);
    }
  }

  TEST_CASE("side-information arity is enforced") {
    auto rng = make_rng(23, 0);
    const auto x = random_row(6, rng), y = random_row(5, rng), y_short = random_row(4, rng);
    const auto dist = init_model(small_config(Variant::distributed), 1);
    const auto joint = init_model(small_config(Variant::joint), 1);
    const auto sep = init_model(small_config(Variant::separate), 1);
    CHECK_THROWS_AS(encode(dist, x, y), ConfigError);
    CHECK_THROWS_AS(encode(joint, x), ConfigError);
    const auto m = encode(dist, x);
    CHECK_THROWS_AS(decode(dist, m), ConfigError);
    CHECK_THROWS_AS(decode(dist, m, y_short), ConfigError);
    CHECK_THROWS_AS(decode(sep, encode(sep, x), y), ConfigError);
    CHECK_NOTHROW(decode(joint, encode(joint, x, y), y));
    Message bad = m;
    bad.indices[0] = 8;
    CHECK_THROWS_AS(decode(dist, bad, y), DataError);
    CHECK_THROWS_AS(encode(dist, y), ConfigError);
  }

  TEST_CASE("variant isolation") {
    auto rng = make_rng(24, 0);
    const Tensor x = testsupport::random_tensor({10, 6}, rng);
    const Tensor y1 = testsupport::random_tensor({10, 5}, rng), y2 = testsupport::random_tensor({10, 5}, rng);
    for (auto v : {Variant::distributed, Variant::separate, Variant::uncorrelated_si}) {
      const auto model = init_model(small_config(v), 3);
      CHECK(encode_batch(model, x, {&y1, nullptr}) == encode_batch(model, x, {&y2, nullptr}));
    }
    const auto sep = init_model(small_config(Variant::separate), 3);
    const auto msgs = encode_batch(sep, x, {});
    CHECK(decode_batch(sep, msgs, {&y1, nullptr}) == decode_batch(sep, msgs, {&y2, nullptr}));
    const auto dist = init_model(small_config(Variant::distributed), 3);
    const auto dm = encode_batch(dist, x, {});
    CHECK_FALSE(decode_batch(dist, dm, {&y1, nullptr}) == decode_batch(dist, dm, {&y2, nullptr}));
    const auto joint = init_model(small_config(Variant::joint), 3);
    CHECK(decoder_uses_si(Variant::joint));
    CHECK(encoder_uses_si(Variant::joint));
    CHECK_FALSE(encoder_uses_si(Variant::uncorrelated_si));
    CHECK_NOTHROW(encode_batch(joint, x, {&y1, nullptr}));
  }

  TEST_CASE("decode is finite on every input") {
    auto rng = make_rng(25, 0);
    const auto model = init_model(small_config(Variant::distributed), 4);
    for (int i = 0; i < 50; ++i) {
      const auto x = random_row(6, rng), y = random_row(5, rng);
      for (double v : decode(model, encode(model, x), y)) CHECK(std::isfinite(v));
    }
  }

  TEST_CASE("model files round-trip exactly") {
    auto model = init_model(small_config(Variant::joint), 5);
    for (auto& [name, p] : model.params) round_to_f32(p.value);
    const auto path = temp_file("roundtrip.ndsc");
    save_model(model, path);
    const auto back = load_model(path);
    CHECK(config_to_json(back.config) == config_to_json(model.config));
    CHECK(back.params.flat_values() == model.params.flat_values());
    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "NDSC");
    CHECK(binio::get_le<std::uint16_t>(in, "version") == kModelVersion);
  }

  TEST_CASE("model file errors") {
    auto model = init_model(small_config(Variant::distributed), 5);
    const auto path = temp_file("broken.ndsc");
    save_model(model, path);
    std::string bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& body) {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << body;
    };
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    write(bad_magic);
    CHECK_THROWS_AS(load_model(path), DataError);
    std::string newer = bytes;
    newer[4] = 9;
    write(newer);
    CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("version"), DataError);
    write(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_model(path), DataError);
    CHECK_THROWS_AS(load_model(temp_file("does_not_exist.ndsc")), DataError);
  }

  TEST_CASE("single-sample overfit") {
    PairDataset one{SourceKind::gaussian, 0, 1, 4, 4, 0, {0.5f, -1.0f, 2.0f, 0.25f}, {0.4f, -0.9f, 2.1f, 0.3f}, {}};
    CodecConfig c;
    c.variant = Variant::distributed;
    c.x_dim = 4;
    c.si_dim = 4;
    c.latent_len = 1;
    c.code_dim = 2;
    c.codebook_bits = 1;
    c.hidden = {16};
    c.si_hidden = 8;
    TrainOptions o;
    o.epochs = 3000;
    o.patience = 3000;
    o.seed = 1;
    const auto r = train(c, one, one, o);
    CHECK(r.best_valid_mse < 1e-3);
    CHECK(evaluate_mse(r.model, one) == r.best_valid_mse);
  }

  TEST_CASE("training is deterministic and uses the best checkpoint") {
    const auto tr = sources::gen_gaussian(600, 0.1, 1), va = sources::gen_gaussian(200, 0.1, 2);
    CodecConfig c;
    c.codebook_bits = 2;
    c.hidden = {16};
    c.si_hidden = 8;
    TrainOptions o;
    o.epochs = 6;
    o.seed = 3;
    const auto a = train(c, tr, va, o), b = train(c, tr, va, o);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t e = 0; e < a.log.size(); ++e) {
      CHECK(a.log[e].train_loss == b.log[e].train_loss);
      CHECK(a.log[e].valid_mse == b.log[e].valid_mse);
      CHECK(std::isfinite(a.log[e].train_loss));
    }
    CHECK(a.model.params.flat_values() == b.model.params.flat_values());
    double best = 1e300;
    for (const auto& e : a.log) best = std::min(best, e.valid_mse);
    CHECK(a.best_valid_mse == doctest::Approx(best).epsilon(1e-5));
  }

  TEST_CASE("training rejects mismatched and empty data") {
    const auto tr = sources::gen_gaussian(100, 0.1, 1);
    CodecConfig c;
    c.x_dim = 2;
    CHECK_THROWS_AS(train(c, tr, tr, {}), ConfigError);
    PairDataset empty{SourceKind::gaussian, 0, 0, 1, 1, 0, {}, {}, {}};
    CHECK_THROWS(train(CodecConfig{}, empty, tr, {}));
  }

  TEST_CASE("perfect side information beats no side information") {
    const auto tr = sources::gen_gaussian(3000, 0.0, 1), va = sources::gen_gaussian(500, 0.0, 2);
    CodecConfig c;
    c.codebook_bits = 2;
    TrainOptions o;
    o.epochs = 15;
    o.seed = 1;
    c.variant = Variant::distributed;
    const double dist = train(c, tr, va, o).best_valid_mse;
    c.variant = Variant::separate;
    const double sep = train(c, tr, va, o).best_valid_mse;
    CHECK(dist < sep);
  }

  TEST_CASE("unrelated side information is worth nothing") {
    const auto tr = sources::gen_gaussian(3000, 0.1, 1), va = sources::gen_gaussian(1000, 0.1, 2);
    CodecConfig c;
    c.codebook_bits = 1;
    TrainOptions o;
    o.epochs = 15;
    std::vector<double> sep, unc;
    for (std::uint64_t s = 1; s <= 3; ++s) {
      o.seed = s;
      c.variant = Variant::separate;
      sep.push_back(train(c, tr, va, o).best_valid_mse);
      c.variant = Variant::uncorrelated_si;
      unc.push_back(train(c, tr, va, o).best_valid_mse);
    }
    const double ms = (sep[0] + sep[1] + sep[2]) / 3, mu = (unc[0] + unc[1] + unc[2]) / 3;
    CHECK(std::abs(ms - mu) <= 2 * se_of_mean(sep) + 2 * se_of_mean(unc));
  }

  TEST_CASE("uniform quantizer ablation uses the same network") {
    const auto tr = sources::gen_gaussian(1000, 0.1, 1), va = sources::gen_gaussian(300, 0.1, 2);
    CodecConfig c;
    c.variant = Variant::separate;
    c.hidden = {16};
    TrainOptions o;
    o.epochs = 3;
    o.seed = 2;
    const auto r = uniform_ae_train(c, 4, 0.0, 1.0, tr, va, o);
    CHECK(r.model.config.quantizer == QuantizerKind::uniform);
    CHECK_FALSE(r.model.params.contains("codebook"));
    CHECK(rate_bits(r.model.config) == 2);
    const auto eight = with_levels(r.model, 8);
    CHECK(rate_bits(eight.config) == 3);
    CHECK(eight.params.flat_values() == r.model.params.flat_values());
    const std::vector<double> x{0.4};
    for (auto idx : encode(eight, x).indices) CHECK(idx < 8);
    CHECK_THROWS_AS(uniform_ae_train(c, 1, 0.0, 1.0, tr, va, o), ConfigError);
  }
}
