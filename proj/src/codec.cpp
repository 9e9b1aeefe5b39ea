#include "ndsc/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "ndsc/adam.hpp"
#include "ndsc/binio.hpp"
#include "ndsc/error.hpp"
#include "ndsc/fileio.hpp"
#include "ndsc/rng.hpp"
#include "ndsc/vq.hpp"

namespace ndsc::codec {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::distributed: return "distributed";
    case Variant::joint: return "joint";
    case Variant::separate: return "separate";
    case Variant::uncorrelated_si: return "uncorrelated_si";
  }
  return "unknown";
}

Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::distributed, Variant::joint, Variant::separate, Variant::uncorrelated_si})
    if (variant_name(v) == s) return v;
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

bool decoder_uses_si(Variant v) { return v != Variant::separate; }
bool encoder_uses_si(Variant v) { return v == Variant::joint; }

namespace {

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
    case Activation::gelu: return "gelu";
  }
  return "identity";
}

Activation parse_output(std::string_view s) {
  if (s == "identity") return Activation::identity;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown output activation '" + std::string(s) + "' (identity|sigmoid)");
}

unsigned ceil_log2(unsigned v) {
  unsigned b = 0;
  while ((1u << b) < v) ++b;
  return b;
}

constexpr std::size_t kTimeFeatures = 3;

std::size_t time_features(const CodecConfig& cfg) { return cfg.time_conditioned ? kTimeFeatures : 0; }
std::size_t latent_width(const CodecConfig& cfg) { return cfg.latent_len * cfg.code_dim; }

}  // namespace

void CodecConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("codec config: " + m); };
  if (x_dim == 0 || si_dim == 0) fail("x_dim and si_dim must be positive");
  if (latent_len == 0 || code_dim == 0) fail("latent_len and code_dim must be positive");
  if (quantizer == QuantizerKind::vq && (codebook_bits < 1 || codebook_bits > 16))
    fail("codebook_bits must be in [1, 16], got " + std::to_string(codebook_bits));
  if (quantizer == QuantizerKind::uniform) {
    if (levels < 2) fail("uniform quantizer needs levels >= 2");
    if (!(hi > lo)) fail("uniform quantizer range must satisfy lo < hi");
  }
  if (si_hidden == 0) fail("si_hidden must be positive");
  for (auto h : hidden)
    if (h == 0) fail("hidden widths must be positive");
  if (output == Activation::gelu) fail("output activation must be identity or sigmoid");
  if (time_conditioned && time_horizon == 0) fail("time_horizon must be positive");
  if (!(x_scale > 0.0) || !(si_scale > 0.0) || !std::isfinite(x_scale) || !std::isfinite(si_scale))
    fail("x_scale and si_scale must be positive and finite");
}

nlohmann::json config_to_json(const CodecConfig& cfg) {
  nlohmann::json j;
  j["variant"] = variant_name(cfg.variant);
  j["x_dim"] = cfg.x_dim;
  j["si_dim"] = cfg.si_dim;
  j["latent_len"] = cfg.latent_len;
  j["code_dim"] = cfg.code_dim;
  j["codebook_bits"] = cfg.codebook_bits;
  j["hidden"] = cfg.hidden;
  j["si_hidden"] = cfg.si_hidden;
  j["output"] = activation_name(cfg.output);
  j["time_conditioned"] = cfg.time_conditioned;
  j["time_horizon"] = cfg.time_horizon;
  j["x_scale"] = cfg.x_scale;
  j["si_scale"] = cfg.si_scale;
  j["quantizer"] = cfg.quantizer == QuantizerKind::vq ? "vq" : "uniform";
  j["levels"] = cfg.levels;
  j["range"] = {cfg.lo, cfg.hi};
  return j;
}

CodecConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("codec config must be a JSON object");
  static const std::set<std::string> known{"variant", "x_dim", "si_dim", "latent_len", "code_dim",
                                           "codebook_bits", "hidden", "si_hidden", "output",
                                           "time_conditioned", "time_horizon", "x_scale", "si_scale",
                                           "quantizer", "levels", "range"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("codec config: unknown key '" + key + "'");
  CodecConfig cfg;
  try {
    if (j.contains("variant")) cfg.variant = parse_variant(j.at("variant").get<std::string>());
    auto get_size = [&](const char* key, std::size_t& dst) {
      if (!j.contains(key)) return;
      const auto& v = j.at(key);
      if (!v.is_number_unsigned()) throw ConfigError(std::string("codec config: '") + key + "' must be a non-negative integer");
      dst = v.get<std::size_t>();
    };
    get_size("x_dim", cfg.x_dim);
    get_size("si_dim", cfg.si_dim);
    get_size("latent_len", cfg.latent_len);
    get_size("code_dim", cfg.code_dim);
    get_size("si_hidden", cfg.si_hidden);
    get_size("time_horizon", cfg.time_horizon);
    std::size_t bits = cfg.codebook_bits, levels = cfg.levels;
    get_size("codebook_bits", bits);
    get_size("levels", levels);
    cfg.codebook_bits = static_cast<unsigned>(bits);
    cfg.levels = static_cast<unsigned>(levels);
    if (j.contains("hidden")) cfg.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    if (j.contains("output")) cfg.output = parse_output(j.at("output").get<std::string>());
    if (j.contains("time_conditioned")) cfg.time_conditioned = j.at("time_conditioned").get<bool>();
    if (j.contains("x_scale")) cfg.x_scale = j.at("x_scale").get<double>();
    if (j.contains("si_scale")) cfg.si_scale = j.at("si_scale").get<double>();
    if (j.contains("quantizer")) {
      const auto q = j.at("quantizer").get<std::string>();
      if (q == "vq") cfg.quantizer = QuantizerKind::vq;
      else if (q == "uniform") cfg.quantizer = QuantizerKind::uniform;
      else throw ConfigError("codec config: unknown quantizer '" + q + "'");
    }
    if (j.contains("range")) {
      const auto r = j.at("range").get<std::vector<double>>();
      if (r.size() != 2) throw ConfigError("codec config: 'range' must be [lo, hi]");
      cfg.lo = r[0];
      cfg.hi = r[1];
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("codec config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

unsigned index_bits(const CodecConfig& cfg) {
  return cfg.quantizer == QuantizerKind::vq ? cfg.codebook_bits : ceil_log2(cfg.levels);
}

std::size_t message_len(const CodecConfig& cfg) {
  return cfg.quantizer == QuantizerKind::vq ? cfg.latent_len : latent_width(cfg);
}

std::uint64_t rate_bits(const CodecConfig& cfg) {
  return static_cast<std::uint64_t>(message_len(cfg)) * index_bits(cfg);
}

std::vector<std::uint8_t> Message::pack() const {
  const std::uint64_t nbits = bit_length();
  std::vector<std::uint8_t> out((nbits + 7) / 8, 0);
  std::uint64_t pos = 0;
  for (auto idx : indices) {
    for (unsigned b = bits_per_index; b-- > 0;) {
      if ((idx >> b) & 1u) out[pos / 8] |= static_cast<std::uint8_t>(0x80u >> (pos % 8));
      ++pos;
    }
  }
  return out;
}

Message Message::unpack(std::span<const std::uint8_t> bytes, std::size_t count, unsigned bits_per_index) {
  if (bits_per_index == 0 || bits_per_index > 32) throw DataError("invalid bits per index");
  const std::uint64_t nbits = count * std::uint64_t{bits_per_index};
  if (bytes.size() != (nbits + 7) / 8)
    throw DataError("message has " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string((nbits + 7) / 8));
  Message m;
  m.bits_per_index = bits_per_index;
  m.indices.resize(count);
  std::uint64_t pos = 0;
  for (auto& idx : m.indices) {
    std::uint32_t v = 0;
    for (unsigned b = 0; b < bits_per_index; ++b, ++pos) v = (v << 1) | ((bytes[pos / 8] >> (7 - pos % 8)) & 1u);
    idx = v;
  }
  for (; pos < bytes.size() * 8; ++pos)
    if ((bytes[pos / 8] >> (7 - pos % 8)) & 1u) throw DataError("message padding bits must be zero");
  return m;
}

std::uint32_t UniformCells::index(double v) const {
  const double width = (hi - lo) / levels;
  const double cell = std::floor((v - lo) / width);
  if (!(cell > 0.0)) return 0;
  return static_cast<std::uint32_t>(std::min(cell, static_cast<double>(levels - 1)));
}

double UniformCells::center(std::uint32_t i) const {
  const double width = (hi - lo) / levels;
  return lo + (static_cast<double>(i) + 0.5) * width;
}

CodecModel init_model(const CodecConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CodecModel model{cfg, {}};
  Rng rng = make_rng(seed, 0);
  const std::size_t tf = time_features(cfg);

  add_affine(model.params, "si.0", cfg.si_dim, cfg.si_hidden, rng);

  std::size_t width = cfg.x_dim + cfg.si_hidden + tf;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    add_affine(model.params, "enc." + std::to_string(i), width, cfg.hidden[i], rng);
    width = cfg.hidden[i];
  }
  add_affine(model.params, "enc.out", width, latent_width(cfg), rng);

  width = latent_width(cfg) + cfg.si_hidden + tf;
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    const std::size_t h = cfg.hidden[cfg.hidden.size() - 1 - i];
    add_affine(model.params, "dec." + std::to_string(i), width, h, rng);
    width = h;
  }
  add_affine(model.params, "dec.out", width, cfg.x_dim, rng);

  if (cfg.quantizer == QuantizerKind::vq) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Tensor cb({std::size_t{1} << cfg.codebook_bits, cfg.code_dim});
    for (auto& v : cb.data()) v = nd(rng);
    model.params.add("codebook", std::move(cb));
  }
  return model;
}

namespace {

Tensor time_embedding(const CodecConfig& cfg, const std::vector<double>& t) {
  Tensor e({t.size(), kTimeFeatures});
  const double horizon = static_cast<double>(cfg.time_horizon);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double phase = t[i] / horizon;
    e(i, 0) = phase;
    e(i, 1) = std::sin(2.0 * std::numbers::pi * phase);
    e(i, 2) = std::cos(2.0 * std::numbers::pi * phase);
  }
  return e;
}

struct NetInputs {
  std::size_t n = 0;
  Var si_features;        // real SI features or zeros
  Var zero_si;            // zeros of the same shape
  std::optional<Var> time;
};

void check_conditioning(const CodecConfig& cfg, std::size_t n, const Conditioning& cond, bool need_si) {
  if (need_si) {
    if (!cond.si) throw ConfigError(std::string("variant '") + std::string(variant_name(cfg.variant)) + "' requires side information");
    if (cond.si->rank() != 2 || cond.si->shape()[0] != n || cond.si->shape()[1] != cfg.si_dim)
      throw ConfigError("side information must be [" + std::to_string(n) + " x " + std::to_string(cfg.si_dim) +
                        "], got " + shape_str(cond.si->shape()));
  }
  if (cfg.time_conditioned) {
    if (!cond.t || cond.t->size() != n)
      throw ConfigError("time-conditioned model requires one time step per sample");
  }
}

NetInputs prepare_inputs(Tape& tape, const CodecConfig& cfg, std::size_t n, const Conditioning& cond,
                         bool si_needed) {
  NetInputs in;
  in.n = n;
  in.zero_si = tape.constant(Tensor({n, cfg.si_hidden}));
  if (si_needed) {
    Tensor si = *cond.si;
    if (cfg.si_scale != 1.0)
      for (auto& v : si.data()) v /= cfg.si_scale;
    in.si_features = tape.gelu(tape.dense(tape.constant(std::move(si)), "si.0"));
  } else {
    in.si_features = in.zero_si;
  }
  if (cfg.time_conditioned) in.time = tape.constant(time_embedding(cfg, *cond.t));
  return in;
}

Var encoder_net(Tape& tape, const CodecConfig& cfg, const Tensor& x, const NetInputs& in) {
  Tensor xn = x;
  if (cfg.x_scale != 1.0)
    for (auto& v : xn.data()) v /= cfg.x_scale;
  std::vector<Var> parts{tape.constant(std::move(xn)), encoder_uses_si(cfg.variant) ? in.si_features : in.zero_si};
  if (in.time) parts.push_back(*in.time);
  Var h = tape.concat_cols(parts);
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) h = tape.gelu(tape.dense(h, "enc." + std::to_string(i)));
  Var out = tape.dense(h, "enc.out");
  if (cfg.quantizer == QuantizerKind::uniform) {
    const Tensor lo({in.n, latent_width(cfg)}, cfg.lo);
    out = tape.add(tape.scale(tape.sigmoid(out), cfg.hi - cfg.lo), tape.constant(lo));
  }
  return out;
}

Var decoder_net(Tape& tape, const CodecConfig& cfg, Var latent, const NetInputs& in) {
  std::vector<Var> parts{latent, decoder_uses_si(cfg.variant) ? in.si_features : in.zero_si};
  if (in.time) parts.push_back(*in.time);
  Var h = tape.concat_cols(parts);
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) h = tape.gelu(tape.dense(h, "dec." + std::to_string(i)));
  return tape.activate(tape.dense(h, "dec.out"), cfg.output);
}

UniformCells cells_of(const CodecConfig& cfg) { return {cfg.levels, cfg.lo, cfg.hi}; }

void check_x(const CodecConfig& cfg, const Tensor& x) {
  if (x.rank() != 2 || x.shape()[1] != cfg.x_dim)
    throw ConfigError("input must be [n x " + std::to_string(cfg.x_dim) + "], got " + shape_str(x.shape()));
}

// Encoder outputs before quantization, [n x L*D].
Tensor encoder_outputs(const CodecModel& model, const Tensor& x, const Conditioning& cond) {
  const auto& cfg = model.config;
  check_x(cfg, x);
  check_conditioning(cfg, x.rows(), cond, encoder_uses_si(cfg.variant));
  Tape tape(model.params);
  NetInputs in = prepare_inputs(tape, cfg, x.rows(), cond, encoder_uses_si(cfg.variant));
  return tape.value(encoder_net(tape, cfg, x, in));
}

}  // namespace

std::vector<Message> encode_batch(const CodecModel& model, const Tensor& x, Conditioning cond) {
  const auto& cfg = model.config;
  const Tensor z = encoder_outputs(model, x, cond);
  const std::size_t n = x.rows();
  std::vector<Message> out(n);
  if (cfg.quantizer == QuantizerKind::vq) {
    vq::Codebook cb(model.params.at("codebook").value);
    const auto idx = vq::quantize_batch(z.reshaped({n * cfg.latent_len, cfg.code_dim}), cb);
    for (std::size_t i = 0; i < n; ++i) {
      out[i].bits_per_index = cfg.codebook_bits;
      out[i].indices.assign(idx.begin() + i * cfg.latent_len, idx.begin() + (i + 1) * cfg.latent_len);
    }
  } else {
    const UniformCells cells = cells_of(cfg);
    const std::size_t w = latent_width(cfg);
    for (std::size_t i = 0; i < n; ++i) {
      out[i].bits_per_index = index_bits(cfg);
      out[i].indices.resize(w);
      for (std::size_t j = 0; j < w; ++j) out[i].indices[j] = cells.index(z(i, j));
    }
  }
  return out;
}

Tensor decode_batch(const CodecModel& model, std::span<const Message> messages, Conditioning cond) {
  const auto& cfg = model.config;
  const std::size_t n = messages.size();
  if (n == 0) throw ConfigError("decode_batch: no messages");
  check_conditioning(cfg, n, cond, decoder_uses_si(cfg.variant));
  const std::size_t len = message_len(cfg);
  const std::uint32_t limit = cfg.quantizer == QuantizerKind::vq ? (1u << cfg.codebook_bits) : cfg.levels;
  Tensor latent({n, latent_width(cfg)});
  const Tensor* cb = cfg.quantizer == QuantizerKind::vq ? &model.params.at("codebook").value : nullptr;
  const UniformCells cells = cells_of(cfg);
  for (std::size_t i = 0; i < n; ++i) {
    const Message& m = messages[i];
    if (m.indices.size() != len)
      throw DataError("message has " + std::to_string(m.indices.size()) + " indices, expected " + std::to_string(len));
    for (std::size_t p = 0; p < len; ++p) {
      const std::uint32_t idx = m.indices[p];
      if (idx >= limit)
        throw DataError("message index " + std::to_string(idx) + " out of range [0, " + std::to_string(limit) + ")");
      if (cb) {
        for (std::size_t d = 0; d < cfg.code_dim; ++d) latent(i, p * cfg.code_dim + d) = (*cb)(idx, d);
      } else {
        latent(i, p) = cells.center(idx);
      }
    }
  }
  Tape tape(model.params);
  NetInputs in = prepare_inputs(tape, cfg, n, cond, decoder_uses_si(cfg.variant));
  Tensor out = tape.value(decoder_net(tape, cfg, tape.constant(std::move(latent)), in));
  if (cfg.x_scale != 1.0)
    for (auto& v : out.data()) v *= cfg.x_scale;
  return out;
}

Message encode(const CodecModel& model, std::span<const double> x, std::optional<std::span<const double>> si,
               std::optional<double> t) {
  const auto& cfg = model.config;
  if (si.has_value() != encoder_uses_si(cfg.variant))
    throw ConfigError(encoder_uses_si(cfg.variant) ? "joint encoder requires side information"
                                                   : "this encoder does not accept side information");
  if (x.size() != cfg.x_dim)
    throw ConfigError("input has length " + std::to_string(x.size()) + ", expected " + std::to_string(cfg.x_dim));
  Tensor xt({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  Tensor st;
  std::vector<double> tv;
  Conditioning cond;
  if (si) {
    st = Tensor({1, si->size()}, std::vector<double>(si->begin(), si->end()));
    cond.si = &st;
  }
  if (t) {
    tv.push_back(*t);
    cond.t = &tv;
  }
  return encode_batch(model, xt, cond).front();
}

std::vector<double> decode(const CodecModel& model, const Message& m, std::optional<std::span<const double>> si,
                           std::optional<double> t) {
  const auto& cfg = model.config;
  if (si.has_value() != decoder_uses_si(cfg.variant))
    throw ConfigError(decoder_uses_si(cfg.variant) ? "this decoder requires side information"
                                                   : "separate decoder does not accept side information");
  Tensor st;
  std::vector<double> tv;
  Conditioning cond;
  if (si) {
    st = Tensor({1, si->size()}, std::vector<double>(si->begin(), si->end()));
    cond.si = &st;
  }
  if (t) {
    tv.push_back(*t);
    cond.t = &tv;
  }
  Tensor out = decode_batch(model, std::span<const Message>(&m, 1), cond);
  return {out.data().begin(), out.data().end()};
}

Conditioning BatchInputs::cond(const CodecConfig& cfg) const {
  Conditioning c;
  c.si = &si;
  if (cfg.time_conditioned) c.t = &t;
  return c;
}

BatchInputs batch_inputs(const CodecConfig& cfg, const PairDataset& ds, std::span<const std::size_t> rows,
                         std::span<const std::size_t> si_rows) {
  if (ds.x_dim != cfg.x_dim || ds.si_dim != cfg.si_dim)
    throw ConfigError("dataset dims (" + std::to_string(ds.x_dim) + ", " + std::to_string(ds.si_dim) +
                      ") do not match model dims (" + std::to_string(cfg.x_dim) + ", " + std::to_string(cfg.si_dim) + ")");
  if (cfg.time_conditioned && ds.aux_dim < 1)
    throw ConfigError("time-conditioned model needs a dataset with a time column");
  BatchInputs b;
  b.x = gather_rows(ds.x, ds.x_dim, rows);
  b.si = gather_rows(ds.y, ds.si_dim, si_rows.empty() ? rows : si_rows);
  if (cfg.time_conditioned) {
    b.t.reserve(rows.size());
    for (auto r : rows) b.t.push_back(ds.aux[r * ds.aux_dim]);
  }
  return b;
}

Tensor reconstruct(const CodecModel& model, const PairDataset& ds, std::span<const std::size_t> si_rows) {
  if (!si_rows.empty() && si_rows.size() != ds.n)
    throw ConfigError("reconstruct: si_rows must have one entry per sample");
  constexpr std::size_t kChunk = 512;
  Tensor out({ds.n, model.config.x_dim});
  std::vector<std::size_t> rows, srows;
  for (std::size_t start = 0; start < ds.n; start += kChunk) {
    const std::size_t end = std::min(ds.n, start + kChunk);
    rows.resize(end - start);
    std::iota(rows.begin(), rows.end(), start);
    if (si_rows.empty())
      srows = rows;
    else
      srows.assign(si_rows.begin() + static_cast<std::ptrdiff_t>(start),
                   si_rows.begin() + static_cast<std::ptrdiff_t>(end));
    BatchInputs enc_in = batch_inputs(model.config, ds, rows);
    BatchInputs dec_in = batch_inputs(model.config, ds, rows, srows);
    const auto msgs = encode_batch(model, enc_in.x, enc_in.cond(model.config));
    Tensor rec = decode_batch(model, msgs, dec_in.cond(model.config));
    std::copy(rec.data().begin(), rec.data().end(), out.ptr() + start * model.config.x_dim);
  }
  return out;
}

double evaluate_mse(const CodecModel& model, const PairDataset& ds, std::span<const std::size_t> si_rows) {
  const Tensor rec = reconstruct(model, ds, si_rows);
  double acc = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const double d = rec[i] - static_cast<double>(ds.x[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(rec.size());
}

namespace {

struct StepLosses {
  double total = 0, recon = 0, codebook = 0, commitment = 0;
};

void check_dataset(const CodecConfig& cfg, const PairDataset& ds, const char* which) {
  ds.validate();
  if (ds.n == 0) throw DataError(std::string(which) + " dataset is empty");
  if (ds.x_dim != cfg.x_dim || ds.si_dim != cfg.si_dim)
    throw ConfigError(std::string(which) + " dataset dims (" + std::to_string(ds.x_dim) + ", " +
                    std::to_string(ds.si_dim) + ") do not match config (" + std::to_string(cfg.x_dim) + ", " +
                    std::to_string(cfg.si_dim) + ")");
  if (cfg.time_conditioned && ds.aux_dim < 1)
    throw ConfigError(std::string(which) + " dataset has no time column for a time-conditioned model");
}

TrainResult train_impl(const CodecConfig& cfg, const PairDataset& train_set, const PairDataset& valid_set,
                       const TrainOptions& opts) {
  cfg.validate();
  check_dataset(cfg, train_set, "training");
  check_dataset(cfg, valid_set, "validation");
  if (opts.batch == 0) throw ConfigError("batch size must be positive");

  const bool is_vq = cfg.quantizer == QuantizerKind::vq;
  const bool needs_si = decoder_uses_si(cfg.variant) || encoder_uses_si(cfg.variant);
  TrainResult result{init_model(cfg, opts.seed), {}, {}, 0, 0.0};
  CodecModel& model = result.model;
  Rng rng = make_rng(opts.seed, 1);
  Adam adam(AdamConfig{opts.lr});

  const std::size_t n = train_set.n;
  const std::size_t k = is_vq ? (std::size_t{1} << cfg.codebook_bits) : 0;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);

  // The uncorrelated variant is validated the way it is trained, on SI from
  // other samples; scoring it with true SI would let checkpoint selection pick
  // up whatever accidental SI dependence the decoder has.
  std::vector<std::size_t> valid_si;
  if (cfg.variant == Variant::uncorrelated_si && valid_set.n > 1) {
    Rng vrng = make_rng(opts.seed, 2);
    std::uniform_int_distribution<std::size_t> pick(0, valid_set.n - 2);
    valid_si.resize(valid_set.n);
    for (std::size_t i = 0; i < valid_set.n; ++i) {
      const std::size_t j = pick(vrng);
      valid_si[i] = j >= i ? j + 1 : j;
    }
  }

  ParamSet best = model.params;
  double best_mse = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  bool codebook_ready = !is_vq;

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> counts(k, 0);
    Tensor last_z;
    StepLosses sums;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < n; start += opts.batch) {
      const std::size_t end = std::min(n, start + opts.batch);
      std::span<const std::size_t> rows(perm.data() + start, end - start);
      std::vector<std::size_t> si_rows(rows.begin(), rows.end());
      if (cfg.variant == Variant::uncorrelated_si && n > 1) {
        std::uniform_int_distribution<std::size_t> pick(0, n - 2);
        for (auto& r : si_rows) {
          std::size_t j = pick(rng);
          r = j >= r ? j + 1 : j;
        }
      }
      BatchInputs in = batch_inputs(cfg, train_set, rows, si_rows);
      Conditioning cond = in.cond(cfg);
      const std::size_t bn = rows.size();

      Tape tape(&model.params);
      NetInputs net = prepare_inputs(tape, cfg, bn, cond, needs_si);
      Var z = encoder_net(tape, cfg, in.x, net);

      if (!codebook_ready) {
        // Seed the codebook with encoder outputs of the first batch.
        const Tensor zr = tape.value(z).reshaped({bn * cfg.latent_len, cfg.code_dim});
        Tensor& cbv = model.params.at("codebook").value;
        std::vector<std::size_t> order(zr.rows());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::normal_distribution<double> jitter(0.0, 1e-3);
        for (std::size_t c = 0; c < k; ++c) {
          const auto src = zr.row(order[c % order.size()]);
          for (std::size_t d = 0; d < cfg.code_dim; ++d)
            cbv(c, d) = src[d] + (c >= order.size() ? jitter(rng) : 0.0);
        }
        codebook_ready = true;
        result.events.push_back("epoch 0: codebook initialized from " + std::to_string(zr.rows()) + " encoder outputs");
      }

      Var latent = z;
      std::optional<vq::TapeQuantization> q;
      if (is_vq) {
        Var zr = tape.reshape(z, {bn * cfg.latent_len, cfg.code_dim});
        q = vq::quantize_on_tape(tape, zr, tape.param("codebook"));
        latent = tape.reshape(q->quantized, {bn, latent_width(cfg)});
        for (auto idx : q->indices) ++counts[static_cast<std::size_t>(idx)];
        last_z = tape.value(zr);
      }
      Var recon = decoder_net(tape, cfg, latent, net);
      Tensor target = in.x;
      if (cfg.x_scale != 1.0)
        for (auto& v : target.data()) v /= cfg.x_scale;
      Var recon_loss = tape.mean_square(tape.sub(recon, tape.constant(std::move(target))));
      Var loss = recon_loss;
      if (q) loss = tape.add(tape.add(loss, q->codebook_loss), tape.scale(q->commitment_loss, opts.commitment_beta));

      const double lv = tape.value(loss)[0];
      if (!std::isfinite(lv))
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                             std::to_string(start) + " (variant " + std::string(variant_name(cfg.variant)) + ")");
      tape.backward(loss);
      adam.step(model.params);

      sums.total += lv;
      sums.recon += tape.value(recon_loss)[0];
      if (q) {
        sums.codebook += tape.value(q->codebook_loss)[0];
        sums.commitment += tape.value(q->commitment_loss)[0];
      }
      ++batches;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = sums.total / batches;
    entry.recon = sums.recon / batches;
    entry.codebook_loss = sums.codebook / batches;
    entry.commitment_loss = sums.commitment / batches;

    if (is_vq && last_z.size() > 0) {
      Tensor& cbv = model.params.at("codebook").value;
      std::uniform_int_distribution<std::size_t> pick(0, last_z.rows() - 1);
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] != 0) continue;
        const std::size_t r = pick(rng);
        for (std::size_t d = 0; d < cfg.code_dim; ++d) cbv(c, d) = last_z(r, d);
        ++entry.reinit_codes;
        result.events.push_back("epoch " + std::to_string(epoch) + ": reinitialized dead code " + std::to_string(c));
      }
    }

    entry.valid_mse = evaluate_mse(model, valid_set, valid_si);
    if (!std::isfinite(entry.valid_mse))
      throw NumericalError("non-finite validation MSE at epoch " + std::to_string(epoch));
    result.log.push_back(entry);

    if (entry.valid_mse < best_mse) {
      best_mse = entry.valid_mse;
      best = model.params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best > opts.patience) {
      result.events.push_back("early stop at epoch " + std::to_string(epoch) + " (best epoch " +
                              std::to_string(result.best_epoch) + ")");
      break;
    }
  }

  model.params = std::move(best);
  for (auto& [_, p] : model.params) {
    round_to_f32(p.value);
    p.grad.fill(0.0);
  }
  result.best_valid_mse = evaluate_mse(model, valid_set, valid_si);
  return result;
}

}  // namespace

TrainResult train(const CodecConfig& cfg, const PairDataset& train_set, const PairDataset& valid_set,
                  const TrainOptions& opts) {
  return train_impl(cfg, train_set, valid_set, opts);
}

TrainResult uniform_ae_train(CodecConfig cfg, unsigned levels, double lo, double hi, const PairDataset& train_set,
                             const PairDataset& valid_set, const TrainOptions& opts) {
  cfg.quantizer = QuantizerKind::uniform;
  cfg.levels = levels;
  cfg.lo = lo;
  cfg.hi = hi;
  return train_impl(cfg, train_set, valid_set, opts);
}

CodecModel with_levels(const CodecModel& model, unsigned levels) {
  if (model.config.quantizer != QuantizerKind::uniform)
    throw ConfigError("with_levels applies to uniform-quantized models only");
  CodecModel out = model;
  out.config.levels = levels;
  out.config.validate();
  return out;
}

void save_model(const CodecModel& model, const std::filesystem::path& path) {
  const std::string cfg = config_to_json(model.config).dump();
  atomic_write(path, [&](std::ostream& out) {
    out.write("NDSC", 4);
    binio::put_le<std::uint16_t>(out, kModelVersion);
    binio::put_string(out, cfg);
    for (const auto& [name, p] : model.params) write_tensor(out, name, p.value);
  });
}

CodecModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file '" + path.string() + "'");
  char magic[4];
  binio::read_exact(in, magic, 4, "model magic");
  if (std::string(magic, 4) != "NDSC")
    throw DataError("'" + path.string() + "' is not a model file: expected magic \"NDSC\"");
  const auto version = binio::get_le<std::uint16_t>(in, "model version");
  if (version != kModelVersion)
    throw DataError("model file format version " + std::to_string(version) + " is not supported (this build reads " +
                    std::to_string(kModelVersion) + ")");
  const std::string text = binio::get_string(in, "model config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model config is not valid JSON: ") + e.what());
  }
  CodecModel model = init_model(config_from_json(j), 0);
  std::set<std::string> seen;
  std::string name;
  Tensor t;
  while (read_tensor(in, name, t)) {
    if (!model.params.contains(name)) throw DataError("model file has unexpected tensor '" + name + "'");
    Param& p = model.params.at(name);
    if (p.value.shape() != t.shape())
      throw DataError("tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                      shape_str(p.value.shape()));
    if (!t.all_finite()) throw DataError("tensor '" + name + "' contains non-finite values");
    p.value = std::move(t);
    seen.insert(name);
  }
  for (const auto& [pname, _] : model.params)
    if (!seen.count(pname)) throw DataError("model file is missing tensor '" + pname + "'");
  return model;
}

}  // namespace ndsc::codec
