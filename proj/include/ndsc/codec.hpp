#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ndsc/autodiff.hpp"
#include "ndsc/sources.hpp"
#include "ndsc/tensor.hpp"

namespace ndsc::codec {

/// Where side information enters: distributed = decoder only, joint = both
/// ends, separate = neither, uncorrelated_si = decoder only but trained on SI
/// drawn from unrelated samples.
enum class Variant { distributed, joint, separate, uncorrelated_si };
enum class QuantizerKind { vq, uniform };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view s);

bool decoder_uses_si(Variant v);
bool encoder_uses_si(Variant v);

struct CodecConfig {
  Variant variant = Variant::distributed;
  std::size_t x_dim = 1;
  std::size_t si_dim = 1;
  std::size_t latent_len = 1;  // L quantized positions
  std::size_t code_dim = 1;    // D
  unsigned codebook_bits = 1;  // b, K = 2^b
  std::vector<std::size_t> hidden{64};
  std::size_t si_hidden = 32;
  Activation output = Activation::identity;
  bool time_conditioned = false;
  std::size_t time_horizon = 1;
  // Inputs are divided by these before entering the networks; reconstructions
  // are multiplied back.
  double x_scale = 1.0;
  double si_scale = 1.0;

  // Uniform-quantization ablation: continuous latent bounded to [lo, hi] by a
  // sigmoid, quantized to `levels` cells at inference.
  QuantizerKind quantizer = QuantizerKind::vq;
  unsigned levels = 4;
  double lo = 0.0;
  double hi = 1.0;

  /// Throws ConfigError on inconsistent fields.
  void validate() const;
};

/// Strict: unknown keys and wrong types are ConfigError.
CodecConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const CodecConfig& cfg);

/// Bits per index: b for VQ, ceil(log2 levels) for uniform cells.
unsigned index_bits(const CodecConfig& cfg);
/// Number of transmitted indices: L for VQ, L * D for uniform.
std::size_t message_len(const CodecConfig& cfg);
/// Message size in bits; for VQ exactly L * b.
std::uint64_t rate_bits(const CodecConfig& cfg);

/// Fixed-length index sequence.
struct Message {
  std::vector<std::uint32_t> indices;
  unsigned bits_per_index = 1;

  std::uint64_t bit_length() const { return indices.size() * std::uint64_t{bits_per_index}; }
  /// Big-endian bit packing, zero-padded to a byte boundary.
  std::vector<std::uint8_t> pack() const;
  /// Rejects wrong byte counts and non-zero padding.
  static Message unpack(std::span<const std::uint8_t> bytes, std::size_t count, unsigned bits_per_index);

  friend bool operator==(const Message&, const Message&) = default;
};

/// Cell arithmetic of the uniform ablation quantizer.
struct UniformCells {
  unsigned levels;
  double lo;
  double hi;

  std::uint32_t index(double v) const;
  double center(std::uint32_t i) const;
};

/// A trained (or freshly initialized) compressor. Parameters: `enc.<i>`,
/// `enc.out`, `si.0`, `dec.<i>`, `dec.out` affine layers and, for VQ models,
/// `codebook` [2^b x D].
struct CodecModel {
  CodecConfig config;
  ParamSet params;
};

CodecModel init_model(const CodecConfig& cfg, std::uint64_t seed);

/// Per-sample conditioning: SI rows (may be absent), time steps (required iff
/// the model is time-conditioned).
struct Conditioning {
  const Tensor* si = nullptr;
  const std::vector<double>* t = nullptr;
};

std::vector<Message> encode_batch(const CodecModel& model, const Tensor& x, Conditioning cond);
/// Reconstructions [n x x_dim] in input units.
Tensor decode_batch(const CodecModel& model, std::span<const Message> messages, Conditioning cond);

/// SI must be supplied iff the variant is joint.
Message encode(const CodecModel& model, std::span<const double> x,
               std::optional<std::span<const double>> si = std::nullopt,
               std::optional<double> t = std::nullopt);
/// SI must be supplied iff the decoder uses it (distributed, joint, uncorrelated_si).
std::vector<double> decode(const CodecModel& model, const Message& m,
                           std::optional<std::span<const double>> si = std::nullopt,
                           std::optional<double> t = std::nullopt);

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::size_t patience = 20;
  double commitment_beta = 0.25;
  std::uint64_t seed = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double recon = 0.0;
  double codebook_loss = 0.0;
  double commitment_loss = 0.0;
  double valid_mse = 0.0;
  std::size_t reinit_codes = 0;
};

struct TrainResult {
  CodecModel model;  // best validation checkpoint, rounded to float32
  std::vector<EpochLog> log;
  std::vector<std::string> events;
  std::size_t best_epoch = 0;
  double best_valid_mse = 0.0;
};

/// Trains a VQ or uniform-latent model on `train`, keeping the checkpoint with
/// the lowest validation MSE. Throws NumericalError on a non-finite loss.
TrainResult train(const CodecConfig& cfg, const PairDataset& train_set, const PairDataset& valid_set,
                  const TrainOptions& opts);

/// Same network and loop with a continuous sigmoid-bounded latent; the returned
/// model quantizes to `levels` uniform cells over [lo, hi] at inference.
TrainResult uniform_ae_train(CodecConfig cfg, unsigned levels, double lo, double hi,
                             const PairDataset& train_set, const PairDataset& valid_set,
                             const TrainOptions& opts);

/// Copy of a uniform model re-quantized to a different number of levels.
CodecModel with_levels(const CodecModel& model, unsigned levels);

/// Conditioning tensors for rows of a dataset; `si_rows` selects which rows'
/// SI to use (defaults to the same rows).
struct BatchInputs {
  Tensor x;
  Tensor si;
  std::vector<double> t;
  Conditioning cond(const CodecConfig& cfg) const;
};
BatchInputs batch_inputs(const CodecConfig& cfg, const PairDataset& ds, std::span<const std::size_t> rows,
                         std::span<const std::size_t> si_rows = {});

/// Reconstructions of every row of `ds` decoded with SI from `si_rows[i]` (true
/// SI when empty).
Tensor reconstruct(const CodecModel& model, const PairDataset& ds, std::span<const std::size_t> si_rows = {});
/// Mean squared error over all samples and dimensions, decoding with SI from
/// `si_rows` (true SI when empty).
double evaluate_mse(const CodecModel& model, const PairDataset& ds, std::span<const std::size_t> si_rows = {});

// Model file: "NDSC", u16 version, u32 length + canonical JSON config, then
// tensor records until end of file.
inline constexpr std::uint16_t kModelVersion = 1;
void save_model(const CodecModel& model, const std::filesystem::path& path);
CodecModel load_model(const std::filesystem::path& path);

}  // namespace ndsc::codec
