#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ndsc/autodiff.hpp"
#include "ndsc/tensor.hpp"

namespace ndsc::vq {

/// K x D code vectors, K = 2^bits.
class Codebook {
 public:
  /// Throws ConfigError unless vectors is 2-D, K is a power of two >= 2, and all
  /// entries are finite.
  explicit Codebook(Tensor vectors);

  std::size_t size() const noexcept { return vectors_.shape()[0]; }
  std::size_t dim() const noexcept { return vectors_.shape()[1]; }
  unsigned bits() const noexcept { return bits_; }
  const Tensor& vectors() const noexcept { return vectors_; }
  std::span<const double> code(std::size_t k) const { return vectors_.row(k); }

 private:
  Tensor vectors_;
  unsigned bits_ = 0;
};

struct Assignment {
  std::int32_t index = 0;
  std::vector<double> code;
};

/// Nearest code vector under squared l2; ties go to the lowest index.
Assignment quantize(std::span<const double> z, const Codebook& cb);

/// Row-wise quantize over z[L x D]; returns one index per row.
std::vector<std::int32_t> quantize_batch(const Tensor& z, const Codebook& cb);

struct LossTerms {
  double codebook = 0.0;
  double commitment = 0.0;
};

/// Both terms are the squared distance between encoder outputs and selected
/// codes, averaged over rows (batch x positions). They differ only in which
/// side receives gradient, so their values coincide.
LossTerms loss_terms(const Tensor& z_e, const Tensor& codes);

/// Quantization recorded on a tape. `quantized` carries the code values
/// forward and the straight-through gradient back to z_e; the loss nodes route
/// gradient to the codebook (codebook_loss) or the encoder (commitment_loss).
struct TapeQuantization {
  Var quantized;
  Var codebook_loss;
  Var commitment_loss;
  std::vector<std::int32_t> indices;
};

/// z_rows: [rows x D] encoder outputs; codebook: [K x D] parameter node.
TapeQuantization quantize_on_tape(Tape& tape, Var z_rows, Var codebook);

}  // namespace ndsc::vq
