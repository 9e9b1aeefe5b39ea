#include "ndsc/vq.hpp"

#include "ndsc/error.hpp"
#include "ndsc/kernels.hpp"

namespace ndsc::vq {

Codebook::Codebook(Tensor vectors) : vectors_(std::move(vectors)) {
  if (vectors_.rank() != 2) throw ConfigError("codebook must be 2-D, got " + shape_str(vectors_.shape()));
  const std::size_t k = vectors_.shape()[0];
  if (k < 2 || (k & (k - 1)) != 0)
    throw ConfigError("codebook size must be a power of two >= 2, got " + std::to_string(k));
  if (!vectors_.all_finite()) throw ConfigError("codebook contains non-finite entries");
  while ((std::size_t{1} << bits_) < k) ++bits_;
}

Assignment quantize(std::span<const double> z, const Codebook& cb) {
  if (z.size() != cb.dim())
    throw ConfigError("quantize: vector length " + std::to_string(z.size()) +
                      " does not match code dimension " + std::to_string(cb.dim()));
  Assignment a;
  kernels::nearest(z.data(), 1, cb.dim(), cb.vectors().ptr(), cb.size(), &a.index);
  const auto c = cb.code(static_cast<std::size_t>(a.index));
  a.code.assign(c.begin(), c.end());
  return a;
}

std::vector<std::int32_t> quantize_batch(const Tensor& z, const Codebook& cb) {
  if (z.rank() != 2 || z.shape()[1] != cb.dim())
    throw ConfigError("quantize_batch: expected [L x " + std::to_string(cb.dim()) + "], got " +
                      shape_str(z.shape()));
  std::vector<std::int32_t> idx(z.rows());
  kernels::nearest(z.ptr(), z.rows(), cb.dim(), cb.vectors().ptr(), cb.size(), idx.data());
  return idx;
}

LossTerms loss_terms(const Tensor& z_e, const Tensor& codes) {
  if (z_e.shape() != codes.shape())
    throw ConfigError("vq loss: shape mismatch " + shape_str(z_e.shape()) + " vs " +
                      shape_str(codes.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < z_e.size(); ++i) {
    const double d = z_e[i] - codes[i];
    acc += d * d;
  }
  const double v = acc / static_cast<double>(z_e.rows());
  return {v, v};
}

TapeQuantization quantize_on_tape(Tape& tape, Var z_rows, Var codebook) {
  Codebook cb(tape.value(codebook));
  TapeQuantization q;
  q.indices = quantize_batch(tape.value(z_rows), cb);
  Var codes = tape.gather_rows(codebook, q.indices);
  Var z_fixed = tape.stop_gradient(z_rows);
  Var codes_fixed = tape.stop_gradient(codes);
  q.codebook_loss = tape.mean_row_sqnorm(tape.sub(z_fixed, codes));
  q.commitment_loss = tape.mean_row_sqnorm(tape.sub(z_rows, codes_fixed));
  q.quantized = tape.straight_through(z_rows, codes_fixed);
  return q;
}

}  // namespace ndsc::vq
