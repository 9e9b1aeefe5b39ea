#pragma once

#include <cmath>
#include <random>

namespace ndsc {

template <class Rng>
void add_affine(ParamSet& params, const std::string& prefix, std::size_t d_in, std::size_t d_out,
                Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w({d_in, d_out});
  for (auto& v : w.data()) v = dist(rng);
  params.add(prefix + ".w", std::move(w));
  params.add(prefix + ".b", Tensor({d_out}));
}

}  // namespace ndsc
