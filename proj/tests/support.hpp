#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ndsc/autodiff.hpp"
#include "ndsc/rng.hpp"
#include "ndsc/tensor.hpp"

namespace testsupport {

inline ndsc::Tensor random_tensor(ndsc::Shape shape, ndsc::Rng& rng, double sd = 1.0) {
  ndsc::Tensor t(std::move(shape));
  std::normal_distribution<double> g(0.0, sd);
  for (auto& v : t.data()) v = g(rng);
  return t;
}

/// Random 2-3 layer gelu network with a squared-error loss on fixed inputs.
struct RandomNet {
  ndsc::ParamSet params;
  ndsc::Tensor input;
  ndsc::Tensor target;
  std::size_t layers = 2;
  bool sigmoid_out = false;

  explicit RandomNet(std::uint64_t seed) {
    auto rng = ndsc::make_rng(seed, 77);
    std::uniform_int_distribution<std::size_t> width(2, 6);
    layers = 2 + seed % 2;
    sigmoid_out = (seed / 2) % 2 == 1;
    std::size_t d = width(rng);
    input = random_tensor({4, d}, rng);
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t out = width(rng);
      ndsc::add_affine(params, "l" + std::to_string(l), d, out, rng);
      // Nonzero biases so the bias path is exercised.
      auto& b = params.at("l" + std::to_string(l) + ".b").value;
      for (auto& v : b.data()) v = std::normal_distribution<double>(0.0, 0.3)(rng);
      d = out;
    }
    target = random_tensor({4, d}, rng);
  }

  ndsc::Var forward(ndsc::Tape& tape) const {
    ndsc::Var h = tape.constant(input);
    for (std::size_t l = 0; l < layers; ++l) {
      h = tape.dense(h, "l" + std::to_string(l));
      if (l + 1 < layers) h = tape.gelu(h);
    }
    if (sigmoid_out) h = tape.sigmoid(h);
    return tape.mean_square(tape.sub(h, tape.constant(target)));
  }

  double loss_at(const std::vector<double>& flat) const {
    ndsc::ParamSet p = params;
    p.set_flat_values(flat);
    ndsc::Tape tape(p);
    return tape.value(forward(tape))[0];
  }
};

/// Max relative error between reverse-mode and central-difference gradients.
inline double gradient_check_error(std::uint64_t seed, double step = 1e-4) {
  RandomNet net(seed);
  ndsc::ParamSet p = net.params;
  ndsc::Tape tape(&p);
  tape.backward(net.forward(tape));
  const auto analytic = p.flat_grads();
  auto flat = p.flat_values();
  double worst = 0.0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double keep = flat[i];
    flat[i] = keep + step;
    const double up = net.loss_at(flat);
    flat[i] = keep - step;
    const double down = net.loss_at(flat);
    flat[i] = keep;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

/// Residual variance of the least-squares regression of x on y = x + n,
/// estimated from `samples` draws with x ~ N(0,1), n ~ N(0, sigma_n^2).
inline double regression_residual_variance(std::size_t samples, double sigma_n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double x = g(rng), y = x + sigma_n * g(rng);
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  const double n = static_cast<double>(samples);
  const double vx = sxx / n - (sx / n) * (sx / n);
  const double vy = syy / n - (sy / n) * (sy / n);
  const double cxy = sxy / n - (sx / n) * (sy / n);
  return vx - cxy * cxy / vy;
}

inline std::vector<double> normal_samples(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace testsupport
