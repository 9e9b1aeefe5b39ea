#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "ndsc/tensor.hpp"

namespace ndsc {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are created on the first step for
/// every parameter in the set.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamSet& params);

  std::uint64_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }
  const Tensor& first_moment(const std::string& name) const { return m_.at(name); }
  const Tensor& second_moment(const std::string& name) const { return v_.at(name); }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

}  // namespace ndsc
