#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ndsc {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of reals. Every dimension is positive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// 2-D tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::span<const double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  /// Leading dimension; 1 for scalars.
  std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
  /// Product of the trailing dimensions.
  std::size_t cols() const noexcept { return rows() == 0 ? 0 : data_.size() / rows(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  /// Same data, new shape of equal size.
  Tensor reshaped(Shape shape) const;
  Tensor transposed() const;  // 2-D only
  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Round every entry to the nearest 32-bit float, the storage precision of
/// model and dataset files.
void round_to_f32(Tensor& t);

struct Param {
  Tensor value;
  Tensor grad;
};

/// Named parameters with gradient slots of identical shape. Iteration order is
/// lexicographic by name, which fixes the flattening order.
class ParamSet {
 public:
  Param& add(const std::string& name, Tensor init);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad();
  std::size_t parameter_count() const;
  std::size_t size() const noexcept { return params_.size(); }

  std::vector<double> flat_values() const;
  std::vector<double> flat_grads() const;
  void set_flat_values(std::span<const double> values);
  void set_flat_grads(std::span<const double> grads);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Param> params_;
};

/// Append an affine layer `<prefix>.w` [d_in x d_out] ~ U(-1/sqrt(d_in), 1/sqrt(d_in))
/// and `<prefix>.b` [d_out] = 0.
template <class Rng>
void add_affine(ParamSet& params, const std::string& prefix, std::size_t d_in, std::size_t d_out,
                Rng& rng);

// Tensor record: u32 name length, name bytes, u32 rank, u32 per dimension, then
// little-endian float32 entries in row-major order.
void write_tensor(std::ostream& out, const std::string& name, const Tensor& t);
/// Returns false on clean end of stream before a record starts; throws DataError
/// on a partial record.
bool read_tensor(std::istream& in, std::string& name, Tensor& t);

}  // namespace ndsc

#include "ndsc/tensor_impl.hpp"
