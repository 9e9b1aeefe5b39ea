#include "ndsc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "ndsc/binio.hpp"
#include "ndsc/error.hpp"

namespace ndsc {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {
void check_shape(const Shape& shape) {
  for (auto d : shape)
    if (d == 0) throw ConfigError("tensor dimensions must be positive, got " + shape_str(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_size(shape_))
    throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_str(shape_));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ConfigError("ragged rows in Tensor::matrix");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::vector(std::span<const double> values) {
  return Tensor({values.size()}, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::transposed() const {
  if (rank() != 2) throw ConfigError("transpose requires a 2-D tensor, got " + shape_str(shape_));
  const std::size_t r = shape_[0], c = shape_[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data_[j * r + i] = data_[i * c + j];
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void round_to_f32(Tensor& t) {
  for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

Param& ParamSet::add(const std::string& name, Tensor init) {
  if (params_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  Tensor grad(init.shape());
  auto [it, _] = params_.emplace(name, Param{std::move(init), std::move(grad)});
  return it->second;
}

Param& ParamSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

const Param& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamSet::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

std::vector<double> ParamSet::flat_values() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& [_, p] : params_) out.insert(out.end(), p.value.data().begin(), p.value.data().end());
  return out;
}

std::vector<double> ParamSet::flat_grads() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& [_, p] : params_) out.insert(out.end(), p.grad.data().begin(), p.grad.data().end());
  return out;
}

void ParamSet::set_flat_values(std::span<const double> values) {
  if (values.size() != parameter_count())
    throw ConfigError("flat parameter vector has length " + std::to_string(values.size()) +
                      ", expected " + std::to_string(parameter_count()));
  std::size_t off = 0;
  for (auto& [_, p] : params_) {
    std::copy_n(values.begin() + off, p.value.size(), p.value.data().begin());
    off += p.value.size();
  }
}

void ParamSet::set_flat_grads(std::span<const double> grads) {
  if (grads.size() != parameter_count())
    throw ConfigError("flat gradient vector has length " + std::to_string(grads.size()) +
                      ", expected " + std::to_string(parameter_count()));
  std::size_t off = 0;
  for (auto& [_, p] : params_) {
    std::copy_n(grads.begin() + off, p.grad.size(), p.grad.data().begin());
    off += p.grad.size();
  }
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  binio::put_string(out, name);
  binio::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) binio::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) binio::put_f32(out, static_cast<float>(v));
}

bool read_tensor(std::istream& in, std::string& name, Tensor& t) {
  if (in.peek() == std::char_traits<char>::eof()) return false;
  name = binio::get_string(in, "tensor name", 4096);
  const auto rank = binio::get_le<std::uint32_t>(in, "tensor rank");
  if (rank > 8) throw DataError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    d = binio::get_le<std::uint32_t>(in, "tensor shape");
    if (d == 0) throw DataError("tensor '" + name + "' has a zero dimension");
  }
  const std::size_t n = shape_size(shape);
  if (n > (std::size_t{1} << 30)) throw DataError("tensor '" + name + "' is implausibly large");
  std::vector<double> data(n);
  for (auto& v : data) v = binio::get_f32(in, "tensor data");
  t = Tensor(std::move(shape), std::move(data));
  return true;
}

}  // namespace ndsc
