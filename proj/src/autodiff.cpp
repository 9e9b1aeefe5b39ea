#include "ndsc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ndsc/error.hpp"
#include "ndsc/kernels.hpp"

namespace ndsc {
namespace {

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw ConfigError(std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

double normal_cdf(double u) { return 0.5 * std::erfc(-u / std::numbers::sqrt2); }
double normal_pdf(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

Var Tape::push(Tensor value, bool requires_grad, std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor& Tape::grad_buf(Var v) {
  Node& n = nodes_[v.id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.has_grad) return n.grad;
  return empty_grad_;
}

Var Tape::param(const std::string& name) {
  if (!view_) throw ConfigError("tape has no parameter set bound");
  Var v = push(view_->at(name).value, params_ != nullptr);
  nodes_[v.id].param_name = name;
  return v;
}

Var Tape::constant(Tensor value) { return push(std::move(value), false); }

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_2d(av, "matmul");
  require_2d(bv, "matmul");
  const std::size_t n = av.shape()[0], k = av.shape()[1], m = bv.shape()[1];
  if (bv.shape()[0] != k)
    throw ConfigError("matmul: inner dimensions differ, " + shape_str(av.shape()) + " x " +
                      shape_str(bv.shape()));
  Tensor out({n, m});
  kernels::gemm(av.ptr(), bv.ptr(), out.ptr(), n, k, m);
  Var o = push(std::move(out), needs(a) || needs(b));
  nodes_[o.id].back = [this, a, b, o, n, k, m] {
    const Tensor& g = nodes_[o.id].grad;
    if (needs(a)) {
      Tensor bt = value(b).transposed();
      Tensor ga({n, k});
      kernels::gemm(g.ptr(), bt.ptr(), ga.ptr(), n, m, k);
      Tensor& dst = grad_buf(a);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += ga[i];
    }
    if (needs(b)) {
      Tensor at = value(a).transposed();
      Tensor gb({k, m});
      kernels::gemm(at.ptr(), g.ptr(), gb.ptr(), k, n, m);
      Tensor& dst = grad_buf(b);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gb[i];
    }
  };
  return o;
}

Var Tape::affine(Var x, Var w, Var b) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  require_2d(xv, "affine");
  require_2d(wv, "affine");
  if (xv.shape()[1] != wv.shape()[0])
    throw ConfigError("affine: input " + shape_str(xv.shape()) + " does not conform to weight " +
                      shape_str(wv.shape()));
  const std::size_t n = xv.shape()[0], m = wv.shape()[1];
  if (bv.size() != m)
    throw ConfigError("affine: bias " + shape_str(bv.shape()) + " does not match weight " +
                      shape_str(wv.shape()));
  Var prod = matmul(x, w);  // may reallocate nodes_; earlier references are stale
  Tensor out = value(prod);
  const Tensor& bias = value(b);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) += bias[j];
  Var o = push(std::move(out), needs(prod) || needs(b));
  nodes_[o.id].back = [this, prod, b, o, n, m] {
    const Tensor& g = nodes_[o.id].grad;
    if (needs(prod)) {
      Tensor& dst = grad_buf(prod);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
    if (needs(b)) {
      Tensor& db = grad_buf(b);
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += g[i * m + j];
        db[j] += acc;
      }
    }
  };
  return o;
}

Var Tape::dense(Var x, const std::string& prefix) {
  return affine(x, param(prefix + ".w"), param(prefix + ".b"));
}

Var Tape::activate(Var x, Activation kind) {
  if (kind == Activation::identity) return x;
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double u = xv[i];
    out[i] = kind == Activation::gelu ? u * normal_cdf(u) : 1.0 / (1.0 + std::exp(-u));
  }
  Var o = push(std::move(out), needs(x));
  nodes_[o.id].back = [this, x, o, kind] {
    const Tensor& g = nodes_[o.id].grad;
    const Tensor& xv = value(x);
    const Tensor& yv = value(o);
    Tensor& dst = grad_buf(x);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const double u = xv[i];
      const double d = kind == Activation::gelu ? normal_cdf(u) + u * normal_pdf(u)
                                                : yv[i] * (1.0 - yv[i]);
      dst[i] += g[i] * d;
    }
  };
  return o;
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Var o = push(std::move(out), needs(a) || needs(b));
  nodes_[o.id].back = [this, a, b, o] {
    const Tensor& g = nodes_[o.id].grad;
    for (Var v : {a, b}) {
      if (!needs(v)) continue;
      Tensor& dst = grad_buf(v);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
  };
  return o;
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Var o = push(std::move(out), needs(a) || needs(b));
  nodes_[o.id].back = [this, a, b, o] {
    const Tensor& g = nodes_[o.id].grad;
    if (needs(a)) {
      Tensor& dst = grad_buf(a);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
    if (needs(b)) {
      Tensor& dst = grad_buf(b);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= g[i];
    }
  };
  return o;
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Var o = push(std::move(out), needs(a) || needs(b));
  nodes_[o.id].back = [this, a, b, o] {
    const Tensor& g = nodes_[o.id].grad;
    if (needs(a)) {
      const Tensor& bv = value(b);
      Tensor& dst = grad_buf(a);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * bv[i];
    }
    if (needs(b)) {
      const Tensor& av = value(a);
      Tensor& dst = grad_buf(b);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * av[i];
    }
  };
  return o;
}

Var Tape::scale(Var a, double s) {
  Tensor out = value(a);
  for (auto& v : out.data()) v *= s;
  Var o = push(std::move(out), needs(a));
  nodes_[o.id].back = [this, a, o, s] {
    const Tensor& g = nodes_[o.id].grad;
    Tensor& dst = grad_buf(a);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * g[i];
  };
  return o;
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_cols needs at least one input");
  const std::size_t n = value(parts[0]).rows();
  std::size_t total = 0;
  bool req = false;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    const Tensor& t = value(p);
    require_2d(t, "concat_cols");
    if (t.rows() != n)
      throw ConfigError("concat_cols: row counts differ (" + std::to_string(n) + " vs " +
                        std::to_string(t.rows()) + ")");
    widths.push_back(t.cols());
    total += t.cols();
    req = req || needs(p);
  }
  Tensor out({n, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& t = value(parts[k]);
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(t.ptr() + i * widths[k], widths[k], out.ptr() + i * total + off);
    off += widths[k];
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  Var o = push(std::move(out), req);
  nodes_[o.id].back = [this, ins, widths, o, n, total] {
    const Tensor& g = nodes_[o.id].grad;
    std::size_t off = 0;
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (needs(ins[k])) {
        Tensor& dst = grad_buf(ins[k]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) dst[i * widths[k] + j] += g[i * total + off + j];
      }
      off += widths[k];
    }
  };
  return o;
}

Var Tape::reshape(Var a, Shape shape) {
  Tensor out = value(a).reshaped(std::move(shape));
  Var o = push(std::move(out), needs(a));
  nodes_[o.id].back = [this, a, o] {
    const Tensor& g = nodes_[o.id].grad;
    Tensor& dst = grad_buf(a);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  };
  return o;
}

Var Tape::stop_gradient(Var a) { return push(value(a), false); }

Var Tape::straight_through(Var z, Var code) {
  require_same_shape(value(z), value(code), "straight_through");
  Var o = push(value(code), needs(z));
  nodes_[o.id].back = [this, z, o] {
    const Tensor& g = nodes_[o.id].grad;
    Tensor& dst = grad_buf(z);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  };
  return o;
}

Var Tape::gather_rows(Var table, std::span<const std::int32_t> index) {
  const Tensor& tv = value(table);
  require_2d(tv, "gather_rows");
  const std::size_t k = tv.shape()[0], d = tv.shape()[1];
  Tensor out({index.size(), d});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= k)
      throw ConfigError("gather_rows: index " + std::to_string(index[r]) + " out of range");
    std::copy_n(tv.ptr() + static_cast<std::size_t>(index[r]) * d, d, out.ptr() + r * d);
  }
  std::vector<std::int32_t> idx(index.begin(), index.end());
  Var o = push(std::move(out), needs(table));
  nodes_[o.id].back = [this, table, idx, o, d] {
    const Tensor& g = nodes_[o.id].grad;
    Tensor& dst = grad_buf(table);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) dst[static_cast<std::size_t>(idx[r]) * d + j] += g[r * d + j];
  };
  return o;
}

Var Tape::sum(Var a) {
  double acc = 0.0;
  for (double v : value(a).data()) acc += v;
  Var o = push(Tensor(Shape{}, acc), needs(a));
  nodes_[o.id].back = [this, a, o] {
    const double g = nodes_[o.id].grad[0];
    Tensor& dst = grad_buf(a);
    for (auto& v : dst.data()) v += g;
  };
  return o;
}

Var Tape::mean_square(Var a) {
  const Tensor& av = value(a);
  double acc = 0.0;
  for (double v : av.data()) acc += v * v;
  const double n = static_cast<double>(av.size());
  Var o = push(Tensor(Shape{}, acc / n), needs(a));
  nodes_[o.id].back = [this, a, o, n] {
    const double g = nodes_[o.id].grad[0];
    const Tensor& av = value(a);
    Tensor& dst = grad_buf(a);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g * 2.0 * av[i] / n;
  };
  return o;
}

Var Tape::mean_row_sqnorm(Var a) {
  const Tensor& av = value(a);
  double acc = 0.0;
  for (double v : av.data()) acc += v * v;
  const double rows = static_cast<double>(av.rows());
  Var o = push(Tensor(Shape{}, acc / rows), needs(a));
  nodes_[o.id].back = [this, a, o, rows] {
    const double g = nodes_[o.id].grad[0];
    const Tensor& av = value(a);
    Tensor& dst = grad_buf(a);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g * 2.0 * av[i] / rows;
  };
  return o;
}

Var Tape::softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& lv = value(logits);
  require_2d(lv, "softmax_cross_entropy");
  const std::size_t n = lv.shape()[0], c = lv.shape()[1];
  if (labels.size() != n)
    throw ConfigError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(n) + " rows");
  Tensor prob({n, c});
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw ConfigError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
    double mx = lv(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(lv(i, j) - mx);
    for (std::size_t j = 0; j < c; ++j) prob(i, j) = std::exp(lv(i, j) - mx) / z;
    loss += -(lv(i, static_cast<std::size_t>(y)) - mx - std::log(z));
  }
  std::vector<int> ys(labels.begin(), labels.end());
  Var o = push(Tensor(Shape{}, loss / static_cast<double>(n)), needs(logits));
  nodes_[o.id].back = [this, logits, o, prob = std::move(prob), ys, n, c] {
    const double g = nodes_[o.id].grad[0] / static_cast<double>(n);
    Tensor& dst = grad_buf(logits);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j)
        dst[i * c + j] += g * (prob(i, j) - (static_cast<std::size_t>(ys[i]) == j ? 1.0 : 0.0));
  };
  return o;
}

void Tape::backward(Var loss) {
  if (loss.id >= nodes_.size()) throw ConfigError("backward: invalid loss handle");
  if (value(loss).size() != 1)
    throw ConfigError("backward requires a scalar loss, got shape " + shape_str(value(loss).shape()));
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (params_) params_->zero_grad();
  if (!needs(loss)) return;
  grad_buf(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_grad) continue;
    if (n.back) n.back();
    if (!n.param_name.empty() && params_) {
      Tensor& slot = params_->at(n.param_name).grad;
      for (std::size_t j = 0; j < slot.size(); ++j) slot[j] += n.grad[j];
    }
  }
}

}  // namespace ndsc
