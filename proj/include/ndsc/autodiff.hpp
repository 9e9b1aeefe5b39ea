#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ndsc/tensor.hpp"

namespace ndsc {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

enum class Activation { gelu, sigmoid, identity };

/// Reverse-mode tape over a fixed forward graph. Build the forward pass with
/// the op methods, then call backward() on a scalar; gradients land in the
/// ParamSet's slots. A tape is single-use.
class Tape {
 public:
  explicit Tape(ParamSet* params = nullptr) : params_(params), view_(params) {}
  /// Inference-only tape; backward() on it leaves no parameter gradients.
  explicit Tape(const ParamSet& params) : params_(nullptr), view_(&params) {}

  Var param(const std::string& name);
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward() target with respect to v (zeros if v is
  /// unreachable or constant).
  const Tensor& grad(Var v) const;

  Var matmul(Var a, Var b);
  /// x[n x d_in] * w[d_in x d_out] + b[d_out]
  Var affine(Var x, Var w, Var b);
  /// affine over parameters `<prefix>.w`, `<prefix>.b`
  Var dense(Var x, const std::string& prefix);
  Var activate(Var x, Activation kind);
  Var gelu(Var x) { return activate(x, Activation::gelu); }
  Var sigmoid(Var x) { return activate(x, Activation::sigmoid); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  /// Concatenate 2-D tensors with equal row counts along columns.
  Var concat_cols(std::span<const Var> parts);
  Var reshape(Var a, Shape shape);

  Var stop_gradient(Var a);
  /// Forward value is `code`; the incoming gradient is passed unchanged to `z`.
  Var straight_through(Var z, Var code);
  /// rows of table[K x D] selected by index; gradients scatter-add into table.
  Var gather_rows(Var table, std::span<const std::int32_t> index);

  Var sum(Var a);
  /// Mean of squared entries.
  Var mean_square(Var a);
  /// Mean over rows of the squared l2 norm of each row.
  Var mean_row_sqnorm(Var a);
  /// Mean softmax cross-entropy of logits[n x c] against integer labels.
  Var softmax_cross_entropy(Var logits, std::span<const int> labels);

  /// Overwrites every gradient slot of the bound ParamSet with d(loss)/d(param).
  void backward(Var loss);

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::string param_name;  // non-empty for parameter leaves
    std::function<void()> back;
  };

  Var push(Tensor value, bool requires_grad, std::function<void()> back = {});
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient buffer of v, allocated on first touch.
  Tensor& grad_buf(Var v);

  ParamSet* params_;
  const ParamSet* view_;
  std::vector<Node> nodes_;
  Tensor empty_grad_;
};

}  // namespace ndsc
