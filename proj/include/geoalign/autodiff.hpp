#pragma once

// Reverse-mode differentiation over the small operator set the alignment
// modules need. A Tape owns every value it records; Var is a cheap handle.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "geoalign/tensor.hpp"

namespace geoalign {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }

  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Accumulates d(loss)/d(input k) into grads[k]; grads[k] is null when
  /// input k does not need a gradient. `out` is the node's forward value.
  using Backward =
      std::function<void(const Tensor& grad_out, const Tensor& out, std::span<Tensor* const> grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an operation; the result needs a gradient iff any input does.
  Var record(std::string op, Tensor value, std::vector<Var> inputs, Backward backward);

  /// Populates grad() of every gradient-requiring node reachable from `loss`.
  void backward(Var loss);

  /// Operation names in the order the last backward pass visited them.
  const std::vector<std::string>& last_backward_order() const { return visit_order_; }

  /// Operation names in execution order.
  std::vector<std::string> recorded_ops() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  const Node& node(Var v) const;

  std::deque<Node> nodes_;
  std::vector<std::string> visit_order_;
};

namespace ad {

// Elementwise binary ops broadcast operands of equal rank whose dimensions
// agree or are 1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add(Var a, double c);
Var scale(Var a, double c);

Var sigmoid(Var x);
Var relu(Var x);
Var log1p_exp(Var x);
/// log1p_exp(x) - log(2); zero at zero.
Var shifted_softplus(Var x);
Var abs(Var x);

Var sum(Var x);
Var mean(Var x);
/// Mean over the entries where `mask` is nonzero; mask has x's shape.
Var masked_mean(Var x, const Tensor& mask);

/// Depthwise or shared dilated correlation; `weights` is channels x kh x kw.
Var conv2d(Var input, Var weights, std::size_t dilation, bool depthwise);
Var adaptive_avg_pool(Var x, std::size_t out_h, std::size_t out_w);
Var softmax(Var x, std::size_t axis);
/// 1x1 projection; `bias` may be an invalid Var.
Var channel_project(Var x, Var weights, Var bias);
/// Mean over the channel axis of a BxCxHxW tensor, giving Bx1xHxW.
Var channel_mean(Var x);
/// Channel `index` of a BxCxHxW tensor, kept as Bx1xHxW.
Var select_channel(Var x, std::size_t index);
/// Divides by the L2 norm of all elements.
Var normalize(Var x);
Var reshape(Var x, Shape shape);

}  // namespace ad

}  // namespace geoalign
