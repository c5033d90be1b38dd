#pragma once

// Plain (tape-free) numeric kernels. The autodiff layer wraps these and adds
// the matching backward passes declared alongside.

#include <cstddef>
#include <span>
#include <utility>

#include "geoalign/tensor.hpp"

namespace geoalign {

enum class PaddingMode { replicate };

/// Odd-sized correlation kernel. `weights` is channels x kh x kw; a depthwise
/// kernel carries one slice per input channel, a shared kernel exactly one
/// slice applied to every channel.
struct Kernel2D {
  Tensor weights;
  std::size_t dilation = 1;
  bool depthwise = false;

  static Kernel2D delta(std::size_t channels, std::size_t size, std::size_t dilation, bool depthwise);

  std::size_t height() const { return weights.dim(1); }
  std::size_t width() const { return weights.dim(2); }
  /// (k - 1) * r + 1 along the kernel height.
  std::size_t receptive_field() const { return (height() - 1) * dilation + 1; }

  void validate() const;
};

/// Same-size dilated cross-correlation (no kernel flip) with clamp-to-edge
/// borders.
Tensor conv2d(const Tensor& input, const Kernel2D& kernel, PaddingMode padding = PaddingMode::replicate);
Tensor conv2d_grad_input(const Tensor& grad_out, const Kernel2D& kernel);
Tensor conv2d_grad_weights(const Tensor& grad_out, const Tensor& input, const Kernel2D& kernel);

/// Half-open bin [floor(i*in/out), floor((i+1)*in/out)).
std::pair<std::size_t, std::size_t> pool_bin(std::size_t index, std::size_t in, std::size_t out);

Tensor adaptive_avg_pool(const Tensor& input, std::size_t out_h, std::size_t out_w);
Tensor adaptive_avg_pool_grad(const Tensor& grad_out, const Shape& input_shape);

Tensor softmax_over_axis(const Tensor& input, std::size_t axis);
Tensor softmax_grad(const Tensor& grad_out, const Tensor& output, std::size_t axis);

/// 1x1 channel mixing: out[b,o,h,w] = sum_c weights[o,c] * in[b,c,h,w] + bias[o].
/// `bias` may be empty.
Tensor channel_project(const Tensor& input, const Tensor& weights, const Tensor& bias);

double sigmoid(double x);
/// log(1 + exp(x)) without overflow.
double log1p_exp(double x);

/// Inverse empirical CDF: the ceil(q*N)-th smallest value (clamped to the
/// sample). Ties and tiny samples resolve toward the lower order statistic.
double lower_quantile(std::span<const double> values, double q);

}  // namespace geoalign
