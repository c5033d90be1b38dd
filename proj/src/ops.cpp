#include "geoalign/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <fmt/format.h>

namespace geoalign {

namespace {

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw std::invalid_argument(fmt::format("{} expects a BxCxHxW tensor, got {}", what, shape_string(t.shape())));
  }
}

// Clamp-to-edge source index for every output position and kernel tap.
std::vector<std::size_t> tap_table(std::size_t extent, std::size_t taps, std::size_t dilation) {
  const auto center = static_cast<long>(taps / 2);
  const auto last = static_cast<long>(extent) - 1;
  std::vector<std::size_t> table(taps * extent);
  for (std::size_t t = 0; t < taps; ++t) {
    const long offset = (static_cast<long>(t) - center) * static_cast<long>(dilation);
    for (std::size_t i = 0; i < extent; ++i) {
      table[t * extent + i] = static_cast<std::size_t>(std::clamp(static_cast<long>(i) + offset, 0L, last));
    }
  }
  return table;
}

void check_conv_shapes(const Shape& input, const Kernel2D& kernel) {
  kernel.validate();
  const std::size_t expected = kernel.depthwise ? input[1] : 1;
  if (kernel.weights.dim(0) != expected) {
    throw std::invalid_argument(fmt::format("{} kernel of shape {} does not match input of shape {}",
                                            kernel.depthwise ? "depthwise" : "shared",
                                            shape_string(kernel.weights.shape()), shape_string(input)));
  }
}

template <typename Fn>
void for_each_tap(const Shape& shape, const Kernel2D& kernel, Fn&& fn) {
  const std::size_t batch = shape[0], channels = shape[1], height = shape[2], width = shape[3];
  const std::size_t kh = kernel.height(), kw = kernel.width();
  const auto rows = tap_table(height, kh, kernel.dilation);
  const auto cols = tap_table(width, kw, kernel.dilation);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t plane = (b * channels + c) * height * width;
      const std::size_t kc = kernel.depthwise ? c : 0;
      for (std::size_t u = 0; u < kh; ++u) {
        for (std::size_t v = 0; v < kw; ++v) {
          const std::size_t widx = (kc * kh + u) * kw + v;
          for (std::size_t i = 0; i < height; ++i) {
            const std::size_t src_row = plane + rows[u * height + i] * width;
            const std::size_t dst_row = plane + i * width;
            const std::size_t* col = &cols[v * width];
            for (std::size_t j = 0; j < width; ++j) fn(dst_row + j, src_row + col[j], widx);
          }
        }
      }
    }
  }
}

std::size_t product(const Shape& shape, std::size_t begin, std::size_t end) {
  std::size_t n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= shape[i];
  return n;
}

}  // namespace

Kernel2D Kernel2D::delta(std::size_t channels, std::size_t size, std::size_t dilation, bool depthwise) {
  Tensor weights(Shape{depthwise ? channels : 1, size, size});
  for (std::size_t c = 0; c < weights.dim(0); ++c) weights[(c * size + size / 2) * size + size / 2] = 1.0;
  Kernel2D kernel{std::move(weights), dilation, depthwise};
  kernel.validate();
  return kernel;
}

void Kernel2D::validate() const {
  if (weights.rank() != 3) {
    throw std::invalid_argument(fmt::format("kernel weights must be channels x kh x kw, got {}",
                                            shape_string(weights.shape())));
  }
  if (weights.dim(1) % 2 == 0 || weights.dim(2) % 2 == 0) {
    throw std::invalid_argument(fmt::format("kernel extents must be odd, got {}", shape_string(weights.shape())));
  }
  if (dilation < 1) throw std::invalid_argument("kernel dilation must be >= 1");
}

Tensor conv2d(const Tensor& input, const Kernel2D& kernel, PaddingMode) {
  require_rank4(input, "conv2d");
  check_conv_shapes(input.shape(), kernel);
  Tensor out(input.shape());
  const auto in = input.data();
  const auto w = kernel.weights.data();
  auto o = out.data();
  for_each_tap(input.shape(), kernel, [&](std::size_t dst, std::size_t src, std::size_t widx) {
    o[dst] += w[widx] * in[src];
  });
  return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Kernel2D& kernel) {
  require_rank4(grad_out, "conv2d_grad_input");
  check_conv_shapes(grad_out.shape(), kernel);
  Tensor grad(grad_out.shape());
  const auto g = grad_out.data();
  const auto w = kernel.weights.data();
  auto gi = grad.data();
  for_each_tap(grad_out.shape(), kernel, [&](std::size_t dst, std::size_t src, std::size_t widx) {
    gi[src] += w[widx] * g[dst];
  });
  return grad;
}

Tensor conv2d_grad_weights(const Tensor& grad_out, const Tensor& input, const Kernel2D& kernel) {
  require_rank4(input, "conv2d_grad_weights");
  check_conv_shapes(input.shape(), kernel);
  Tensor grad(kernel.weights.shape());
  const auto g = grad_out.data();
  const auto in = input.data();
  auto gw = grad.data();
  for_each_tap(input.shape(), kernel, [&](std::size_t dst, std::size_t src, std::size_t widx) {
    gw[widx] += g[dst] * in[src];
  });
  return grad;
}

std::pair<std::size_t, std::size_t> pool_bin(std::size_t index, std::size_t in, std::size_t out) {
  return {index * in / out, (index + 1) * in / out};
}

Tensor adaptive_avg_pool(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_rank4(input, "adaptive_avg_pool");
  const std::size_t batch = input.dim(0), channels = input.dim(1), in_h = input.dim(2), in_w = input.dim(3);
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("adaptive_avg_pool: output dimensions must be positive");
  if (out_h > in_h || out_w > in_w) {
    throw std::invalid_argument(
        fmt::format("adaptive_avg_pool: cannot pool {}x{} up to {}x{}", in_h, in_w, out_h, out_w));
  }
  Tensor out(Shape{batch, channels, out_h, out_w});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < out_h; ++i) {
        const auto [r0, r1] = pool_bin(i, in_h, out_h);
        for (std::size_t j = 0; j < out_w; ++j) {
          const auto [c0, c1] = pool_bin(j, in_w, out_w);
          double sum = 0.0;
          for (std::size_t r = r0; r < r1; ++r) {
            for (std::size_t q = c0; q < c1; ++q) sum += input.at(b, c, r, q);
          }
          out.at(b, c, i, j) = sum / static_cast<double>((r1 - r0) * (c1 - c0));
        }
      }
    }
  }
  return out;
}

Tensor adaptive_avg_pool_grad(const Tensor& grad_out, const Shape& input_shape) {
  Tensor grad(input_shape);
  const std::size_t batch = input_shape[0], channels = input_shape[1], in_h = input_shape[2], in_w = input_shape[3];
  const std::size_t out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < out_h; ++i) {
        const auto [r0, r1] = pool_bin(i, in_h, out_h);
        for (std::size_t j = 0; j < out_w; ++j) {
          const auto [c0, c1] = pool_bin(j, in_w, out_w);
          const double share = grad_out.at(b, c, i, j) / static_cast<double>((r1 - r0) * (c1 - c0));
          for (std::size_t r = r0; r < r1; ++r) {
            for (std::size_t q = c0; q < c1; ++q) grad.at(b, c, r, q) += share;
          }
        }
      }
    }
  }
  return grad;
}

Tensor softmax_over_axis(const Tensor& input, std::size_t axis) {
  if (axis >= input.rank()) {
    throw std::invalid_argument(fmt::format("softmax axis {} out of range for {}", axis, shape_string(input.shape())));
  }
  const std::size_t outer = product(input.shape(), 0, axis);
  const std::size_t n = input.dim(axis);
  const std::size_t inner = product(input.shape(), axis + 1, input.rank());
  Tensor out(input.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double peak = input[base];
      for (std::size_t k = 1; k < n; ++k) peak = std::max(peak, input[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(input[base + k * inner] - peak);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= total;
    }
  }
  return out;
}

Tensor softmax_grad(const Tensor& grad_out, const Tensor& output, std::size_t axis) {
  const std::size_t outer = product(output.shape(), 0, axis);
  const std::size_t n = output.dim(axis);
  const std::size_t inner = product(output.shape(), axis + 1, output.rank());
  Tensor grad(output.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += grad_out[base + k * inner] * output[base + k * inner];
      for (std::size_t k = 0; k < n; ++k) {
        grad[base + k * inner] = output[base + k * inner] * (grad_out[base + k * inner] - dot);
      }
    }
  }
  return grad;
}

Tensor channel_project(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank4(input, "channel_project");
  if (weights.rank() != 2 || weights.dim(1) != input.dim(1)) {
    throw std::invalid_argument(fmt::format("projection weights {} do not match input {}",
                                            shape_string(weights.shape()), shape_string(input.shape())));
  }
  const std::size_t batch = input.dim(0), in_c = input.dim(1), out_c = weights.dim(0);
  const std::size_t plane = input.dim(2) * input.dim(3);
  if (!bias.empty() && bias.size() != out_c) {
    throw std::invalid_argument(fmt::format("projection bias {} does not match {} outputs",
                                            shape_string(bias.shape()), out_c));
  }
  Tensor out(Shape{batch, out_c, input.dim(2), input.dim(3)});
  const auto in = input.data();
  auto o = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oc = 0; oc < out_c; ++oc) {
      double* dst = &o[(b * out_c + oc) * plane];
      if (!bias.empty()) std::fill(dst, dst + plane, bias[oc]);
      for (std::size_t ic = 0; ic < in_c; ++ic) {
        const double w = weights[oc * in_c + ic];
        const double* src = &in[(b * in_c + ic) * plane];
        for (std::size_t p = 0; p < plane; ++p) dst[p] += w * src[p];
      }
    }
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log1p_exp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double lower_quantile(std::span<const double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double rank = std::ceil(q * static_cast<double>(sorted.size())) - 1.0;
  const auto index = static_cast<std::size_t>(std::clamp(rank, 0.0, static_cast<double>(sorted.size() - 1)));
  return sorted[index];
}

}  // namespace geoalign
