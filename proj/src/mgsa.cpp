#include "geoalign/mgsa.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace geoalign {

namespace {

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw std::invalid_argument(fmt::format("{} expects a BxCxHxW tensor, got {}", what, shape_string(t.shape())));
  }
}

}  // namespace

MgsaParams MgsaParams::identity(std::size_t channels, std::size_t depth_channels) {
  return {Kernel2D::delta(channels, 3, 2, true), Kernel2D::delta(channels, 3, 4, true),
          Tensor(Shape{3, depth_channels}), Tensor(Shape{3})};
}

MgsaParams MgsaParams::perturbed(std::size_t channels, std::size_t depth_channels, std::uint64_t seed,
                                 double kernel_sigma, double head_sigma) {
  MgsaParams p = identity(channels, depth_channels);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> tap(0.0, kernel_sigma), head(0.0, head_sigma);
  for (double& v : p.mid_kernel.weights.data()) v += tap(rng);
  for (double& v : p.far_kernel.weights.data()) v += tap(rng);
  for (double& v : p.psi_weights.data()) v = head(rng);
  for (double& v : p.psi_bias.data()) v = head(rng);
  return p;
}

void MgsaParams::validate() const {
  mid_kernel.validate();
  far_kernel.validate();
  if (!mid_kernel.depthwise || !far_kernel.depthwise) throw std::invalid_argument("MGSA branch kernels are depthwise");
  if (mid_kernel.dilation != 2 || far_kernel.dilation != 4) {
    throw std::invalid_argument(fmt::format("MGSA branch dilations must be 2 and 4, got {} and {}",
                                            mid_kernel.dilation, far_kernel.dilation));
  }
  if (mid_kernel.weights.shape() != far_kernel.weights.shape()) {
    throw std::invalid_argument(fmt::format("mid kernel {} and far kernel {} differ",
                                            shape_string(mid_kernel.weights.shape()),
                                            shape_string(far_kernel.weights.shape())));
  }
  if (psi_weights.rank() != 2 || psi_weights.dim(0) != 3 || psi_bias.size() != 3) {
    throw std::invalid_argument(fmt::format("psi head must be 3xC with 3 biases, got {} and {}",
                                            shape_string(psi_weights.shape()), shape_string(psi_bias.shape())));
  }
}

ScaleBranchSet build_branches(const Tensor& f_r, const MgsaParams& params) {
  require_rank4(f_r, "build_branches");
  params.validate();
  return {f_r, conv2d(f_r, params.mid_kernel), conv2d(f_r, params.far_kernel)};
}

Tensor mean_center(const Tensor& f_d) {
  require_rank4(f_d, "mean_center");
  Tensor out = f_d;
  const std::size_t plane = f_d.dim(2) * f_d.dim(3);
  for (std::size_t slice = 0; slice < f_d.dim(0) * f_d.dim(1); ++slice) {
    double* p = &out.data()[slice * plane];
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += p[i];
    mean /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) p[i] -= mean;
  }
  return out;
}

ScaleWeights predict_weights(const Tensor& f_d, const MgsaParams& params) {
  require_rank4(f_d, "predict_weights");
  params.validate();
  if (f_d.dim(1) != params.depth_channels()) {
    throw std::invalid_argument(fmt::format("depth features {} do not match psi head {}", shape_string(f_d.shape()),
                                            shape_string(params.psi_weights.shape())));
  }
  const Tensor logits = channel_project(mean_center(f_d), params.psi_weights, params.psi_bias);
  const Tensor w = softmax_over_axis(logits, 1);
  return {w.reshaped(Shape{f_d.dim(0), 3, 1, f_d.dim(2), f_d.dim(3)})};
}

Tensor fuse(const Tensor& f_r, const ScaleBranchSet& branches, const ScaleWeights& w) {
  require_rank4(f_r, "fuse");
  const Shape expected_w{f_r.dim(0), 3, 1, f_r.dim(2), f_r.dim(3)};
  if (w.weights.shape() != expected_w) {
    throw std::invalid_argument(fmt::format("scale weights {} do not match features {}",
                                            shape_string(w.weights.shape()), shape_string(f_r.shape())));
  }
  for (const Tensor* b : {&branches.near, &branches.mid, &branches.far}) {
    if (b->shape() != f_r.shape()) {
      throw std::invalid_argument(
          fmt::format("branch {} does not match features {}", shape_string(b->shape()), shape_string(f_r.shape())));
    }
  }
  const std::size_t batch = f_r.dim(0), channels = f_r.dim(1), plane = f_r.dim(2) * f_r.dim(3);
  Tensor out(f_r.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const double* w0 = &w.weights.data()[(b * 3 + 0) * plane];
    const double* w1 = &w.weights.data()[(b * 3 + 1) * plane];
    const double* w2 = &w.weights.data()[(b * 3 + 2) * plane];
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const double pre = w0[p] * branches.near[base + p] + w1[p] * branches.mid[base + p] +
                           w2[p] * branches.far[base + p];
        out[base + p] = f_r[base + p] + pre;
      }
    }
  }
  return out;
}

Tensor depth_features(const DepthMap& raw, std::size_t h, std::size_t w, std::size_t r) {
  const DepthMap pooled = align_depth(raw, h, w);
  const Gradients g = macro_gradient(pooled, r);
  Tensor out(Shape{1, 3, h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      out.at(0, 0, i, j) = pooled.at(i, j);
      out.at(0, 1, i, j) = std::hypot(g.gx.at(0, 0, i, j), g.gy.at(0, 0, i, j));
      out.at(0, 2, i, j) = raw.at(i * raw.height() / h, j * raw.width() / w);
    }
  }
  return out;
}

MgsaVars MgsaVars::on(Tape& tape, const MgsaParams& params, bool requires_grad) {
  params.validate();
  return {tape.leaf(params.mid_kernel.weights, requires_grad), tape.leaf(params.far_kernel.weights, requires_grad),
          tape.leaf(params.psi_weights, requires_grad), tape.leaf(params.psi_bias, requires_grad)};
}

Var mgsa_forward(Var f_r, const Tensor& f_d, const MgsaVars& vars) {
  Tape& tape = f_r.tape();
  const Var mid = ad::conv2d(f_r, vars.mid, 2, true);
  const Var far = ad::conv2d(f_r, vars.far, 4, true);
  const Var logits = ad::channel_project(tape.constant(mean_center(f_d)), vars.psi_weights, vars.psi_bias);
  const Var w = ad::softmax(logits, 1);
  Var pre = ad::mul(ad::select_channel(w, 0), f_r);
  pre = ad::add(pre, ad::mul(ad::select_channel(w, 1), mid));
  pre = ad::add(pre, ad::mul(ad::select_channel(w, 2), far));
  return ad::add(f_r, pre);
}

}  // namespace geoalign
