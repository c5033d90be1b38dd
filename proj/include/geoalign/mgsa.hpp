#pragma once

// Depth-guided fusion of three dilation scales with a residual connection.

#include <cstddef>
#include <cstdint>

#include "geoalign/autodiff.hpp"
#include "geoalign/mgsf.hpp"
#include "geoalign/ops.hpp"
#include "geoalign/tensor.hpp"

namespace geoalign {

struct MgsaParams {
  Kernel2D mid_kernel;  // depthwise 3x3, dilation 2
  Kernel2D far_kernel;  // depthwise 3x3, dilation 4
  Tensor psi_weights;   // 3 x depth_channels
  Tensor psi_bias;      // 3

  /// Delta kernels and a zero head: fusion starts as 2 * f_r.
  static MgsaParams identity(std::size_t channels, std::size_t depth_channels);
  /// Delta kernels plus N(0, kernel_sigma) taps, head entries N(0, head_sigma).
  static MgsaParams perturbed(std::size_t channels, std::size_t depth_channels, std::uint64_t seed,
                              double kernel_sigma, double head_sigma);

  std::size_t channels() const { return mid_kernel.weights.dim(0); }
  std::size_t depth_channels() const { return psi_weights.dim(1); }
  void validate() const;
};

struct ScaleBranchSet {
  Tensor near;
  Tensor mid;
  Tensor far;
};

struct ScaleWeights {
  Tensor weights;  // Bx3x1xHxW
};

ScaleBranchSet build_branches(const Tensor& f_r, const MgsaParams& params);
ScaleWeights predict_weights(const Tensor& f_d, const MgsaParams& params);
Tensor fuse(const Tensor& f_r, const ScaleBranchSet& branches, const ScaleWeights& w);

/// Per-image, per-channel removal of the spatial mean.
Tensor mean_center(const Tensor& f_d);

/// [pooled depth, |grad|, raw depth sampled at the cell origin], 1x3xhxw.
Tensor depth_features(const DepthMap& raw, std::size_t h, std::size_t w, std::size_t r = 2);

/// Tape leaves for the learnable MGSA parameters.
struct MgsaVars {
  Var mid;
  Var far;
  Var psi_weights;
  Var psi_bias;

  static MgsaVars on(Tape& tape, const MgsaParams& params, bool requires_grad = true);
};

/// build_branches + predict_weights + fuse on the tape; f_d carries no gradient.
Var mgsa_forward(Var f_r, const Tensor& f_d, const MgsaVars& vars);

}  // namespace geoalign
