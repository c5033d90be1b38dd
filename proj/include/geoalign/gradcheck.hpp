#pragma once

// Central finite differences against taped gradients.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "geoalign/autodiff.hpp"
#include "geoalign/tensor.hpp"

namespace geoalign {

/// |a - n| / max(|a|, |n|, floor). The floor keeps round-off on vanishing
/// gradients from reading as a large relative error.
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct GradCheckResult {
  std::string name;
  std::size_t probes = 0;  // coordinates and directions compared
  double max_rel_error = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Builds the loss on a fresh tape from leaves holding `params`.
using LossFn = std::function<Var(Tape& tape, std::span<const Var> leaves)>;

struct ProbePlan {
  /// Coordinates checked per parameter tensor; 0 checks every coordinate.
  std::size_t coords_per_tensor = 0;
  /// Random unit directions per tensor, compared as directional derivatives.
  std::size_t directions_per_tensor = 0;
  std::uint64_t seed = 0;
};

GradCheckResult check_gradients(const std::string& name, const std::vector<Tensor>& params, const LossFn& loss,
                                double eps, const ProbePlan& plan = {});

struct GradCheckSuiteConfig {
  std::uint64_t seed = 0;
  double eps = 1e-5;
  std::size_t coords_per_tensor = 4;
  std::size_t directions_per_tensor = 1;
};

/// Every learnable group (encoder, MGSA kernels, psi head, alpha, beta)
/// against the GACD, triplet and total losses on one seeded scene triple.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckSuiteConfig& cfg);

}  // namespace geoalign
