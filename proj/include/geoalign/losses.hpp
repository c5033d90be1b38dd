#pragma once

// Geometric ranking loss (roof vs. wall activations), soft-margin triplet and
// their weighted sum.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "geoalign/autodiff.hpp"
#include "geoalign/mgsf.hpp"
#include "geoalign/tensor.hpp"

namespace geoalign {

struct ActivationPartition {
  std::vector<std::uint8_t> in_p;  // mask > tau_high
  std::vector<std::uint8_t> in_n;  // mask < tau_low
  double tau_high = 0.0;
  double tau_low = 0.0;

  std::size_t p_count() const;
  std::size_t n_count() const;
};

struct LossWeights {
  double lambda_geo = 1.0;
  double xi = 0.5;
  double triplet_gamma = 10.0;
};

struct GacdReport {
  double v_roof = 0.0;
  double v_wall = 0.0;
  double loss = 0.0;
  double xi = 0.0;
  bool empty_partition = false;
};

ActivationPartition partition_by_quantile(std::span<const double> mask, double q_high = 0.7, double q_low = 0.3);
ActivationPartition partition_by_quantile(const GeoMask& mask, double q_high = 0.7, double q_low = 0.3);

/// Channel mean of |f|, Bx1xHxW.
Tensor activation_map(const Tensor& f);
Var activation_map(Var f);

struct SetMeans {
  double v_roof;
  double v_wall;
};

/// nullopt when either set is empty.
std::optional<SetMeans> aggregate(const Tensor& a_sem, const ActivationPartition& part);

double gacd_loss(double v_roof, double v_wall, double xi);

/// Partition, aggregate and hinge; an empty set yields a zero loss.
GacdReport gacd(const Tensor& a_sem, const ActivationPartition& part, double xi);

/// Taped hinge over a 1x1xHxW activation map. Returns a constant zero when
/// either set is empty.
Var gacd_loss(Var a_sem, const ActivationPartition& part, double xi);

/// log(1 + exp(gamma * (|a-p|^2 - |a-n|^2))) on unit vectors.
double soft_margin_triplet(std::span<const double> anchor, std::span<const double> positive,
                           std::span<const double> negative, double gamma);
Var soft_margin_triplet(Var anchor, Var positive, Var negative, double gamma);

double total_loss(double triplet, double gacd, const LossWeights& w);
Var total_loss(Var triplet, Var gacd, const LossWeights& w);

}  // namespace geoalign
