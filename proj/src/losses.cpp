#include "geoalign/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "geoalign/ops.hpp"

namespace geoalign {

namespace {

void require_unit(std::span<const double> v, const char* which) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (std::abs(std::sqrt(sq) - 1.0) > 1e-9) {
    throw std::invalid_argument(fmt::format("{} embedding has norm {}, expected 1", which, std::sqrt(sq)));
  }
}

Tensor indicator(const std::vector<std::uint8_t>& set, const Shape& shape) {
  Tensor t(shape);
  for (std::size_t i = 0; i < set.size(); ++i) t[i] = set[i] ? 1.0 : 0.0;
  return t;
}

void require_single_map(const Tensor& a_sem, const ActivationPartition& part) {
  if (a_sem.size() != part.in_p.size()) {
    throw std::invalid_argument(fmt::format("activation map {} does not match a partition of {} pixels",
                                            shape_string(a_sem.shape()), part.in_p.size()));
  }
}

}  // namespace

std::size_t ActivationPartition::p_count() const {
  return static_cast<std::size_t>(std::count(in_p.begin(), in_p.end(), std::uint8_t{1}));
}

std::size_t ActivationPartition::n_count() const {
  return static_cast<std::size_t>(std::count(in_n.begin(), in_n.end(), std::uint8_t{1}));
}

ActivationPartition partition_by_quantile(std::span<const double> mask, double q_high, double q_low) {
  if (!(0.0 < q_low && q_low <= q_high && q_high < 1.0)) {
    throw std::invalid_argument(fmt::format("need 0 < q_low <= q_high < 1, got {} and {}", q_low, q_high));
  }
  ActivationPartition part;
  part.tau_high = lower_quantile(mask, q_high);
  part.tau_low = lower_quantile(mask, q_low);
  part.in_p.resize(mask.size());
  part.in_n.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    part.in_p[i] = mask[i] > part.tau_high ? 1 : 0;
    part.in_n[i] = mask[i] < part.tau_low ? 1 : 0;
  }
  return part;
}

ActivationPartition partition_by_quantile(const GeoMask& mask, double q_high, double q_low) {
  return partition_by_quantile(mask.mask.data(), q_high, q_low);
}

Tensor activation_map(const Tensor& f) {
  if (f.rank() != 4) {
    throw std::invalid_argument(fmt::format("activation_map expects BxCxHxW, got {}", shape_string(f.shape())));
  }
  const std::size_t batch = f.dim(0), channels = f.dim(1), plane = f.dim(2) * f.dim(3);
  Tensor a(Shape{batch, 1, f.dim(2), f.dim(3)});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) a[b * plane + p] += std::abs(f[(b * channels + c) * plane + p]);
    }
    for (std::size_t p = 0; p < plane; ++p) a[b * plane + p] /= static_cast<double>(channels);
  }
  return a;
}

Var activation_map(Var f) { return ad::channel_mean(ad::abs(f)); }

std::optional<SetMeans> aggregate(const Tensor& a_sem, const ActivationPartition& part) {
  require_single_map(a_sem, part);
  double roof = 0.0, wall = 0.0;
  std::size_t np = 0, nn = 0;
  for (std::size_t i = 0; i < a_sem.size(); ++i) {
    if (part.in_p[i]) {
      roof += a_sem[i];
      ++np;
    }
    if (part.in_n[i]) {
      wall += a_sem[i];
      ++nn;
    }
  }
  if (np == 0 || nn == 0) return std::nullopt;
  return SetMeans{roof / static_cast<double>(np), wall / static_cast<double>(nn)};
}

double gacd_loss(double v_roof, double v_wall, double xi) {
  if (xi < 0.0) throw std::invalid_argument(fmt::format("margin must be >= 0, got {}", xi));
  return std::max(0.0, xi + v_wall - v_roof);
}

GacdReport gacd(const Tensor& a_sem, const ActivationPartition& part, double xi) {
  GacdReport r;
  r.xi = xi;
  const auto means = aggregate(a_sem, part);
  if (!means) {
    r.empty_partition = true;
    return r;
  }
  r.v_roof = means->v_roof;
  r.v_wall = means->v_wall;
  r.loss = gacd_loss(r.v_roof, r.v_wall, xi);
  return r;
}

Var gacd_loss(Var a_sem, const ActivationPartition& part, double xi) {
  require_single_map(a_sem.value(), part);
  if (xi < 0.0) throw std::invalid_argument(fmt::format("margin must be >= 0, got {}", xi));
  if (part.p_count() == 0 || part.n_count() == 0) return a_sem.tape().constant(Tensor::scalar(0.0));
  const Var roof = ad::masked_mean(a_sem, indicator(part.in_p, a_sem.shape()));
  const Var wall = ad::masked_mean(a_sem, indicator(part.in_n, a_sem.shape()));
  return ad::relu(ad::add(ad::sub(wall, roof), xi));
}

double soft_margin_triplet(std::span<const double> anchor, std::span<const double> positive,
                           std::span<const double> negative, double gamma) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw std::invalid_argument(fmt::format("embedding sizes differ: {}, {}, {}", anchor.size(), positive.size(),
                                            negative.size()));
  }
  if (!(gamma > 0.0)) throw std::invalid_argument(fmt::format("gamma must be > 0, got {}", gamma));
  require_unit(anchor, "anchor");
  require_unit(positive, "positive");
  require_unit(negative, "negative");
  double d_pos = 0.0, d_neg = 0.0;
  for (std::size_t i = 0; i < anchor.size(); ++i) {
    d_pos += (anchor[i] - positive[i]) * (anchor[i] - positive[i]);
    d_neg += (anchor[i] - negative[i]) * (anchor[i] - negative[i]);
  }
  return log1p_exp(gamma * (d_pos - d_neg));
}

Var soft_margin_triplet(Var anchor, Var positive, Var negative, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument(fmt::format("gamma must be > 0, got {}", gamma));
  require_unit(anchor.value().data(), "anchor");
  require_unit(positive.value().data(), "positive");
  require_unit(negative.value().data(), "negative");
  const Var dp = ad::sub(anchor, positive);
  const Var dn = ad::sub(anchor, negative);
  const Var gap = ad::sub(ad::sum(ad::mul(dp, dp)), ad::sum(ad::mul(dn, dn)));
  return ad::log1p_exp(ad::scale(gap, gamma));
}

double total_loss(double triplet, double gacd, const LossWeights& w) {
  if (w.lambda_geo == 0.0) return triplet;
  return triplet + w.lambda_geo * gacd;
}

Var total_loss(Var triplet, Var gacd, const LossWeights& w) {
  if (w.lambda_geo == 0.0) return triplet;
  return ad::add(triplet, ad::scale(gacd, w.lambda_geo));
}

}  // namespace geoalign
