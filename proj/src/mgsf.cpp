#include "geoalign/mgsf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "geoalign/ops.hpp"

namespace geoalign {

namespace {

void require_plane(const Tensor& t, const char* what) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 1) {
    throw std::invalid_argument(fmt::format("{} expects a 1x1xHxW raster, got {}", what, shape_string(t.shape())));
  }
}

double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (n == 0.0) throw std::invalid_argument("cannot normalize a zero vector");
  return {v[0] / n, v[1] / n, v[2] / n};
}

std::size_t nearest(const Vec3& p, const std::vector<Vec3>& centroids) {
  std::size_t best = 0;
  double best_d = squared_distance(p, centroids[0]);
  for (std::size_t c = 1; c < centroids.size(); ++c) {
    const double d = squared_distance(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

std::vector<Vec3> seed_plus_plus(std::span<const Vec3> points, std::size_t k, std::mt19937_64& rng) {
  std::vector<Vec3> centroids;
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
  centroids.push_back(points[pick(rng)]);
  std::vector<double> d2(points.size(), std::numeric_limits<double>::infinity());
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      d2[i] = std::min(d2[i], squared_distance(points[i], centroids.back()));
      total += d2[i];
    }
    if (total == 0.0) {
      centroids.push_back(points[pick(rng)]);
      continue;
    }
    const double target = std::uniform_real_distribution<double>(0.0, total)(rng);
    double acc = 0.0;
    std::size_t chosen = points.size() - 1;
    for (std::size_t i = 0; i < points.size(); ++i) {
      acc += d2[i];
      if (acc > target && d2[i] > 0.0) {
        chosen = i;
        break;
      }
    }
    centroids.push_back(points[chosen]);
  }
  return centroids;
}

KMeansResult lloyd(std::span<const Vec3> points, std::vector<Vec3> centroids, std::size_t max_iters) {
  const std::size_t k = centroids.size();
  KMeansResult r;
  r.assignment.assign(points.size(), k);
  for (std::size_t it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const std::size_t c = nearest(points[i], centroids);
      changed = changed || c != r.assignment[i];
      r.assignment[i] = c;
    }
    r.iterations = it + 1;
    if (!changed) break;
    std::vector<Vec3> sums(k, Vec3{0.0, 0.0, 0.0});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      auto& s = sums[r.assignment[i]];
      for (int d = 0; d < 3; ++d) s[d] += points[i][d];
      ++counts[r.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // an emptied cluster keeps its last centroid
      const double n = static_cast<double>(counts[c]);
      centroids[c] = {sums[c][0] / n, sums[c][1] / n, sums[c][2] / n};
    }
  }
  r.centroids = std::move(centroids);
  r.sizes.assign(k, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    ++r.sizes[r.assignment[i]];
    r.sse += squared_distance(points[i], r.centroids[r.assignment[i]]);
  }
  return r;
}

}  // namespace

DepthMap::DepthMap(std::size_t height, std::size_t width, std::vector<double> values)
    : DepthMap(Tensor(Shape{1, 1, height, width}, std::move(values))) {}

DepthMap::DepthMap(Tensor raster) : raster_(std::move(raster)) {
  require_plane(raster_, "DepthMap");
  if (raster_.empty()) throw std::invalid_argument("DepthMap must not be empty");
  if (!raster_.all_finite()) throw std::invalid_argument("DepthMap contains non-finite values");
}

std::size_t EdgePartition::edge_count() const {
  return static_cast<std::size_t>(std::count(is_edge.begin(), is_edge.end(), std::uint8_t{1}));
}

void MgsfConfig::validate() const {
  if (dilation_r < 1) throw std::invalid_argument("dilation must be >= 1");
  if (!(tau_grad_quantile >= 0.0 && tau_grad_quantile <= 1.0)) {
    throw std::invalid_argument(fmt::format("tau quantile {} outside [0, 1]", tau_grad_quantile));
  }
  if (kmeans_k < 2) throw std::invalid_argument("k-means needs k >= 2");
  if (kmeans_iters < 1) throw std::invalid_argument("k-means needs at least one iteration");
  if (kmeans_restarts < 1) throw std::invalid_argument("k-means needs at least one start");
}

DepthMap align_depth(const DepthMap& d, std::size_t h, std::size_t w) {
  if (h > d.height() || w > d.width()) {
    throw std::invalid_argument(
        fmt::format("align_depth only downsamples: {}x{} requested from {}x{}", h, w, d.height(), d.width()));
  }
  return DepthMap(adaptive_avg_pool(d.tensor(), h, w));
}

Gradients macro_gradient(const DepthMap& d_f, std::size_t r) {
  if (r < 1) throw std::invalid_argument("dilation must be >= 1");
  if (d_f.height() < 2 * r + 1 || d_f.width() < 2 * r + 1) {
    throw std::invalid_argument(fmt::format("raster {}x{} too small for dilation {} (needs {} per side)",
                                            d_f.height(), d_f.width(), r, 2 * r + 1));
  }
  const double s = 1.0 / (8.0 * static_cast<double>(r));
  const Kernel2D sobel_x{Tensor(Shape{1, 3, 3}, {-s, 0, s, -2 * s, 0, 2 * s, -s, 0, s}), r, false};
  const Kernel2D sobel_y{Tensor(Shape{1, 3, 3}, {-s, -2 * s, -s, 0, 0, 0, s, 2 * s, s}), r, false};
  return {conv2d(d_f.tensor(), sobel_x), conv2d(d_f.tensor(), sobel_y)};
}

NormalField compute_normals(const Tensor& gx, const Tensor& gy) {
  require_plane(gx, "compute_normals");
  if (gx.shape() != gy.shape()) {
    throw std::invalid_argument(
        fmt::format("gradient shapes differ: {} vs {}", shape_string(gx.shape()), shape_string(gy.shape())));
  }
  NormalField nf{gx.dim(2), gx.dim(3), {}};
  nf.normals.reserve(gx.size());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const double inv = 1.0 / std::sqrt(gx[i] * gx[i] + gy[i] * gy[i] + 1.0);
    nf.normals.push_back({-gx[i] * inv, -gy[i] * inv, inv});
  }
  return nf;
}

EdgePartition partition_edges(const Tensor& gx, const Tensor& gy, const MgsfConfig& cfg) {
  require_plane(gx, "partition_edges");
  if (gx.shape() != gy.shape()) {
    throw std::invalid_argument(
        fmt::format("gradient shapes differ: {} vs {}", shape_string(gx.shape()), shape_string(gy.shape())));
  }
  std::vector<double> magnitude(gx.size());
  for (std::size_t i = 0; i < gx.size(); ++i) magnitude[i] = std::hypot(gx[i], gy[i]);
  EdgePartition part{gx.dim(2), gx.dim(3), lower_quantile(magnitude, cfg.tau_grad_quantile), {}};
  part.is_edge.resize(magnitude.size());
  for (std::size_t i = 0; i < magnitude.size(); ++i) part.is_edge[i] = magnitude[i] > part.tau_grad ? 1 : 0;
  return part;
}

KMeansResult kmeans(std::span<const Vec3> points, std::size_t k, std::uint64_t seed, std::size_t max_iters,
                    std::size_t restarts) {
  if (k < 1 || points.size() < k) {
    throw std::invalid_argument(fmt::format("k-means needs at least k={} points, got {}", k, points.size()));
  }
  std::mt19937_64 rng(seed);
  KMeansResult best;
  for (std::size_t run = 0; run < std::max<std::size_t>(restarts, 1); ++run) {
    KMeansResult r = lloyd(points, seed_plus_plus(points, k, rng), max_iters);
    if (run == 0 || r.sse < best.sse) best = std::move(r);
  }
  return best;
}

std::size_t dominant_cluster(const std::vector<Vec3>& centroids, const std::vector<std::size_t>& sizes) {
  std::size_t best = 0;
  double best_z = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double z = sizes[c] > 0 ? normalized(centroids[c])[2] : -std::numeric_limits<double>::infinity();
    if (sizes[c] > sizes[best] || (sizes[c] == sizes[best] && z > best_z)) {
      best = c;
      best_z = z;
    }
  }
  return best;
}

Vec3 dominant_normal(const NormalField& nf, const EdgePartition& part, const MgsfConfig& cfg) {
  cfg.validate();
  std::vector<Vec3> flat;
  for (std::size_t i = 0; i < nf.normals.size(); ++i) {
    if (!part.is_edge[i]) flat.push_back(nf.normals[i]);
  }
  if (flat.empty()) return {0.0, 0.0, 1.0};
  if (flat.size() < cfg.kmeans_k) {
    Vec3 mean{0.0, 0.0, 0.0};
    for (const Vec3& n : flat) {
      for (int d = 0; d < 3; ++d) mean[d] += n[d];
    }
    return normalized(mean);
  }
  const KMeansResult r = kmeans(flat, cfg.kmeans_k, cfg.kmeans_seed, cfg.kmeans_iters, cfg.kmeans_restarts);
  return normalized(r.centroids[dominant_cluster(r.centroids, r.sizes)]);
}

Tensor geo_consistency(const NormalField& nf, const Vec3& n_dom) {
  Tensor c(Shape{1, 1, nf.height, nf.width});
  for (std::size_t i = 0; i < nf.normals.size(); ++i) {
    const Vec3& n = nf.normals[i];
    c[i] = n[0] * n_dom[0] + n[1] * n_dom[1] + n[2] * n_dom[2];
  }
  return c;
}

Tensor adaptive_gate(const Tensor& c_geo, const GateParams& gp) {
  Tensor m = Tensor::like(c_geo);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = sigmoid(gp.alpha * c_geo[i] + gp.beta);
  return m;
}

Var adaptive_gate(Var c_geo, Var alpha, Var beta) { return ad::sigmoid(ad::add(ad::mul(c_geo, alpha), beta)); }

GeoMask rectify_edges(const Tensor& m_raw, const EdgePartition& part) {
  if (m_raw.size() != part.is_edge.size()) {
    throw std::invalid_argument(fmt::format("mask {} does not match a {}x{} partition", shape_string(m_raw.shape()),
                                            part.height, part.width));
  }
  GeoMask out{m_raw, part.is_edge};
  for (std::size_t i = 0; i < out.mask.size(); ++i) {
    if (part.is_edge[i]) out.mask[i] = 0.5;
  }
  return out;
}

Var rectify_edges(Var m_raw, const EdgePartition& part) {
  if (m_raw.value().size() != part.is_edge.size()) {
    throw std::invalid_argument(fmt::format("mask {} does not match a {}x{} partition",
                                            shape_string(m_raw.shape()), part.height, part.width));
  }
  Tensor keep = Tensor::like(m_raw.value());
  Tensor pin = Tensor::like(m_raw.value());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    keep[i] = part.is_edge[i] ? 0.0 : 1.0;
    pin[i] = part.is_edge[i] ? 0.5 : 0.0;
  }
  Tape& tape = m_raw.tape();
  return ad::add(ad::mul(m_raw, tape.constant(std::move(keep))), tape.constant(std::move(pin)));
}

Tensor modulate(const Tensor& f_u, const GeoMask& mask) {
  if (f_u.rank() != 4 || f_u.dim(2) != mask.mask.dim(2) || f_u.dim(3) != mask.mask.dim(3)) {
    throw std::invalid_argument(fmt::format("features {} do not match mask {}", shape_string(f_u.shape()),
                                            shape_string(mask.mask.shape())));
  }
  Tensor out(f_u.shape());
  const std::size_t plane = f_u.dim(2) * f_u.dim(3);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f_u[i] * (1.0 + mask.mask[i % plane]);
  return out;
}

Var modulate(Var f_u, Var mask) { return ad::add(f_u, ad::mul(f_u, mask)); }

MgsfGeometry analyze_depth(const DepthMap& d_raw, std::size_t h, std::size_t w, const MgsfConfig& cfg) {
  cfg.validate();
  MgsfGeometry g;
  g.aligned = align_depth(d_raw, h, w);
  g.gradients = macro_gradient(g.aligned, cfg.dilation_r);
  g.normals = compute_normals(g.gradients.gx, g.gradients.gy);
  g.partition = partition_edges(g.gradients.gx, g.gradients.gy, cfg);
  g.n_dom = dominant_normal(g.normals, g.partition, cfg);
  g.c_geo = geo_consistency(g.normals, g.n_dom);
  return g;
}

MgsfResult mgsf_forward(const Tensor& f_u, const DepthMap& d_raw, const GateParams& gp, const MgsfConfig& cfg) {
  if (f_u.rank() != 4) {
    throw std::invalid_argument(fmt::format("mgsf expects BxCxHxW features, got {}", shape_string(f_u.shape())));
  }
  MgsfResult r;
  r.geometry = analyze_depth(d_raw, f_u.dim(2), f_u.dim(3), cfg);
  r.mask = rectify_edges(adaptive_gate(r.geometry.c_geo, gp), r.geometry.partition);
  r.features = modulate(f_u, r.mask);
  return r;
}

}  // namespace geoalign
