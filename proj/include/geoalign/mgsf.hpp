#pragma once

// Depth-driven geometric attention: dilated-Sobel gradients, surface normals,
// dominant-plane clustering and the gated, edge-neutral mask.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "geoalign/autodiff.hpp"
#include "geoalign/tensor.hpp"

namespace geoalign {

using Vec3 = std::array<double, 3>;

/// Single-view depth raster, stored as a 1x1xHxW tensor. Values must be finite.
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(std::size_t height, std::size_t width, std::vector<double> values);
  explicit DepthMap(Tensor raster);

  std::size_t height() const { return raster_.dim(2); }
  std::size_t width() const { return raster_.dim(3); }
  double at(std::size_t i, std::size_t j) const { return raster_.at(0, 0, i, j); }
  const Tensor& tensor() const { return raster_; }

 private:
  Tensor raster_;
};

struct NormalField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Vec3> normals;  // row-major

  const Vec3& at(std::size_t i, std::size_t j) const { return normals[i * width + j]; }
};

struct EdgePartition {
  std::size_t height = 0;
  std::size_t width = 0;
  double tau_grad = 0.0;
  std::vector<std::uint8_t> is_edge;  // 1 for the ambiguous set, 0 for the flat candidates

  std::size_t edge_count() const;
  std::size_t flat_count() const { return is_edge.size() - edge_count(); }
};

struct GeoMask {
  Tensor mask;                        // 1x1xHxW, every value in (0, 1)
  std::vector<std::uint8_t> is_edge;  // pixels pinned to exactly 0.5
};

struct GateParams {
  double alpha = 5.0;
  double beta = -2.5;
};

struct MgsfConfig {
  std::size_t dilation_r = 2;
  double tau_grad_quantile = 0.85;
  std::size_t kmeans_k = 3;
  std::uint64_t kmeans_seed = 0;
  std::size_t kmeans_iters = 50;
  /// Independent k-means++ starts; the lowest-SSE run is kept.
  std::size_t kmeans_restarts = 4;

  void validate() const;
};

struct Gradients {
  Tensor gx;  // 1x1xHxW
  Tensor gy;
};

DepthMap align_depth(const DepthMap& d, std::size_t h, std::size_t w);

/// Sobel pair with taps spaced r apart, scaled by 1/(8r) so a unit ramp gives 1.
Gradients macro_gradient(const DepthMap& d_f, std::size_t r);

NormalField compute_normals(const Tensor& gx, const Tensor& gy);

EdgePartition partition_edges(const Tensor& gx, const Tensor& gy, const MgsfConfig& cfg);

struct KMeansResult {
  std::vector<Vec3> centroids;
  std::vector<std::size_t> assignment;
  std::vector<std::size_t> sizes;
  double sse = 0.0;
  std::size_t iterations = 0;
};

KMeansResult kmeans(std::span<const Vec3> points, std::size_t k, std::uint64_t seed, std::size_t max_iters,
                    std::size_t restarts);

/// Index of the most populous cluster; ties go to the larger normalized
/// centroid z, then the lower index.
std::size_t dominant_cluster(const std::vector<Vec3>& centroids, const std::vector<std::size_t>& sizes);

Vec3 dominant_normal(const NormalField& nf, const EdgePartition& part, const MgsfConfig& cfg);

/// Per-pixel n . n_dom as a 1x1xHxW tensor.
Tensor geo_consistency(const NormalField& nf, const Vec3& n_dom);

Tensor adaptive_gate(const Tensor& c_geo, const GateParams& gp);
/// Taped gate; alpha and beta are 1x1x1x1 leaves.
Var adaptive_gate(Var c_geo, Var alpha, Var beta);

GeoMask rectify_edges(const Tensor& m_raw, const EdgePartition& part);
/// Taped edge pinning: returns m_raw off the edge set and the constant 0.5 on it.
Var rectify_edges(Var m_raw, const EdgePartition& part);

/// f_u * (1 + mask), the mask broadcast over batch and channels.
Tensor modulate(const Tensor& f_u, const GeoMask& mask);
Var modulate(Var f_u, Var mask);

/// Everything the mask needs that carries no gradient.
struct MgsfGeometry {
  DepthMap aligned;
  Gradients gradients;
  NormalField normals;
  EdgePartition partition;
  Vec3 n_dom{0.0, 0.0, 1.0};
  Tensor c_geo;
};

MgsfGeometry analyze_depth(const DepthMap& d_raw, std::size_t h, std::size_t w, const MgsfConfig& cfg);

struct MgsfResult {
  Tensor features;
  GeoMask mask;
  MgsfGeometry geometry;
};

MgsfResult mgsf_forward(const Tensor& f_u, const DepthMap& d_raw, const GateParams& gp, const MgsfConfig& cfg);

}  // namespace geoalign
