#pragma once

// Independent reference implementations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "geoalign/mgsf.hpp"
#include "test_util.hpp"

namespace oracle {

using geoalign::DepthMap;
using geoalign::EdgePartition;
using geoalign::NormalField;
using geoalign::Vec3;
using testutil::random_size;

inline DepthMap ramp(std::size_t h, std::size_t w, double a, double b, double c = 0.0) {
  std::vector<double> v(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) v[i * w + j] = a * static_cast<double>(j) + b * static_cast<double>(i) + c;
  }
  return DepthMap(h, w, std::move(v));
}

inline EdgePartition no_edges(std::size_t h, std::size_t w) { return {h, w, 0.0, std::vector<std::uint8_t>(h * w, 0)}; }

inline Vec3 unit(Vec3 v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

inline NormalField field_of(const std::vector<Vec3>& normals) {
  return NormalField{1, normals.size(), normals};
}

// Exhaustive minimum-SSE partition into exactly k non-empty clusters; the
// dominant cluster follows the same size / z / index rule.
inline Vec3 brute_force_dominant(const std::vector<Vec3>& pts, std::size_t k) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> assign(n, 0), best_assign;
  double best_sse = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<Vec3> sum(k, Vec3{0, 0, 0});
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[assign[i]];
      for (int d = 0; d < 3; ++d) sum[assign[i]][d] += pts[i][d];
    }
    if (std::all_of(count.begin(), count.end(), [](std::size_t c) { return c > 0; })) {
      double sse = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = assign[i];
        for (int d = 0; d < 3; ++d) {
          const double diff = pts[i][d] - sum[c][d] / static_cast<double>(count[c]);
          sse += diff * diff;
        }
      }
      if (sse < best_sse - 1e-12) {
        best_sse = sse;
        best_assign = assign;
      }
    }
    std::size_t pos = 0;
    while (pos < n && ++assign[pos] == k) assign[pos++] = 0;
    if (pos == n) break;
  }
  std::vector<Vec3> sum(k, Vec3{0, 0, 0});
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    ++count[best_assign[i]];
    for (int d = 0; d < 3; ++d) sum[best_assign[i]][d] += pts[i][d];
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < k; ++c) {
    if (count[c] > count[best] || (count[c] == count[best] && unit(sum[c])[2] > unit(sum[best])[2])) best = c;
  }
  return unit(sum[best]);
}

// A few jittered normal directions with distinct population sizes.
inline std::vector<Vec3> clustered_normals(std::mt19937_64& rng, std::size_t k) {
  std::normal_distribution<double> jitter(0.0, 0.03);
  std::uniform_real_distribution<double> tilt(-1.5, 1.5);
  std::vector<std::size_t> sizes;
  std::size_t total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t s;
    do {
      s = random_size(rng, 1, k == 2 ? 6 : 5);
    } while (std::find(sizes.begin(), sizes.end(), s) != sizes.end());
    sizes.push_back(s);
    total += s;
  }
  std::vector<Vec3> pts;
  pts.reserve(total);
  for (std::size_t c = 0; c < k; ++c) {
    const Vec3 centre = unit({tilt(rng) * static_cast<double>(c), tilt(rng) * static_cast<double>(c), 1.0});
    for (std::size_t i = 0; i < sizes[c]; ++i) {
      pts.push_back(unit({centre[0] + jitter(rng), centre[1] + jitter(rng), centre[2] + jitter(rng)}));
    }
  }
  std::shuffle(pts.begin(), pts.end(), rng);
  return pts;
}

}  // namespace oracle
