#include "geoalign/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace geoalign {

namespace {

bool overlaps(const Box& a, const Box& b, long gap) {
  return !(a.x + a.w + gap <= b.x || b.x + b.w + gap <= a.x || a.y + a.h + gap <= b.y || b.y + b.h + gap <= a.y);
}

struct Canvas {
  std::size_t height;
  std::size_t width;
  std::vector<double> depth;
  std::vector<Label> labels;

  bool inside(long i, long j) const {
    return i >= 0 && j >= 0 && i < static_cast<long>(height) && j < static_cast<long>(width);
  }
  std::size_t index(long i, long j) const { return static_cast<std::size_t>(i) * width + static_cast<std::size_t>(j); }
};

Canvas base_canvas(const SceneSpec& spec) {
  Canvas c{spec.height, spec.width, std::vector<double>(spec.height * spec.width, spec.ground_depth),
           std::vector<Label>(spec.height * spec.width, Label::ground)};
  for (const Box& b : spec.boxes) {
    for (long i = b.y - 1; i <= b.y + b.h; ++i) {
      for (long j = b.x - 1; j <= b.x + b.w; ++j) {
        const bool ring = i < b.y || i >= b.y + b.h || j < b.x || j >= b.x + b.w;
        if (ring && c.inside(i, j) && c.labels[c.index(i, j)] == Label::ground) c.labels[c.index(i, j)] = Label::edge;
      }
    }
  }
  return c;
}

void draw_roofs(const SceneSpec& spec, Canvas& c) {
  for (const Box& b : spec.boxes) {
    for (long i = b.y; i < b.y + b.h; ++i) {
      for (long j = b.x; j < b.x + b.w; ++j) {
        c.depth[c.index(i, j)] = spec.ground_depth - b.height;
        c.labels[c.index(i, j)] = Label::roof;
      }
    }
  }
}

void add_noise(const SceneSpec& spec, Canvas& c) {
  if (spec.noise_sigma == 0.0) return;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  for (double& d : c.depth) d += noise(rng);
}

Render finish(Canvas c) {
  return {DepthMap(c.height, c.width, std::move(c.depth)), LabelMap{c.height, c.width, std::move(c.labels)}};
}

}  // namespace

void SceneSpec::validate() const {
  if (height == 0 || width == 0) throw std::invalid_argument("scene raster must be non-empty");
  if (!std::isfinite(ground_depth) || !std::isfinite(slope_x) || !std::isfinite(slope_y)) {
    throw std::invalid_argument("scene ground depth and slope must be finite");
  }
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument(fmt::format("noise sigma {} must be >= 0", noise_sigma));
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const Box& b = boxes[k];
    if (b.w < 1 || b.h < 1) throw std::invalid_argument(fmt::format("box {} has an empty footprint", k));
    if (!(b.height > 0.0) || !std::isfinite(b.height)) {
      throw std::invalid_argument(fmt::format("box {} height {} must be positive", k, b.height));
    }
    if (b.x < 0 || b.y < 0 || b.x + b.w > static_cast<long>(width) || b.y + b.h > static_cast<long>(height)) {
      throw std::invalid_argument(fmt::format("box {} ({} {} {} {}) leaves the {}x{} raster", k, b.x, b.y, b.w, b.h,
                                              height, width));
    }
    for (std::size_t m = 0; m < k; ++m) {
      if (overlaps(boxes[m], b, 0)) throw std::invalid_argument(fmt::format("boxes {} and {} overlap", m, k));
    }
  }
}

std::size_t LabelMap::count(Label l) const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l)); }

Render render_ortho(const SceneSpec& spec) {
  spec.validate();
  Canvas c = base_canvas(spec);
  draw_roofs(spec, c);
  add_noise(spec, c);
  return finish(std::move(c));
}

std::size_t facade_width(double box_height, double slope_x, double slope_y) {
  const double s = std::hypot(slope_x, slope_y);
  if (s == 0.0) return 0;
  return static_cast<std::size_t>(std::max(1.0, std::round(0.03 * box_height / s)));
}

Render render_oblique(const SceneSpec& spec) {
  spec.validate();
  if (spec.slope_x == 0.0 && spec.slope_y == 0.0) return render_ortho(spec);
  Canvas c = base_canvas(spec);
  for (const Box& b : spec.boxes) {
    const auto wf = static_cast<long>(facade_width(b.height, spec.slope_x, spec.slope_y));
    // Ramp from just below roof depth down to just above ground depth.
    auto ramp = [&](long t) {
      return spec.ground_depth - b.height + b.height * static_cast<double>(t + 1) / static_cast<double>(wf + 1);
    };
    if (spec.slope_x != 0.0) {
      for (long t = 0; t < wf; ++t) {
        const long j = spec.slope_x > 0.0 ? b.x + b.w + t : b.x - 1 - t;
        for (long i = b.y; i < b.y + b.h; ++i) {
          if (!c.inside(i, j)) continue;
          c.depth[c.index(i, j)] = ramp(t);
          c.labels[c.index(i, j)] = Label::facade;
        }
      }
    }
    if (spec.slope_y != 0.0) {
      for (long t = 0; t < wf; ++t) {
        const long i = spec.slope_y > 0.0 ? b.y + b.h + t : b.y - 1 - t;
        for (long j = b.x; j < b.x + b.w; ++j) {
          if (!c.inside(i, j)) continue;
          c.depth[c.index(i, j)] = ramp(t);
          c.labels[c.index(i, j)] = Label::facade;
        }
      }
    }
  }
  draw_roofs(spec, c);
  for (std::size_t i = 0; i < c.height; ++i) {
    for (std::size_t j = 0; j < c.width; ++j) {
      c.depth[i * c.width + j] += spec.slope_x * static_cast<double>(j) + spec.slope_y * static_cast<double>(i);
    }
  }
  add_noise(spec, c);
  return finish(std::move(c));
}

SceneFamily SceneFamily::facade_heavy() {
  SceneFamily f;
  f.max_boxes = 4;
  f.min_tilt = 0.04;
  f.max_tilt = 0.08;
  return f;
}

SceneFamily SceneFamily::easy() {
  SceneFamily f;
  f.min_boxes = 1;
  f.max_boxes = 2;
  f.noise_sigma = 0.0;
  return f;
}

SceneSpec random_scene(std::uint64_t seed, const SceneFamily& family) {
  std::mt19937_64 rng(seed);
  auto uniform_long = [&](long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(rng); };
  SceneSpec spec;
  spec.ground_depth = family.ground_depth;
  spec.height = spec.width = family.raster;
  spec.noise_sigma = family.noise_sigma;
  spec.seed = seed;
  const auto raster = static_cast<long>(family.raster);
  const auto target = static_cast<std::size_t>(
      uniform_long(static_cast<long>(family.min_boxes), static_cast<long>(family.max_boxes)));
  for (int tries = 0; spec.boxes.size() < target && tries < 1000; ++tries) {
    Box b;
    b.w = uniform_long(family.min_footprint, family.max_footprint);
    b.h = uniform_long(family.min_footprint, family.max_footprint);
    b.x = uniform_long(family.margin, raster - b.w - family.margin - 1);
    b.y = uniform_long(family.margin, raster - b.h - family.margin - 1);
    const bool clear = std::none_of(spec.boxes.begin(), spec.boxes.end(),
                                    [&](const Box& o) { return overlaps(o, b, family.gap); });
    if (clear) {
      b.height = std::uniform_real_distribution<double>(family.min_height, family.max_height)(rng);
      spec.boxes.push_back(b);
    }
  }
  spec.slope_x = std::uniform_real_distribution<double>(family.min_tilt, family.max_tilt)(rng);
  return spec;
}

LabelMap pool_labels(const LabelMap& labels, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || h > labels.height || w > labels.width) {
    throw std::invalid_argument(
        fmt::format("cannot pool {}x{} labels to {}x{}", labels.height, labels.width, h, w));
  }
  LabelMap out{h, w, std::vector<Label>(h * w, Label::ground)};
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t r0 = i * labels.height / h, r1 = (i + 1) * labels.height / h;
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t c0 = j * labels.width / w, c1 = (j + 1) * labels.width / w;
      std::array<std::size_t, 4> votes{};
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t q = c0; q < c1; ++q) ++votes[static_cast<std::size_t>(labels.at(r, q))];
      }
      // max_element returns the first maximum, so ties go to the lower id.
      out.labels[i * w + j] = static_cast<Label>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  }
  return out;
}

std::optional<MaskQuality> mask_quality(const Tensor& mask, const LabelMap& labels) {
  if (mask.rank() != 4 || mask.dim(0) != 1 || mask.dim(1) != 1) {
    throw std::invalid_argument(fmt::format("mask must be 1x1xHxW, got {}", shape_string(mask.shape())));
  }
  const std::size_t h = mask.dim(2), w = mask.dim(3);
  const LabelMap pooled = (labels.height == h && labels.width == w) ? labels : pool_labels(labels, h, w);
  MaskQuality q;
  std::size_t horizontal_hits = 0, facade_hits = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double m = mask[i];
    switch (pooled.labels[i]) {
      case Label::roof:
        ++q.roof_pixels;
        q.roof_mean += m;
        horizontal_hits += m > 0.5;
        break;
      case Label::ground:
        ++q.ground_pixels;
        q.ground_mean += m;
        horizontal_hits += m > 0.5;
        break;
      case Label::facade:
        ++q.facade_pixels;
        q.facade_mean += m;
        facade_hits += m <= 0.5;
        break;
      case Label::edge:
        break;
    }
  }
  const std::size_t horizontal = q.roof_pixels + q.ground_pixels;
  if (q.facade_pixels == 0 || horizontal == 0) return std::nullopt;
  if (q.roof_pixels) q.roof_mean /= static_cast<double>(q.roof_pixels);
  if (q.ground_pixels) q.ground_mean /= static_cast<double>(q.ground_pixels);
  q.facade_mean /= static_cast<double>(q.facade_pixels);
  q.horizontal_recall = static_cast<double>(horizontal_hits) / static_cast<double>(horizontal);
  q.facade_recall = static_cast<double>(facade_hits) / static_cast<double>(q.facade_pixels);
  q.balanced_accuracy = 0.5 * (q.horizontal_recall + q.facade_recall);
  return q;
}

}  // namespace geoalign
