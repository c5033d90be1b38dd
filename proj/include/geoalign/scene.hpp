#pragma once

// Box-city depth scenes with per-pixel ground truth, rendered straight down
// (satellite-like) or with a global tilt plus facade ramps (UAV-like).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "geoalign/mgsf.hpp"
#include "geoalign/tensor.hpp"

namespace geoalign {

enum class Label : std::uint8_t { ground = 0, roof = 1, facade = 2, edge = 3 };

struct Box {
  long x = 0;  // column of the top-left footprint pixel
  long y = 0;  // row of the top-left footprint pixel
  long w = 0;
  long h = 0;
  double height = 0.0;
};

struct SceneSpec {
  double ground_depth = 100.0;
  std::vector<Box> boxes;
  double slope_x = 0.0;
  double slope_y = 0.0;
  std::size_t height = 128;
  std::size_t width = 128;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending box(es).
  void validate() const;
};

struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Label> labels;  // row-major

  Label at(std::size_t i, std::size_t j) const { return labels[i * width + j]; }
  std::size_t count(Label l) const;
};

struct Render {
  DepthMap depth;
  LabelMap labels;
};

Render render_ortho(const SceneSpec& spec);
Render render_oblique(const SceneSpec& spec);

/// Facade strip width in raster pixels for a box of the given height.
std::size_t facade_width(double box_height, double slope_x, double slope_y);

/// Ranges the procedural generator samples from.
struct SceneFamily {
  std::size_t raster = 128;
  double ground_depth = 100.0;
  std::size_t min_boxes = 2;
  std::size_t max_boxes = 3;
  long min_footprint = 12;
  long max_footprint = 20;
  double min_height = 30.0;
  double max_height = 60.0;
  double min_tilt = 0.06;
  double max_tilt = 0.12;
  long gap = 6;
  long margin = 2;
  double noise_sigma = 0.02;

  /// Tall, tilted boxes; the default mask-evaluation scenes.
  static SceneFamily box_city() { return {}; }
  /// Up to four boxes and a shallower tilt, so facade strips are wider.
  static SceneFamily facade_heavy();
  /// One or two boxes, no noise.
  static SceneFamily easy();
};

SceneSpec random_scene(std::uint64_t seed, const SceneFamily& family = SceneFamily::box_city());

/// Majority vote per pooling bin, ties to the lower class id. Bins won by
/// EDGE stay EDGE and are ignored by mask_quality.
LabelMap pool_labels(const LabelMap& labels, std::size_t h, std::size_t w);

struct MaskQuality {
  double balanced_accuracy = 0.0;
  double horizontal_recall = 0.0;  // share of roof/ground pixels with mask > 0.5
  double facade_recall = 0.0;      // share of facade pixels with mask <= 0.5
  double roof_mean = 0.0;
  double ground_mean = 0.0;
  double facade_mean = 0.0;
  std::size_t roof_pixels = 0;
  std::size_t ground_pixels = 0;
  std::size_t facade_pixels = 0;
};

/// Labels larger than the mask are pooled first. nullopt when no facade
/// pixel survives pooling (not evaluable).
std::optional<MaskQuality> mask_quality(const Tensor& mask, const LabelMap& labels);

}  // namespace geoalign
