#pragma once

// Frozen toy encoder over depth-derived channels, cosine ranking and the
// paired oblique-query / ortho-gallery experiment.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "geoalign/autodiff.hpp"
#include "geoalign/mgsa.hpp"
#include "geoalign/mgsf.hpp"
#include "geoalign/scene.hpp"

namespace geoalign {

enum class EncoderOutput {
  shifted_softplus,  // log(1 + e^x) - log 2, zero on empty ground
  softplus,          // strictly positive, keeps |f| smooth for finite differences
};

/// Two layers of (depthwise 3x3, 1x1 projection, activation), no biases.
struct ToyEncoder {
  static constexpr std::size_t input_channels = 6;

  EncoderOutput output = EncoderOutput::shifted_softplus;

  Tensor k1;  // 6 x 3 x 3
  Tensor w1;  // hidden x 6
  Tensor k2;  // hidden x 3 x 3
  Tensor w2;  // dim x hidden

  static ToyEncoder create(std::uint64_t seed, std::size_t hidden = 32, std::size_t dim = 64);

  std::size_t hidden() const { return w1.dim(0); }
  std::size_t dim() const { return w2.dim(0); }
};

/// Encoder input at feature resolution: detrended relief h, residual gradient
/// magnitude g, and both gated by centred x and y coordinates.
Tensor encoder_input(const DepthMap& raw, std::size_t h, std::size_t w, std::size_t r = 2);

struct EncoderVars {
  Var k1, w1, k2, w2;
  EncoderOutput output = EncoderOutput::shifted_softplus;
  static EncoderVars on(Tape& tape, const ToyEncoder& enc, bool requires_grad);
};

Var encoder_forward(Var x, const EncoderVars& vars);

struct EmbedConfig {
  bool use_mgsa = false;
  bool use_mgsf = false;
  std::size_t feature_h = 64;
  std::size_t feature_w = 64;
  MgsaParams mgsa;  // must match the encoder width when use_mgsa is set
  GateParams gate;
  MgsfConfig mgsf;
};

struct PipelineVars {
  EncoderVars encoder;
  std::optional<MgsaVars> mgsa;
  Var alpha;  // 1x1x1x1; used when use_mgsf is set
  Var beta;

  static PipelineVars on(Tape& tape, const ToyEncoder& enc, const EmbedConfig& cfg, bool requires_grad);
};

/// The parameter-free inputs derived from one depth map.
struct PreparedView {
  Tensor encoder_input;
  Tensor depth_features;              // empty unless use_mgsa
  std::optional<MgsfGeometry> geometry;  // set iff use_mgsf
};

PreparedView prepare_view(const DepthMap& depth, const EmbedConfig& cfg);

struct TapedEmbedding {
  Var features;   // after optional fusion and modulation
  Var mask;       // invalid unless use_mgsf
  Var embedding;  // unit vector of length dim
};

TapedEmbedding embed_on_tape(Tape& tape, const PipelineVars& vars, const PreparedView& view, const EmbedConfig& cfg);

std::vector<double> embed(const ToyEncoder& enc, const DepthMap& depth, const EmbedConfig& cfg);

/// Gallery indices by descending cosine, ties to the lower index.
std::vector<std::size_t> rank(std::span<const double> query, const std::vector<std::vector<double>>& gallery);

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k);
double average_precision(std::span<const std::size_t> ranks);

struct RetrievalReport {
  std::map<std::size_t, double> recall_at;
  double ap = 0.0;
  std::vector<std::size_t> per_query_ranks;  // 1-based rank of the matching gallery item
  double mean_positive_cosine = 0.0;
};

struct ExperimentConfig {
  std::size_t n_scenes = 50;
  std::uint64_t seed = 0;
  bool use_mgsf = false;
  bool use_mgsa = false;
  SceneFamily family = SceneFamily::facade_heavy();
};

/// Encoder and MGSA weights are drawn from the experiment seed, so all four
/// ablation arms of one seed share them.
RetrievalReport run_experiment(const ExperimentConfig& cfg);
RetrievalReport run_experiment(std::size_t n_scenes, std::uint64_t seed, bool use_mgsf, bool use_mgsa);

/// Seed of the i-th scene in an experiment.
std::uint64_t scene_seed(std::uint64_t experiment_seed, std::size_t index);

}  // namespace geoalign
