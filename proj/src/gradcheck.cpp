#include "geoalign/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>

#include "geoalign/losses.hpp"
#include "geoalign/mgsa.hpp"
#include "geoalign/retrieval.hpp"
#include "geoalign/scene.hpp"

namespace geoalign {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

double evaluate(const std::vector<Tensor>& params, const LossFn& loss) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& p : params) leaves.push_back(tape.leaf(p, false));
  return loss(tape, leaves).value().item();
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, const std::vector<Tensor>& params, const LossFn& loss,
                                double eps, const ProbePlan& plan) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p, true));
    const Var l = loss(tape, leaves);
    tape.backward(l);
    for (const Var& v : leaves) analytic.push_back(v.grad());
  }

  GradCheckResult result{name};
  auto record = [&](double a, double n) {
    ++result.probes;
    const double err = relative_error(a, n);
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_analytic = a;
      result.worst_numeric = n;
    }
  };

  std::mt19937_64 rng(plan.seed);
  std::vector<Tensor> shifted = params;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const std::size_t n = params[t].size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (plan.coords_per_tensor > 0 && plan.coords_per_tensor < n) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(plan.coords_per_tensor);
    }
    for (std::size_t c : coords) {
      shifted[t][c] = params[t][c] + eps;
      const double up = evaluate(shifted, loss);
      shifted[t][c] = params[t][c] - eps;
      const double down = evaluate(shifted, loss);
      shifted[t][c] = params[t][c];
      record(analytic[t][c], (up - down) / (2.0 * eps));
    }
    for (std::size_t d = 0; d < plan.directions_per_tensor; ++d) {
      std::normal_distribution<double> gauss;
      std::vector<double> dir(n);
      double norm = 0.0;
      for (double& v : dir) {
        v = gauss(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      double a = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        dir[i] /= norm;
        a += analytic[t][i] * dir[i];
      }
      for (std::size_t i = 0; i < n; ++i) shifted[t][i] = params[t][i] + eps * dir[i];
      const double up = evaluate(shifted, loss);
      for (std::size_t i = 0; i < n; ++i) shifted[t][i] = params[t][i] - eps * dir[i];
      const double down = evaluate(shifted, loss);
      shifted[t] = params[t];
      record(a, (up - down) / (2.0 * eps));
    }
  }
  return result;
}

namespace {

// Parameter slots, in the order they are stored.
enum Slot : std::size_t { k1, w1, k2, w2, mid, far, psi_w, psi_b, alpha, beta, slot_count };

struct Group {
  const char* name;
  std::vector<Slot> slots;
};

enum class Objective { gacd, triplet, total };

struct SuiteInstance {
  EmbedConfig cfg;
  std::vector<Tensor> params;  // indexed by Slot
  PreparedView anchor, positive, negative;
  ActivationPartition partition;  // frozen at the base parameters
  LossWeights weights;
};

SuiteInstance make_instance(std::uint64_t seed) {
  SceneFamily family;
  family.raster = 32;
  family.min_boxes = 1;
  family.max_boxes = 3;
  family.min_footprint = 5;
  family.max_footprint = 8;
  family.min_height = 10.0;
  family.max_height = 20.0;
  family.min_tilt = 0.1;
  family.max_tilt = 0.2;
  family.gap = 3;
  family.margin = 1;

  SuiteInstance s;
  s.cfg.use_mgsa = s.cfg.use_mgsf = true;
  s.cfg.feature_h = s.cfg.feature_w = 16;

  ToyEncoder enc = ToyEncoder::create(seed, 8, 8);
  enc.output = EncoderOutput::softplus;
  // Non-negative taps keep fused features positive, so |f| in the activation
  // map stays away from its kink.
  s.cfg.mgsa = MgsaParams::perturbed(enc.dim(), 3, seed + 7, 0.05, 0.05);
  for (double& v : s.cfg.mgsa.mid_kernel.weights.data()) v = std::abs(v);
  for (double& v : s.cfg.mgsa.far_kernel.weights.data()) v = std::abs(v);

  s.params = {enc.k1,
              enc.w1,
              enc.k2,
              enc.w2,
              s.cfg.mgsa.mid_kernel.weights,
              s.cfg.mgsa.far_kernel.weights,
              s.cfg.mgsa.psi_weights,
              s.cfg.mgsa.psi_bias,
              Tensor(Shape{1, 1, 1, 1}, s.cfg.gate.alpha),
              Tensor(Shape{1, 1, 1, 1}, s.cfg.gate.beta)};

  const SceneSpec a = random_scene(seed * 2 + 1, family);
  const SceneSpec b = random_scene(seed * 2 + 2, family);
  s.anchor = prepare_view(render_oblique(a).depth, s.cfg);
  s.positive = prepare_view(render_ortho(a).depth, s.cfg);
  s.negative = prepare_view(render_ortho(b).depth, s.cfg);
  return s;
}

PipelineVars bind_slots(std::span<const Var> v) {
  PipelineVars p;
  p.encoder = {v[k1], v[w1], v[k2], v[w2], EncoderOutput::softplus};
  p.mgsa = MgsaVars{v[mid], v[far], v[psi_w], v[psi_b]};
  p.alpha = v[alpha];
  p.beta = v[beta];
  return p;
}

Var objective(Tape& tape, std::span<const Var> all, const SuiteInstance& s, Objective which) {
  const PipelineVars vars = bind_slots(all);
  const TapedEmbedding a = embed_on_tape(tape, vars, s.anchor, s.cfg);
  Var gacd_term, triplet_term;
  if (which != Objective::triplet) gacd_term = gacd_loss(activation_map(a.features), s.partition, s.weights.xi);
  if (which == Objective::gacd) return gacd_term;
  const TapedEmbedding p = embed_on_tape(tape, vars, s.positive, s.cfg);
  const TapedEmbedding n = embed_on_tape(tape, vars, s.negative, s.cfg);
  triplet_term = soft_margin_triplet(a.embedding, p.embedding, n.embedding, s.weights.triplet_gamma);
  if (which == Objective::triplet) return triplet_term;
  return total_loss(triplet_term, gacd_term, s.weights);
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckSuiteConfig& cfg) {
  SuiteInstance s = make_instance(cfg.seed);
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& p : s.params) leaves.push_back(tape.constant(p));
    const TapedEmbedding a = embed_on_tape(tape, bind_slots(leaves), s.anchor, s.cfg);
    s.partition = partition_by_quantile(a.mask.value().data());
  }

  const std::vector<Group> groups = {{"encoder", {k1, w1, k2, w2}},
                                     {"phi", {mid, far}},
                                     {"psi", {psi_w, psi_b}},
                                     {"alpha", {alpha}},
                                     {"beta", {beta}}};
  const std::pair<const char*, Objective> objectives[] = {
      {"gacd", Objective::gacd}, {"triplet", Objective::triplet}, {"total", Objective::total}};

  std::vector<GradCheckResult> results;
  for (const auto& [loss_name, which] : objectives) {
    for (const Group& g : groups) {
      std::vector<Tensor> params;
      for (Slot slot : g.slots) params.push_back(s.params[slot]);
      const LossFn fn = [&, which = which](Tape& tape, std::span<const Var> leaves) {
        std::vector<Var> all;
        for (std::size_t i = 0; i < slot_count; ++i) all.push_back(tape.constant(s.params[i]));
        for (std::size_t i = 0; i < g.slots.size(); ++i) all[g.slots[i]] = leaves[i];
        return objective(tape, all, s, which);
      };
      const ProbePlan plan{cfg.coords_per_tensor, cfg.directions_per_tensor, cfg.seed * 31 + results.size()};
      results.push_back(check_gradients(std::string(g.name) + "/" + loss_name, params, fn, cfg.eps, plan));
    }
  }
  return results;
}

}  // namespace geoalign
