#include "geoalign/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace geoalign {

namespace {

double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<long>(mid));
  return 0.5 * (lower + upper);
}

Tensor gaussian(Shape shape, double sigma, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, sigma);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

void require_unit(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (std::abs(std::sqrt(sq) - 1.0) > 1e-9) {
    throw std::invalid_argument(fmt::format("embedding has norm {}, expected 1", std::sqrt(sq)));
  }
}

}  // namespace

ToyEncoder ToyEncoder::create(std::uint64_t seed, std::size_t hidden, std::size_t dim) {
  std::mt19937_64 rng(seed);
  ToyEncoder e;
  e.k1 = gaussian(Shape{input_channels, 3, 3}, 1.0 / 3.0, rng);
  e.w1 = gaussian(Shape{hidden, input_channels}, 1.0 / std::sqrt(static_cast<double>(input_channels)), rng);
  e.k2 = gaussian(Shape{hidden, 3, 3}, 1.0 / 3.0, rng);
  e.w2 = gaussian(Shape{dim, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  return e;
}

Tensor encoder_input(const DepthMap& raw, std::size_t h, std::size_t w, std::size_t r) {
  const DepthMap pooled = align_depth(raw, h, w);
  const Gradients g = macro_gradient(pooled, r);
  const double mx = median(g.gx.values());
  const double my = median(g.gy.values());
  std::vector<double> relief(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      relief[i * w + j] = pooled.at(i, j) - mx * static_cast<double>(j) - my * static_cast<double>(i);
    }
  }
  const double base = median(relief);
  Tensor x(Shape{1, ToyEncoder::input_channels, h, w});
  for (std::size_t i = 0; i < h; ++i) {
    const double yc = (static_cast<double>(i) - 0.5 * static_cast<double>(h - 1)) / (0.5 * static_cast<double>(h));
    for (std::size_t j = 0; j < w; ++j) {
      const double xc =
          (static_cast<double>(j) - 0.5 * static_cast<double>(w - 1)) / (0.5 * static_cast<double>(w));
      // Buildings stand proud of the ground, so positive relief means "up".
      const double hr = -(relief[i * w + j] - base) / 10.0;
      const double gr = std::hypot(g.gx.at(0, 0, i, j) - mx, g.gy.at(0, 0, i, j) - my);
      const double channels[] = {hr, gr, hr * xc, hr * yc, gr * xc, gr * yc};
      for (std::size_t c = 0; c < ToyEncoder::input_channels; ++c) x.at(0, c, i, j) = channels[c];
    }
  }
  return x;
}

EncoderVars EncoderVars::on(Tape& tape, const ToyEncoder& enc, bool requires_grad) {
  return {tape.leaf(enc.k1, requires_grad), tape.leaf(enc.w1, requires_grad), tape.leaf(enc.k2, requires_grad),
          tape.leaf(enc.w2, requires_grad), enc.output};
}

Var encoder_forward(Var x, const EncoderVars& vars) {
  const Var hidden = ad::shifted_softplus(ad::channel_project(ad::conv2d(x, vars.k1, 1, true), vars.w1, Var()));
  const Var pre = ad::channel_project(ad::conv2d(hidden, vars.k2, 1, true), vars.w2, Var());
  return vars.output == EncoderOutput::softplus ? ad::log1p_exp(pre) : ad::shifted_softplus(pre);
}

PipelineVars PipelineVars::on(Tape& tape, const ToyEncoder& enc, const EmbedConfig& cfg, bool requires_grad) {
  PipelineVars v;
  v.encoder = EncoderVars::on(tape, enc, requires_grad);
  if (cfg.use_mgsa) v.mgsa = MgsaVars::on(tape, cfg.mgsa, requires_grad);
  v.alpha = tape.leaf(Tensor(Shape{1, 1, 1, 1}, cfg.gate.alpha), requires_grad);
  v.beta = tape.leaf(Tensor(Shape{1, 1, 1, 1}, cfg.gate.beta), requires_grad);
  return v;
}

PreparedView prepare_view(const DepthMap& depth, const EmbedConfig& cfg) {
  const std::size_t h = cfg.feature_h, w = cfg.feature_w;
  PreparedView view;
  view.encoder_input = encoder_input(depth, h, w, cfg.mgsf.dilation_r);
  if (cfg.use_mgsa) view.depth_features = depth_features(depth, h, w, cfg.mgsf.dilation_r);
  if (cfg.use_mgsf) view.geometry = analyze_depth(depth, h, w, cfg.mgsf);
  return view;
}

TapedEmbedding embed_on_tape(Tape& tape, const PipelineVars& vars, const PreparedView& view, const EmbedConfig& cfg) {
  TapedEmbedding out;
  Var f = encoder_forward(tape.constant(view.encoder_input), vars.encoder);
  if (cfg.use_mgsa) {
    if (!vars.mgsa) throw std::invalid_argument("MGSA requested without MGSA parameters");
    f = mgsa_forward(f, view.depth_features, *vars.mgsa);
  }
  if (cfg.use_mgsf) {
    if (!view.geometry) throw std::invalid_argument("MGSF requested on a view prepared without it");
    const Var c_geo = tape.constant(view.geometry->c_geo);
    out.mask = rectify_edges(adaptive_gate(c_geo, vars.alpha, vars.beta), view.geometry->partition);
    f = modulate(f, out.mask);
  }
  out.features = f;
  const std::size_t dim = f.shape()[1];
  out.embedding = ad::normalize(ad::reshape(ad::adaptive_avg_pool(f, 1, 1), Shape{dim}));
  return out;
}

std::vector<double> embed(const ToyEncoder& enc, const DepthMap& depth, const EmbedConfig& cfg) {
  Tape tape;
  const PipelineVars vars = PipelineVars::on(tape, enc, cfg, false);
  return embed_on_tape(tape, vars, prepare_view(depth, cfg), cfg).embedding.value().values();
}

std::vector<std::size_t> rank(std::span<const double> query, const std::vector<std::vector<double>>& gallery) {
  if (gallery.empty()) throw std::invalid_argument("cannot rank against an empty gallery");
  require_unit(query);
  std::vector<double> sim(gallery.size());
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    if (gallery[g].size() != query.size()) {
      throw std::invalid_argument(
          fmt::format("gallery item {} has length {}, query has {}", g, gallery[g].size(), query.size()));
    }
    require_unit(gallery[g]);
    sim[g] = std::inner_product(query.begin(), query.end(), gallery[g].begin(), 0.0);
  }
  std::vector<std::size_t> order(gallery.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
  return order;
}

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (k < 1) throw std::invalid_argument("recall@k needs k >= 1");
  if (ranks.empty()) throw std::invalid_argument("recall@k over zero queries");
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) {
    if (r < 1) throw std::invalid_argument("ranks are 1-based");
    return r <= k;
  });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double average_precision(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw std::invalid_argument("average precision over zero queries");
  double total = 0.0;
  for (std::size_t r : ranks) {
    if (r < 1) throw std::invalid_argument("ranks are 1-based");
    total += 1.0 / static_cast<double>(r);
  }
  return total / static_cast<double>(ranks.size());
}

std::uint64_t scene_seed(std::uint64_t experiment_seed, std::size_t index) {
  return experiment_seed * 100003ULL + index;
}

RetrievalReport run_experiment(const ExperimentConfig& cfg) {
  if (cfg.n_scenes < 2) throw std::invalid_argument(fmt::format("need at least 2 scenes, got {}", cfg.n_scenes));
  const ToyEncoder enc = ToyEncoder::create(cfg.seed);
  EmbedConfig ec;
  ec.use_mgsa = cfg.use_mgsa;
  ec.use_mgsf = cfg.use_mgsf;
  ec.feature_h = ec.feature_w = cfg.family.raster / 2;
  ec.mgsa = MgsaParams::perturbed(enc.dim(), 3, cfg.seed + 1, 0.05, 0.05);

  std::vector<std::vector<double>> queries, gallery;
  for (std::size_t s = 0; s < cfg.n_scenes; ++s) {
    const SceneSpec spec = random_scene(scene_seed(cfg.seed, s), cfg.family);
    queries.push_back(embed(enc, render_oblique(spec).depth, ec));
    gallery.push_back(embed(enc, render_ortho(spec).depth, ec));
  }

  RetrievalReport report;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto order = rank(queries[q], gallery);
    const auto pos = std::find(order.begin(), order.end(), q) - order.begin();
    report.per_query_ranks.push_back(static_cast<std::size_t>(pos) + 1);
    report.mean_positive_cosine +=
        std::inner_product(queries[q].begin(), queries[q].end(), gallery[q].begin(), 0.0);
  }
  report.mean_positive_cosine /= static_cast<double>(queries.size());
  for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{10}, cfg.n_scenes}) {
    if (k <= cfg.n_scenes) report.recall_at[k] = recall_at_k(report.per_query_ranks, k);
  }
  report.ap = average_precision(report.per_query_ranks);
  return report;
}

RetrievalReport run_experiment(std::size_t n_scenes, std::uint64_t seed, bool use_mgsf, bool use_mgsa) {
  ExperimentConfig cfg;
  cfg.n_scenes = n_scenes;
  cfg.seed = seed;
  cfg.use_mgsf = use_mgsf;
  cfg.use_mgsa = use_mgsa;
  return run_experiment(cfg);
}

}  // namespace geoalign
