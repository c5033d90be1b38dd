#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "geoalign/gradcheck.hpp"
#include "geoalign/retrieval.hpp"
#include "test_util.hpp"

using namespace geoalign;

namespace {

// Rank of the true match by counting strictly better items plus ties at lower indices.
std::size_t brute_rank(const std::vector<double>& q, const std::vector<std::vector<double>>& g, std::size_t target) {
  auto cos = [&](const std::vector<double>& v) {
    double d = 0, nq = 0, nv = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      d += q[i] * v[i];
      nq += q[i] * q[i];
      nv += v[i] * v[i];
    }
    return d / std::sqrt(nq * nv);
  };
  const double t = cos(g[target]);
  std::size_t r = 1;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double c = cos(g[i]);
    if (c > t || (c == t && i < target)) ++r;
  }
  return r;
}

}  // namespace

TEST(Rank, TiesGoToTheLowerIndex) {
  const std::vector<double> q = {1.0, 0.0};
  const double c = 0.9, s = std::sqrt(1 - c * c);
  const std::vector<std::vector<double>> g = {{c, s}, {c, -s}, {0.1, std::sqrt(0.99)}};
  EXPECT_EQ(rank(q, g), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_THROW(rank(q, {}), std::invalid_argument);
  EXPECT_THROW(rank(q, {{1.0, 0.0, 0.0}}), std::invalid_argument);
}

TEST(Rank, AgreesWithBruteForceOnRandomGalleries) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    const std::size_t n = testutil::random_size(rng, 1, 12), d = testutil::random_size(rng, 2, 6);
    auto unit = [&] {
      std::vector<double> v(d);
      double n2 = 0.0;
      for (double& x : v) {
        x = g(rng);
        n2 += x * x;
      }
      for (double& x : v) x /= std::sqrt(n2);
      return v;
    };
    std::vector<std::vector<double>> gallery;
    for (std::size_t i = 0; i < n; ++i) gallery.push_back(unit());
    if (n > 2) gallery[2] = gallery[0];
    const std::vector<double> q = unit();
    const auto order = rank(q, gallery);
    for (std::size_t pos = 0; pos < n; ++pos) EXPECT_EQ(brute_rank(q, gallery, order[pos]), pos + 1);
  }
}

TEST(Metrics, RecallAndAveragePrecisionExamples) {
  const std::vector<std::size_t> ranks = {1, 2, 5};
  EXPECT_DOUBLE_EQ(recall_at_k(ranks, 1), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(recall_at_k(ranks, 2), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(recall_at_k(ranks, 5), 1.0);
  const std::vector<std::size_t> ap = {1, 2, 4};
  EXPECT_NEAR(average_precision(ap), (1.0 + 0.5 + 0.25) / 3.0, 1e-15);
  EXPECT_NEAR(average_precision(ap), 0.5833, 1e-4);
  EXPECT_THROW(recall_at_k(ranks, 0), std::invalid_argument);
  EXPECT_THROW(average_precision(std::vector<std::size_t>{}), std::invalid_argument);
}

TEST(Metrics, RecallIsMonotoneInK) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> ranks(testutil::random_size(rng, 1, 40));
    for (auto& r : ranks) r = testutil::random_size(rng, 1, 30);
    double prev = 0.0;
    for (std::size_t k = 1; k <= 31; ++k) {
      const double r = recall_at_k(ranks, k);
      EXPECT_GE(r, prev);
      prev = r;
    }
    EXPECT_EQ(prev, 1.0);
    const double ap = average_precision(ranks);
    EXPECT_GT(ap, 0.0);
    EXPECT_LE(ap, 1.0);
  }
}

TEST(Embed, UnitNormAndDeterministicInEveryArm) {
  const ToyEncoder enc = ToyEncoder::create(5);
  const Render r = render_oblique(random_scene(11, SceneFamily::facade_heavy()));
  for (bool mgsa : {false, true}) {
    for (bool mgsf : {false, true}) {
      EmbedConfig cfg;
      cfg.use_mgsa = mgsa;
      cfg.use_mgsf = mgsf;
      cfg.feature_h = cfg.feature_w = 32;
      cfg.mgsa = MgsaParams::perturbed(enc.dim(), 3, 6, 0.05, 0.05);
      const auto a = embed(enc, r.depth, cfg), b = embed(enc, r.depth, cfg);
      ASSERT_EQ(a.size(), enc.dim());
      EXPECT_EQ(a, b);
      double n = 0.0;
      for (double v : a) n += v * v;
      EXPECT_NEAR(n, 1.0, 1e-12);
    }
  }
}

TEST(Experiment, EasyScenesRetrievePerfectly) {
  ExperimentConfig cfg;
  cfg.n_scenes = 2;
  cfg.family = SceneFamily::easy();
  const RetrievalReport r = run_experiment(cfg);
  EXPECT_EQ(r.recall_at.at(1), 1.0);
  EXPECT_EQ(r.ap, 1.0);
  EXPECT_EQ(r.per_query_ranks, (std::vector<std::size_t>{1, 1}));
}

TEST(Experiment, DeterministicAndSeedsAreDistinct) {
  const RetrievalReport a = run_experiment(6, 3, true, true), b = run_experiment(6, 3, true, true);
  EXPECT_EQ(a.per_query_ranks, b.per_query_ranks);
  EXPECT_EQ(a.ap, b.ap);
  EXPECT_EQ(a.mean_positive_cosine, b.mean_positive_cosine);
  EXPECT_NE(scene_seed(0, 1), scene_seed(1, 0));
  EXPECT_NE(scene_seed(3, 0), scene_seed(3, 1));
  EXPECT_THROW(run_experiment(0, 0, false, false), std::invalid_argument);
}

TEST(GradcheckSuite, EveryGroupPassesOnAFewSeeds) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    GradCheckSuiteConfig cfg;
    cfg.seed = seed;
    for (const GradCheckResult& r : run_gradcheck_suite(cfg)) {
      EXPECT_GT(r.probes, 0u) << r.name;
      EXPECT_LT(r.max_rel_error, 1e-4) << r.name << " seed " << seed;
    }
  }
}

TEST(Gradcheck, RelativeErrorFloor) {
  EXPECT_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-3);
  const GradCheckResult bad = check_gradients(
      "wrong", {Tensor(Shape{2}, {1.0, 2.0})},
      [](Tape&, std::span<const Var> v) { return ad::sum(ad::mul(v[0], v[0])); }, 1e-5);
  EXPECT_LT(bad.max_rel_error, 1e-8);
}
