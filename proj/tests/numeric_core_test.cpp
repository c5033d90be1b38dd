#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "geoalign/ops.hpp"
#include "geoalign/tensor.hpp"
#include "test_util.hpp"

using namespace geoalign;
using testutil::random_size;
using testutil::random_tensor;

namespace {

// Straight transcription of same-size dilated correlation with clamped reads.
Tensor naive_conv(const Tensor& in, const Kernel2D& k) {
  const long H = static_cast<long>(in.dim(2)), W = static_cast<long>(in.dim(3));
  const long kh = static_cast<long>(k.height()), kw = static_cast<long>(k.width());
  const long r = static_cast<long>(k.dilation);
  Tensor out = Tensor::like(in);
  for (std::size_t b = 0; b < in.dim(0); ++b) {
    for (std::size_t c = 0; c < in.dim(1); ++c) {
      const std::size_t slice = k.depthwise ? c : 0;
      for (long i = 0; i < H; ++i) {
        for (long j = 0; j < W; ++j) {
          double acc = 0.0;
          for (long u = 0; u < kh; ++u) {
            for (long v = 0; v < kw; ++v) {
              const long y = std::clamp(i + (u - kh / 2) * r, 0L, H - 1);
              const long x = std::clamp(j + (v - kw / 2) * r, 0L, W - 1);
              const double w = k.weights[(slice * kh + u) * kw + v];
              acc += w * in.at(b, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            }
          }
          out.at(b, c, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = acc;
        }
      }
    }
  }
  return out;
}

Kernel2D sobel_x(std::size_t channels) {
  Kernel2D k{Tensor(Shape{channels, 3, 3}), 1, true};
  for (std::size_t c = 0; c < channels; ++c) {
    const double taps[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    for (std::size_t t = 0; t < 9; ++t) k.weights[c * 9 + t] = taps[t];
  }
  return k;
}

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  const Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(shape_string(t.shape()), "[2x3]");
  EXPECT_THROW(static_cast<void>(t.item()), std::logic_error);
  EXPECT_DOUBLE_EQ(Tensor::scalar(4.0).item(), 4.0);
}

TEST(Conv2d, DilatedRowAtInteriorIndex) {
  const Tensor in(Shape{1, 1, 1, 5}, {0, 1, 2, 3, 4});
  const Kernel2D k{Tensor(Shape{1, 1, 3}, {1, 0, -1}), 2, false};
  const Tensor out = conv2d(in, k);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0, 2), -4.0);
  // Border: left tap clamps to index 0, right tap reads index 2.
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0, 0), 0.0 - 2.0);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t b = random_size(rng, 1, 2), c = random_size(rng, 1, 3);
    const Tensor in = random_tensor(Shape{b, c, random_size(rng, 1, 9), random_size(rng, 1, 9)}, rng);
    for (std::size_t r : {1, 2, 3, 4}) {
      for (bool depthwise : {true, false}) {
        const Kernel2D k = Kernel2D::delta(depthwise ? c : 1, seed % 2 ? 3 : 5, r, depthwise);
        EXPECT_EQ(conv2d(in, k), in) << "seed " << seed << " r " << r;
      }
    }
  }
}

TEST(Conv2d, ConstantFieldUnderZeroSumKernelVanishesEverywhere) {
  const Tensor in(Shape{1, 2, 6, 7}, 3.25);
  for (std::size_t r : {1, 2, 4}) {
    Kernel2D k = sobel_x(2);
    k.dilation = r;
    const Tensor out = conv2d(in, k);
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Conv2d, MatchesNaiveOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 100);
    const std::size_t c = random_size(rng, 1, 3);
    const bool depthwise = seed % 2 == 0;
    const std::size_t kh = 2 * random_size(rng, 0, 2) + 1, kw = 2 * random_size(rng, 0, 2) + 1;
    const Kernel2D k{random_tensor(Shape{depthwise ? c : 1, kh, kw}, rng), random_size(rng, 1, 4), depthwise};
    const Tensor in = random_tensor(Shape{2, c, random_size(rng, 1, 10), random_size(rng, 1, 10)}, rng);
    EXPECT_LT(max_abs_difference(conv2d(in, k), naive_conv(in, k)), 1e-12) << "seed " << seed;
  }
}

TEST(Conv2d, IsLinear) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 200);
    const Shape s{1, 2, random_size(rng, 3, 8), random_size(rng, 3, 8)};
    const Tensor x = random_tensor(s, rng), y = random_tensor(s, rng);
    const Kernel2D k{random_tensor(Shape{2, 3, 3}, rng), random_size(rng, 1, 3), true};
    const double a = 1.7, b = -0.4;
    Tensor mix(s);
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
    const Tensor lhs = conv2d(mix, k), cx = conv2d(x, k), cy = conv2d(y, k);
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], a * cx[i] + b * cy[i], 1e-10);
  }
}

TEST(Conv2d, ChannelMismatchNamesBothShapes) {
  const Tensor in(Shape{1, 3, 4, 4});
  const Kernel2D k = Kernel2D::delta(2, 3, 1, true);
  try {
    conv2d(in, k);
    FAIL() << "expected a shape error";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[1x3x4x4]"), std::string::npos) << msg;
  }
}

TEST(Kernel2D, RejectsEvenExtentsAndReportsReceptiveField) {
  EXPECT_THROW((Kernel2D{Tensor(Shape{1, 2, 3}), 1, false}.validate()), std::invalid_argument);
  EXPECT_THROW((Kernel2D{Tensor(Shape{1, 3, 3}), 0, false}.validate()), std::invalid_argument);
  EXPECT_EQ((Kernel2D{Tensor(Shape{1, 3, 3}), 4, false}.receptive_field()), 9u);
}

TEST(AdaptiveAvgPool, BlockMeans) {
  const Tensor in(Shape{1, 1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  EXPECT_EQ(adaptive_avg_pool(in, 2, 2), Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
}

TEST(AdaptiveAvgPool, FloorBinsOnThreeByThree) {
  const Tensor in(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  // Rows {0},{1,2} and columns {0},{1,2}.
  EXPECT_EQ(pool_bin(0, 3, 2), (std::pair<std::size_t, std::size_t>{0, 1}));
  EXPECT_EQ(pool_bin(1, 3, 2), (std::pair<std::size_t, std::size_t>{1, 3}));
  const Tensor out = adaptive_avg_pool(in, 2, 2);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_DOUBLE_EQ(out[1], 2.5);
  EXPECT_DOUBLE_EQ(out[2], 5.5);
  EXPECT_DOUBLE_EQ(out[3], 7.0);
}

TEST(AdaptiveAvgPool, IdentityGlobalMeanAndErrors) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 300);
    const std::size_t h = random_size(rng, 1, 12), w = random_size(rng, 1, 12);
    const Tensor in = random_tensor(Shape{2, 2, h, w}, rng);
    EXPECT_EQ(adaptive_avg_pool(in, h, w), in);
    const Tensor g = adaptive_avg_pool(in, 1, 1);
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t c = 0; c < 2; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) mean += in.at(b, c, i, j);
        }
        EXPECT_NEAR(g.at(b, c, 0, 0), mean / static_cast<double>(h * w), 1e-12);
      }
    }
  }
  EXPECT_THROW(adaptive_avg_pool(Tensor(Shape{1, 1, 4, 4}), 0, 2), std::invalid_argument);
  EXPECT_THROW(adaptive_avg_pool(Tensor(Shape{1, 1, 4, 4}), 5, 2), std::invalid_argument);
}

TEST(AdaptiveAvgPool, DivisibleSizesPreserveTheMean) {
  std::mt19937_64 rng(7);
  const Tensor in = random_tensor(Shape{1, 1, 12, 8}, rng);
  const Tensor out = adaptive_avg_pool(in, 3, 4);
  const double m_in = std::accumulate(in.data().begin(), in.data().end(), 0.0) / 96.0;
  const double m_out = std::accumulate(out.data().begin(), out.data().end(), 0.0) / 12.0;
  EXPECT_NEAR(m_in, m_out, 1e-12);
}

TEST(Softmax, ClosedFormCases) {
  const Tensor zero = softmax_over_axis(Tensor(Shape{1, 3}, 0.0), 1);
  for (double v : zero.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const Tensor big = softmax_over_axis(Tensor(Shape{1, 3}, 1000.0), 1);
  for (double v : big.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const Tensor logw = softmax_over_axis(Tensor(Shape{1, 3}, {std::log(1.0), std::log(2.0), std::log(7.0)}), 1);
  EXPECT_NEAR(logw[0], 0.1, 1e-15);
  EXPECT_NEAR(logw[1], 0.2, 1e-15);
  EXPECT_NEAR(logw[2], 0.7, 1e-15);
  EXPECT_THROW(softmax_over_axis(Tensor(Shape{1, 3}), 2), std::invalid_argument);
}

TEST(Softmax, PositiveNormalizedAndShiftInvariantOnAnyAxis) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 400);
    const Shape s{2, 3, random_size(rng, 1, 5), random_size(rng, 1, 5)};
    const Tensor x = random_tensor(s, rng, -30.0, 30.0);
    const std::size_t axis = seed % 4;
    const Tensor y = softmax_over_axis(x, axis);
    // Shift by a constant along the axis: the shift depends on the other coordinates only.
    Tensor shifted = x;
    std::size_t inner = 1;
    for (std::size_t a = axis + 1; a < s.size(); ++a) inner *= s[a];
    for (std::size_t i = 0; i < shifted.size(); ++i) {
      const std::size_t outer = i / (inner * s[axis]);
      shifted[i] += 17.0 * static_cast<double>(outer) + 3.0 * static_cast<double>(i % inner);
    }
    const Tensor ys = softmax_over_axis(shifted, axis);
    EXPECT_LT(max_abs_difference(y, ys), 1e-12);
    for (double v : y.data()) EXPECT_GT(v, 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if ((i / inner) % s[axis] != 0) continue;
      double total = 0.0;
      for (std::size_t k = 0; k < s[axis]; ++k) total += y[i + k * inner];
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(ChannelProject, MixesChannelsAndAddsBias) {
  const Tensor in(Shape{1, 2, 1, 2}, {1, 2, 10, 20});
  const Tensor w(Shape{1, 2}, {0.5, -1.0});
  const Tensor out = channel_project(in, w, Tensor(Shape{1}, {3.0}));
  EXPECT_DOUBLE_EQ(out[0], 0.5 - 10.0 + 3.0);
  EXPECT_DOUBLE_EQ(out[1], 1.0 - 20.0 + 3.0);
  EXPECT_THROW(channel_project(in, Tensor(Shape{1, 3}), Tensor()), std::invalid_argument);
}

TEST(Scalars, SigmoidAndLog1pExpStayFinite) {
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(2.5), 0.9241418199787566, 1e-15);
  EXPECT_EQ(sigmoid(-800.0), 0.0);
  EXPECT_DOUBLE_EQ(log1p_exp(800.0), 800.0);
  EXPECT_NEAR(log1p_exp(0.0), std::log(2.0), 1e-15);
  EXPECT_TRUE(std::isfinite(log1p_exp(-800.0)));
}

TEST(LowerQuantile, InverseEmpiricalCdf) {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), std::mt19937_64(1));
  EXPECT_EQ(lower_quantile(v, 0.9), 89.0);
  EXPECT_EQ(lower_quantile(v, 0.0), 0.0);
  EXPECT_EQ(lower_quantile(v, 1.0), 99.0);
  EXPECT_EQ(lower_quantile(std::vector<double>{5.0}, 0.3), 5.0);
  EXPECT_THROW(lower_quantile(std::vector<double>{}, 0.5), std::invalid_argument);
}
