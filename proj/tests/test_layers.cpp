#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "gradient_cases.hpp"
#include "ppcn/layers.hpp"
#include "ppcn/parallel.hpp"
#include "support.hpp"

namespace ppcn::nn {
namespace {

using ppcn::testing::random_tensor;

constexpr int kSeeds = 20;

Tensor<double> from_values(Shape s, std::initializer_list<double> v) {
  Tensor<double> t(s);
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

TEST(Conv1x1, IdentityWeightPassesInputThrough) {
  Conv1x1<double> conv(3, 3);
  std::fill(conv.weight().begin(), conv.weight().end(), 0.0);
  for (int i = 0; i < 3; ++i) conv.weight()[i * 3 + i] = 1.0;
  const auto x = random_tensor<double>({2, 3, 4, 5}, 1);
  EXPECT_EQ(conv.forward(x), x);
  const auto g = random_tensor<double>({2, 3, 4, 5}, 2);
  EXPECT_EQ(conv.backward(g), g);
}

TEST(Conv1x1, StokesIntensityRow) {
  Conv1x1<double> conv(4, 1);
  const double row[] = {1, 0, 1, 0};
  std::copy(std::begin(row), std::end(row), conv.weight().begin());
  conv.bias()[0] = 0.0;
  const auto x = random_tensor<double>({1, 4, 3, 3}, 3);
  const auto y = conv.forward(x);
  for (int p = 0; p < 9; ++p) EXPECT_EQ(y.data()[p], x.data()[p] + x.data()[18 + p]);
}

TEST(Conv1x1, MatchesPerPixelOracle) {
  Conv1x1<double> conv(3, 2);
  ppcn::testing::fill_random(conv.weight(), 4);
  ppcn::testing::fill_random(conv.bias(), 5);
  const auto x = random_tensor<double>({1, 3, 2, 2}, 6);
  const auto y = conv.forward(x);
  for (int o = 0; o < 2; ++o)
    for (int h = 0; h < 2; ++h)
      for (int w = 0; w < 2; ++w) {
        double ref = conv.bias()[o];
        for (int i = 0; i < 3; ++i) ref += conv.weight()[o * 3 + i] * x.at(0, i, h, w);
        EXPECT_NEAR(y.at(0, o, h, w), ref, 1e-12);
      }
}

TEST(Conv1x1, BackwardMatchesClosedForms) {
  Conv1x1<double> conv(3, 2);
  ppcn::testing::fill_random(conv.weight(), 7);
  const auto x = random_tensor<double>({2, 3, 2, 3}, 8);
  const auto g = random_tensor<double>({2, 2, 2, 3}, 9);
  conv.zero_grad();
  conv.forward(x);
  const auto gx = conv.backward(g);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 3; ++i)
      for (int p = 0; p < 6; ++p) {
        double ref = 0;
        for (int o = 0; o < 2; ++o) ref += conv.weight()[o * 3 + i] * g.plane(n, o)[p];
        EXPECT_NEAR(gx.plane(n, i)[p], ref, 1e-12);
      }
  for (int o = 0; o < 2; ++o) {
    double gb = 0;
    for (int n = 0; n < 2; ++n)
      for (int p = 0; p < 6; ++p) gb += g.plane(n, o)[p];
    EXPECT_NEAR(conv.grad_bias()[o], gb, 1e-12);
    for (int i = 0; i < 3; ++i) {
      double gw = 0;
      for (int n = 0; n < 2; ++n)
        for (int p = 0; p < 6; ++p) gw += g.plane(n, o)[p] * x.plane(n, i)[p];
      EXPECT_NEAR(conv.grad_weight()[o * 3 + i], gw, 1e-12);
    }
  }
}

TEST(Conv1x1, ZeroGradOutGivesZeroGradients) {
  Conv1x1<double> conv(3, 2);
  ppcn::testing::fill_random(conv.weight(), 10);
  conv.zero_grad();
  conv.forward(random_tensor<double>({1, 3, 2, 2}, 11));
  const auto gx = conv.backward(Tensor<double>(1, 2, 2, 2));
  for (double v : gx.values()) EXPECT_EQ(v, 0.0);
  for (double v : conv.grad_weight()) EXPECT_EQ(v, 0.0);
  for (double v : conv.grad_bias()) EXPECT_EQ(v, 0.0);
}

TEST(Conv1x1, Errors) {
  Conv1x1<double> conv(3, 2);
  EXPECT_THROW(conv.backward(Tensor<double>(1, 2, 2, 2)), StateError);
  EXPECT_THROW(conv.forward(Tensor<double>(1, 4, 2, 2)), StructuralError);
  EXPECT_EQ(conv.parameter_count(), 2u * 3 + 2);
}

TEST(Conv1x1, FiniteDifferences) {
  for (int s = 0; s < kSeeds; ++s) EXPECT_LT(ppcn::testing::conv1x1_case(s), 1e-6) << "seed " << s;
}

TEST(Relu, ForwardAndZeroPointConvention) {
  Relu<double> relu;
  const auto x = from_values({1, 1, 1, 3}, {-1, 0, 2});
  EXPECT_EQ(relu.forward(x), from_values({1, 1, 1, 3}, {0, 0, 2}));
  EXPECT_EQ(relu.backward(from_values({1, 1, 1, 3}, {5, 5, 5})), from_values({1, 1, 1, 3}, {0, 0, 5}));
}

TEST(Relu, BackwardBeforeForward) {
  Relu<double> relu;
  EXPECT_THROW(relu.backward(Tensor<double>(1, 1, 1, 1)), StateError);
}

TEST(Relu, FiniteDifferencesAwayFromKink) {
  for (int s = 0; s < kSeeds; ++s) EXPECT_LT(ppcn::testing::relu_case(s), 1e-6) << "seed " << s;
}

TEST(BatchNorm, ThreeValueExample) {
  BatchNorm<double> bn(1, 1e-5);
  const auto y = bn.forward(from_values({3, 1, 1, 1}, {1, 2, 3}), Mode::Train);
  const double d = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(y.data()[0], -d, 1e-12);
  EXPECT_NEAR(y.data()[1], 0.0, 1e-12);
  EXPECT_NEAR(y.data()[2], d, 1e-12);
  EXPECT_NEAR(y.data()[0], -1.22474, 1e-5);
  // Same values laid out spatially.
  BatchNorm<double> bn2(1, 1e-5);
  const auto y2 = bn2.forward(from_values({1, 1, 1, 3}, {1, 2, 3}), Mode::Train);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y2.data()[i], y.data()[i], 1e-15);
}

TEST(BatchNorm, ConstantChannelMapsToZero) {
  BatchNorm<double> bn(2);
  auto x = random_tensor<double>({2, 2, 3, 3}, 12);
  for (int n = 0; n < 2; ++n)
    for (auto& v : x.plane(n, 1)) v = 4.25;
  const auto y = bn.forward(x, Mode::Train);
  for (int n = 0; n < 2; ++n)
    for (double v : y.plane(n, 1)) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, TrainModeStatistics) {
  BatchNorm<double> bn(3);
  auto x = random_tensor<double>({4, 3, 5, 5}, 13, 3.0);
  for (auto& v : x.values()) v += 2.0;
  const auto y = bn.forward(x, Mode::Train);
  for (int c = 0; c < 3; ++c) {
    double sum = 0, sq = 0, xs = 0, xsq = 0;
    const double m = 4 * 25;
    for (int n = 0; n < 4; ++n)
      for (std::size_t p = 0; p < 25; ++p) {
        sum += y.plane(n, c)[p];
        sq += y.plane(n, c)[p] * y.plane(n, c)[p];
        xs += x.plane(n, c)[p];
      }
    const double mean_x = xs / m;
    for (int n = 0; n < 4; ++n)
      for (std::size_t p = 0; p < 25; ++p) xsq += (x.plane(n, c)[p] - mean_x) * (x.plane(n, c)[p] - mean_x);
    const double var_x = xsq / m;
    EXPECT_NEAR(sum / m, 0.0, 1e-12);
    // Biased variance of the output is var / (var + eps).
    EXPECT_NEAR(sq / m, var_x / (var_x + 1e-5), 1e-12);
    EXPECT_NEAR(sq / m, 1.0, 1e-5 / var_x + 1e-12);
    // Running statistics: momentum 0.1 from (0, 1), unbiased variance.
    EXPECT_NEAR(bn.running_mean()[c], 0.1 * mean_x, 1e-12);
    EXPECT_NEAR(bn.running_var()[c], 0.9 + 0.1 * xsq / (m - 1), 1e-12);
  }
}

TEST(BatchNorm, InferModeUsesRunningStats) {
  BatchNorm<double> bn(1);
  bn.running_mean()[0] = 2.0;
  bn.running_var()[0] = 4.0;
  const auto y = bn.forward(from_values({1, 1, 1, 2}, {2.0, 4.0}), Mode::Infer);
  EXPECT_EQ(y.data()[0], 0.0);
  EXPECT_NEAR(y.data()[1], 2.0 / std::sqrt(4.0 + 1e-5), 1e-15);
  EXPECT_EQ(bn.running_mean()[0], 2.0);
  EXPECT_EQ(bn.running_var()[0], 4.0);
  // A single element is fine for inference.
  EXPECT_NO_THROW(bn.forward(Tensor<double>(1, 1, 1, 1), Mode::Infer));
}

TEST(BatchNorm, Errors) {
  BatchNorm<double> bn(2);
  EXPECT_THROW(bn.forward(Tensor<double>(1, 2, 1, 1), Mode::Train), UsageError);
  EXPECT_THROW(bn.forward(Tensor<double>(2, 3, 1, 1), Mode::Train), StructuralError);
  EXPECT_THROW(bn.backward(Tensor<double>(2, 2, 1, 1)), StateError);
}

TEST(BatchNorm, FiniteDifferences) {
  for (int s = 0; s < kSeeds; ++s) EXPECT_LT(ppcn::testing::batchnorm_case(s), 1e-5) << "seed " << s;
}

// Results must not depend on where the buffers land in memory or on the
// worker count.
TEST(Layers, BitStableAcrossAlignmentAndThreads) {
  const auto x = random_tensor<float>({3, 5, 7, 9}, 14);
  const auto g = random_tensor<float>({3, 6, 7, 9}, 15);
  auto run = [&](int threads, std::size_t pad) {
    parallel::set_thread_count(threads);
    auto spacer = std::make_unique<char[]>(pad);
    Tensor<float> xin = x;
    Conv1x1<float> conv(5, 6);
    for (std::size_t i = 0; i < conv.weight().size(); ++i) conv.weight()[i] = 0.01f * float(i % 17) - 0.08f;
    BatchNorm<float> bn(6);
    conv.zero_grad();
    auto y = bn.forward(conv.forward(xin), Mode::Train);
    auto gx = conv.backward(bn.backward(g));
    parallel::set_thread_count(0);
    std::vector<float> all(y.values().begin(), y.values().end());
    all.insert(all.end(), gx.values().begin(), gx.values().end());
    all.insert(all.end(), conv.grad_weight().begin(), conv.grad_weight().end());
    all.insert(all.end(), conv.grad_bias().begin(), conv.grad_bias().end());
    return all;
  };
  const auto ref = run(1, 1);
  for (int threads : {1, 2, 3})
    for (std::size_t pad : {3u, 17u, 40u, 1000u}) EXPECT_EQ(run(threads, pad), ref) << threads << "/" << pad;
}

TEST(Layers, ForwardBackwardDoNotModifyInputs) {
  Conv1x1<double> conv(3, 2);
  Relu<double> relu;
  BatchNorm<double> bn(2);
  const auto x = random_tensor<double>({2, 3, 3, 3}, 16);
  const auto g = random_tensor<double>({2, 2, 3, 3}, 17);
  Tensor<double> xc = x, gc = g;
  conv.forward(xc);
  conv.backward(gc);
  relu.forward(xc);
  relu.backward(xc);
  Tensor<double> gc2 = g;
  bn.forward(gc2, Mode::Train);
  bn.backward(gc2);
  EXPECT_EQ(xc, x);
  EXPECT_EQ(gc, g);
  EXPECT_EQ(gc2, g);
}

}  // namespace
}  // namespace ppcn::nn
