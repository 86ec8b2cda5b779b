#include <gtest/gtest.h>

#include <cmath>

#include "gradient_cases.hpp"
#include "ppcn/taskhead.hpp"
#include "support.hpp"

namespace ppcn::nn {
namespace {

using ppcn::testing::random_tensor;

// Brute-force zero-padded cross-correlation.
Tensor<double> conv3x3_oracle(const Conv3x3<double>& conv, const Tensor<double>& x) {
  const int in = conv.in_channels(), out = conv.out_channels();
  Tensor<double> y(x.n(), out, x.h(), x.w());
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < out; ++o)
      for (int h = 0; h < x.h(); ++h)
        for (int w = 0; w < x.w(); ++w) {
          double acc = conv.bias()[o];
          for (int i = 0; i < in; ++i)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int yy = h + dy, xx = w + dx;
                if (yy < 0 || yy >= x.h() || xx < 0 || xx >= x.w()) continue;
                acc += conv.weight()[((o * in + i) * 3 + dy + 1) * 3 + dx + 1] * x.at(n, i, yy, xx);
              }
          y.at(n, o, h, w) = acc;
        }
  return y;
}

TEST(Conv3x3, CenteredDeltaIsIdentity) {
  Conv3x3<double> conv(2, 2);
  std::fill(conv.weight().begin(), conv.weight().end(), 0.0);
  std::fill(conv.bias().begin(), conv.bias().end(), 0.0);
  conv.weight()[(0 * 2 + 0) * 9 + 4] = 1.0;
  conv.weight()[(1 * 2 + 1) * 9 + 4] = 1.0;
  const auto x = random_tensor<double>({2, 2, 5, 4}, 1);
  EXPECT_EQ(conv.forward(x), x);
}

TEST(Conv3x3, AllOnesOverlapCounts) {
  Conv3x3<double> conv(1, 1);
  std::fill(conv.weight().begin(), conv.weight().end(), 1.0);
  conv.bias()[0] = 0.0;
  const auto y = conv.forward(Tensor<double>(1, 1, 3, 3, 1.0));
  const double expected[] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (int i = 0; i < 9; ++i) EXPECT_EQ(y.data()[i], expected[i]) << i;
  EXPECT_EQ(conv3x3_oracle(conv, Tensor<double>(1, 1, 3, 3, 1.0)), y);
}

TEST(Conv3x3, ZeroInputGivesBiasBroadcast) {
  Conv3x3<double> conv(3, 2);
  ppcn::testing::fill_random(conv.weight(), 2);
  conv.bias()[0] = 0.25;
  conv.bias()[1] = -1.5;
  const auto y = conv.forward(Tensor<double>(2, 3, 4, 4));
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 2; ++o)
      for (double v : y.plane(n, o)) EXPECT_EQ(v, conv.bias()[o]);
}

TEST(Conv3x3, MatchesBruteForceOracle) {
  for (auto [h, w] : {std::pair{1, 1}, {1, 5}, {4, 1}, {5, 6}}) {
    Conv3x3<double> conv(3, 4);
    ppcn::testing::fill_random(conv.weight(), 3 + h);
    ppcn::testing::fill_random(conv.bias(), 4 + w);
    const auto x = random_tensor<double>({2, 3, h, w}, 5);
    const auto y = conv.forward(x);
    const auto ref = conv3x3_oracle(conv, x);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], ref.data()[i], 1e-12);
  }
}

// <conv(x), g> == <x, conv^T(g)> for the bias-free part.
TEST(Conv3x3, BackwardIsAdjoint) {
  Conv3x3<double> conv(2, 3);
  ppcn::testing::fill_random(conv.weight(), 6);
  std::fill(conv.bias().begin(), conv.bias().end(), 0.0);
  const auto x = random_tensor<double>({2, 2, 4, 5}, 7);
  const auto g = random_tensor<double>({2, 3, 4, 5}, 8);
  conv.zero_grad();
  const auto y = conv.forward(x);
  const auto gx = conv.backward(g);
  EXPECT_NEAR(ppcn::testing::project(y, g), ppcn::testing::project(x, gx), 1e-10);
}

TEST(Conv3x3, Errors) {
  Conv3x3<double> conv(2, 3);
  EXPECT_THROW(conv.backward(Tensor<double>(1, 3, 2, 2)), StateError);
  EXPECT_THROW(conv.forward(Tensor<double>(1, 3, 2, 2)), StructuralError);
  EXPECT_EQ(conv.parameter_count(), 3u * 2 * 9 + 3);
}

TEST(Conv3x3, FiniteDifferences) {
  for (int s = 0; s < 20; ++s) EXPECT_LT(ppcn::testing::conv3x3_case(s), 1e-5) << "seed " << s;
}

TEST(SoftmaxCe, UniformLogitsGiveLogClassCount) {
  SoftmaxCrossEntropy<double> ce;
  const std::vector<std::uint8_t> labels = {0, 1, 1, 0};
  EXPECT_NEAR(ce.forward(Tensor<double>(1, 2, 2, 2, 0.3), labels), std::log(2.0), 1e-15);
}

TEST(SoftmaxCe, ConfidentCorrectLogitsApproachZero) {
  Tensor<double> logits(1, 3, 1, 2);
  logits.at(0, 2, 0, 0) = 10.0;
  logits.at(0, 0, 0, 1) = 10.0;
  SoftmaxCrossEntropy<double> ce;
  const std::vector<std::uint8_t> labels = {2, 0};
  const double l = ce.forward(logits, labels);
  EXPECT_LT(l, 1e-3);
  EXPECT_NEAR(l, std::log(1.0 + 2.0 * std::exp(-10.0)), 1e-15);
  logits.at(0, 2, 0, 0) = 800.0;  // max subtraction keeps this finite
  EXPECT_TRUE(std::isfinite(ce.forward(logits, labels)));
}

TEST(SoftmaxCe, BackwardClosedForm) {
  const auto logits = random_tensor<double>({2, 3, 2, 2}, 9);
  const auto labels = ppcn::testing::random_labels(8, 3, 10);
  SoftmaxCrossEntropy<double> ce;
  ce.forward(logits, labels);
  const auto g = ce.backward();
  for (int n = 0; n < 2; ++n)
    for (int p = 0; p < 4; ++p) {
      double z = 0;
      for (int c = 0; c < 3; ++c) z += std::exp(logits.plane(n, c)[p]);
      for (int c = 0; c < 3; ++c) {
        const double prob = std::exp(logits.plane(n, c)[p]) / z;
        const double onehot = labels[n * 4 + p] == c ? 1.0 : 0.0;
        EXPECT_NEAR(g.plane(n, c)[p], (prob - onehot) / 8.0, 1e-15);
      }
    }
}

TEST(SoftmaxCe, ShiftInvariantPerPixel) {
  const auto logits = random_tensor<double>({2, 4, 3, 3}, 11);
  const auto labels = ppcn::testing::random_labels(18, 4, 12);
  auto shifted = logits;
  for (int n = 0; n < 2; ++n)
    for (int p = 0; p < 9; ++p) {
      const double k = 3.0 * n - 0.5 * p;
      for (int c = 0; c < 4; ++c) shifted.plane(n, c)[p] += k;
    }
  SoftmaxCrossEntropy<double> a, b;
  EXPECT_NEAR(a.forward(logits, labels), b.forward(shifted, labels), 1e-13);
}

TEST(SoftmaxCe, Errors) {
  SoftmaxCrossEntropy<double> ce;
  EXPECT_THROW(ce.backward(), StateError);
  const std::vector<std::uint8_t> bad = {0, 3};
  EXPECT_THROW(ce.forward(Tensor<double>(1, 3, 1, 2), bad), InputError);
  const std::vector<std::uint8_t> short_labels = {0};
  EXPECT_THROW(ce.forward(Tensor<double>(1, 3, 1, 2), short_labels), StructuralError);
}

TEST(SoftmaxCe, FiniteDifferences) {
  for (int s = 0; s < 20; ++s) EXPECT_LT(ppcn::testing::softmax_ce_case(s), 1e-5) << "seed " << s;
}

TEST(Head, ZeroWeightsGiveBiasLogits) {
  HeadModel<double> head(3, 4);
  for (auto& p : head.parameters()) std::fill(p.value.begin(), p.value.end(), 0.0);
  const double b[] = {0.5, -1, 2, 0};
  std::copy(std::begin(b), std::end(b), head.logits_layer().bias().begin());
  const auto y = head.forward(random_tensor<double>({2, 3, 5, 5}, 13));
  EXPECT_EQ(y.shape(), (Shape{2, 4, 5, 5}));
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 4; ++c)
      for (double v : y.plane(n, c)) EXPECT_EQ(v, b[c]);
}

TEST(Head, ShapesAndParameterCount) {
  HeadModel<double> head(5, 3, {4, 6});
  EXPECT_EQ(head.in_channels(), 5);
  EXPECT_EQ(head.num_logits(), 3);
  EXPECT_EQ(head.parameter_count(), (5u * 4 * 9 + 4) + (4u * 6 * 9 + 6) + (6u * 3 + 3));
  std::size_t allocated = 0;
  for (const auto& p : head.parameters()) allocated += p.value.size();
  EXPECT_EQ(allocated, head.parameter_count());
  head.init_params(1);
  head.forward(random_tensor<double>({1, 5, 4, 3}, 14));
  EXPECT_EQ(head.backward(Tensor<double>(1, 3, 4, 3)).shape(), (Shape{1, 5, 4, 3}));
  EXPECT_THROW(HeadModel<double>(5, 1), StructuralError);
}

TEST(Head, BatchOrderPermutesLogits) {
  HeadModel<double> head(2, 3, {4, 4});
  head.init_params(15);
  const auto x = random_tensor<double>({3, 2, 4, 4}, 16);
  Tensor<double> xr(x.shape());
  const int order[] = {2, 0, 1};
  for (int n = 0; n < 3; ++n) std::ranges::copy(x.sample(order[n]), xr.sample(n).begin());
  const auto y = head.forward(x);
  const auto yr = head.forward(xr);
  for (int n = 0; n < 3; ++n) EXPECT_TRUE(std::ranges::equal(yr.sample(n), y.sample(order[n])));
}

TEST(Head, InitIsDeterministic) {
  HeadModel<float> a(3, 3), b(3, 3);
  a.init_params(7);
  b.init_params(7);
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_TRUE(std::ranges::equal(pa[k].value, pb[k].value));
}

TEST(Head, EndToEndWithPpcnFiniteDifferences) {
  for (int s = 0; s < 20; ++s) EXPECT_LT(ppcn::testing::composed_case(s), 1e-4) << "seed " << s;
}

}  // namespace
}  // namespace ppcn::nn
