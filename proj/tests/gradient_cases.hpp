#pragma once

// Finite-difference scenarios shared by the unit tests and the acceptance
// suite. Each returns the worst relative error over every probed scalar.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "ppcn/layers.hpp"
#include "ppcn/loss.hpp"
#include "ppcn/ppcn.hpp"
#include "ppcn/taskhead.hpp"
#include "support.hpp"

namespace ppcn::testing {

using loss::grad_check;
using nn::Mode;

inline double check(std::span<double> values, std::span<const double> analytic, const std::function<double()>& f) {
  return grad_check(values, analytic, f).max_rel_error;
}

inline std::vector<std::uint8_t> random_labels(std::size_t n, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, classes - 1);
  std::vector<std::uint8_t> out(n);
  for (auto& v : out) v = static_cast<std::uint8_t>(d(rng));
  return out;
}

inline double conv1x1_case(std::uint64_t seed) {
  nn::Conv1x1<double> conv(3, 2);
  fill_random(conv.weight(), seed * 7 + 1);
  fill_random(conv.bias(), seed * 7 + 2);
  auto x = random_tensor<double>({2, 3, 2, 3}, seed * 7 + 3);
  const auto r = random_tensor<double>({2, 2, 2, 3}, seed * 7 + 4);
  auto f = [&] { return project(conv.forward(x), r); };
  conv.zero_grad();
  conv.forward(x);
  const auto gx = conv.backward(r);
  const auto gw = copy_of(conv.grad_weight()), gb = copy_of(conv.grad_bias());
  double e = check(conv.weight(), gw, f);
  e = std::max(e, check(conv.bias(), gb, f));
  return std::max(e, check(x.values(), gx.values(), f));
}

inline double relu_case(std::uint64_t seed) {
  nn::Relu<double> relu;
  auto x = random_off_zero({2, 3, 3, 2}, seed * 5 + 1);
  const auto r = random_tensor<double>(x.shape(), seed * 5 + 2);
  relu.forward(x);
  const auto gx = relu.backward(r);
  return check(x.values(), gx.values(), [&] { return project(relu.forward(x), r); });
}

inline double batchnorm_case(std::uint64_t seed) {
  nn::BatchNorm<double> bn(3);
  auto x = random_tensor<double>({2, 3, 2, 2}, seed * 5 + 1);
  const auto r = random_tensor<double>(x.shape(), seed * 5 + 2);
  bn.forward(x, Mode::Train);
  const auto gx = bn.backward(r);
  return check(x.values(), gx.values(), [&] { return project(bn.forward(x, Mode::Train), r); });
}

inline double conv3x3_case(std::uint64_t seed) {
  nn::Conv3x3<double> conv(2, 3);
  fill_random(conv.weight(), seed * 7 + 1, 0.5);
  fill_random(conv.bias(), seed * 7 + 2);
  auto x = random_tensor<double>({2, 2, 4, 5}, seed * 7 + 3);
  const auto r = random_tensor<double>({2, 3, 4, 5}, seed * 7 + 4);
  auto f = [&] { return project(conv.forward(x), r); };
  conv.zero_grad();
  conv.forward(x);
  const auto gx = conv.backward(r);
  const auto gw = copy_of(conv.grad_weight()), gb = copy_of(conv.grad_bias());
  double e = check(conv.weight(), gw, f);
  e = std::max(e, check(conv.bias(), gb, f));
  return std::max(e, check(x.values(), gx.values(), f));
}

inline double softmax_ce_case(std::uint64_t seed) {
  auto logits = random_tensor<double>({2, 3, 3, 3}, seed * 3 + 1);
  const auto labels = random_labels(2 * 3 * 3, 3, seed * 3 + 2);
  nn::SoftmaxCrossEntropy<double> ce;
  ce.forward(logits, labels);
  const auto g = ce.backward();
  return check(logits.values(), g.values(), [&] {
    nn::SoftmaxCrossEntropy<double> probe;
    return probe.forward(logits, labels);
  });
}

inline double fitting_loss_case(std::uint64_t seed) {
  auto pred = random_tensor<double>({2, 3, 3, 3}, seed * 3 + 1);
  const auto target = random_tensor<double>({2, 3, 3, 3}, seed * 3 + 2);
  const auto g = loss::fitting_loss_backward(pred, target);
  return check(pred.values(), g.values(), [&] { return loss::fitting_loss(pred, target); });
}

/// Smallest |pre-activation| over every ReLU in a train-mode pass through
/// `ppcn` and (optionally) `head`. Central differences are only a valid oracle
/// when no probe can cross a ReLU kink, so composed cases redraw their random
/// instance until this exceeds kKinkMargin.
inline double relu_margin(nn::PpcnModel<double>& ppcn, nn::HeadModel<double>* head, const Tensor<double>& x) {
  double margin = std::numeric_limits<double>::infinity();
  auto scan = [&](const Tensor<double>& z) {
    for (double v : z.values()) margin = std::min(margin, std::abs(v));
  };
  Tensor<double> h = x;
  for (auto& unit : ppcn.units()) {
    h = unit.conv.forward(h);
    scan(h);
    h = unit.bn.forward(unit.relu.forward(h), Mode::Train);
  }
  h = ppcn.output_layer().forward(h);
  if (head) {
    nn::Relu<double> relu;
    h = head->conv1().forward(h);
    scan(h);
    h = head->conv2().forward(relu.forward(h));
    scan(h);
  }
  return margin;
}

inline constexpr double kKinkMargin = 1e-3;
inline constexpr int kMaxRedraws = 50;

/// PPCN 4-2-3 trained against the fitting loss on a 2-sample 2x2 batch.
inline double ppcn_fit_case(std::uint64_t seed) {
  for (int attempt = 0;; ++attempt) {
    const std::uint64_t s = seed * 1000 + attempt;
    nn::PpcnModel<double> model(nn::parse_structure("4-2-3"));
    model.init_params(s);
    for (auto& p : model.parameters())
      if (p.name.ends_with("bias")) fill_random(p.value, s * 11 + p.name.size(), 0.1);
    auto x = random_tensor<double>({2, 4, 2, 2}, s * 11 + 1);
    if (relu_margin(model, nullptr, x) < kKinkMargin && attempt < kMaxRedraws) continue;
    Tensor<double> target(2, 3, 2, 2);
    std::mt19937_64 rng(s * 11 + 2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : target.values()) v = u(rng);
    auto f = [&] { return loss::fitting_loss(model.forward(x, Mode::Train), target); };
    model.zero_grad();
    const auto pred = model.forward(x, Mode::Train);
    const auto gx = model.backward(loss::fitting_loss_backward(pred, target));
    double e = check(x.values(), gx.values(), f);
    for (auto& p : model.parameters()) e = std::max(e, check(p.value, copy_of(p.grad), f));
    return e;
  }
}

/// PPCN 4-5-3 feeding a head (widths 3, 3; three classes) with softmax
/// cross-entropy: two 4-channel 6x6 samples, every parameter and input probed.
inline double composed_case(std::uint64_t seed) {
  for (int attempt = 0;; ++attempt) {
    const std::uint64_t s = seed * 1000 + attempt;
    nn::PpcnModel<double> ppcn(nn::parse_structure("4-5-3"));
    nn::HeadModel<double> head(3, 3, {3, 3});
    ppcn.init_params(s * 13 + 1);
    head.init_params(s * 13 + 2);
    auto x = random_tensor<double>({2, 4, 6, 6}, s * 13 + 3);
    if (relu_margin(ppcn, &head, x) < kKinkMargin && attempt < kMaxRedraws) continue;
    const auto labels = random_labels(2 * 6 * 6, 3, s * 13 + 4);
    auto f = [&] {
      nn::SoftmaxCrossEntropy<double> ce;
      return ce.forward(head.forward(ppcn.forward(x, Mode::Train)), labels);
    };
    ppcn.zero_grad();
    head.zero_grad();
    nn::SoftmaxCrossEntropy<double> ce;
    ce.forward(head.forward(ppcn.forward(x, Mode::Train)), labels);
    const auto gx = ppcn.backward(head.backward(ce.backward()));
    double e = check(x.values(), gx.values(), f);
    for (auto& p : ppcn.parameters()) e = std::max(e, check(p.value, copy_of(p.grad), f));
    for (auto& p : head.parameters()) e = std::max(e, check(p.value, copy_of(p.grad), f));
    return e;
  }
}

}  // namespace ppcn::testing
