#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ppcn/tensor.hpp"

namespace ppcn::loss {

enum class FitNorm {
  L2,         // un-squared l2 norm per plane (default)
  SquaredL2,  // smooth variant, for comparison only
};

/// Normalized ground-truth planes, each N x 1 x H x W.
template <typename T>
struct FitTargets {
  Tensor<T> y_s0, y_dolp, y_aop;

  /// N x 3 x H x W in (S0, DoLP, AoP) channel order.
  Tensor<T> stacked() const;
  static FitTargets from_stacked(const Tensor<T>& stacked);
};

/// (1/N) sum_n (1/(W*H)) (||e_S0|| + ||e_DoLP|| + ||e_AoP||), with e the
/// per-sample residual plane of each channel. `pred` and `targets` are both
/// N x 3 x H x W in (S0, DoLP, AoP) order.
template <typename T>
double fitting_loss(const Tensor<T>& pred, const Tensor<T>& targets, FitNorm norm = FitNorm::L2);
template <typename T>
double fitting_loss(const Tensor<T>& pred, const FitTargets<T>& targets, FitNorm norm = FitNorm::L2);

/// Planes with zero residual norm get zero gradient.
template <typename T>
Tensor<T> fitting_loss_backward(const Tensor<T>& pred, const Tensor<T>& targets,
                                FitNorm norm = FitNorm::L2);

/// Per-sample losses (the summands before the 1/N mean).
template <typename T>
std::vector<double> fitting_loss_per_sample(const Tensor<T>& pred, const Tensor<T>& targets,
                                            FitNorm norm = FitNorm::L2);

// ---------------------------------------------------------------- metrics

/// Per-pixel argmax over channels; ties go to the lower class index.
template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits);

template <typename T>
double pixel_accuracy(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

/// |pred ∩ gt| / |pred ∪ gt| for one class; 1 when both are empty.
template <typename T>
double class_iou(const Tensor<T>& logits, std::span<const std::uint8_t> labels, int cls);

/// Running counts so metrics can be aggregated over many batches.
class SegmentationCounts {
 public:
  explicit SegmentationCounts(int num_classes = 0);

  void add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> labels);
  double accuracy() const;
  double iou(int cls) const;
  int num_classes() const { return static_cast<int>(intersection_.size()); }
  std::size_t total() const { return total_; }

 private:
  std::size_t correct_ = 0, total_ = 0;
  std::vector<std::size_t> intersection_, union_;
};

// ---------------------------------------------------------------- grad check

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every parameter; otherwise a seeded random subset of this size.
  std::size_t max_checks = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Central finite differences on `params` against `analytic`. Error per
/// parameter is |a - n| / max(|a|, |n|, 1e-8). `loss` must re-evaluate the
/// function from the current contents of `params`, which are restored after
/// each probe. Throws NumericalError naming the parameter index when a loss
/// or gradient value is not finite.
GradCheckReport grad_check(std::span<double> params, std::span<const double> analytic,
                           const std::function<double()>& loss, const GradCheckOptions& options = {});

}  // namespace ppcn::loss
