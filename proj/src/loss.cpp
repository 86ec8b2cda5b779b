#include "ppcn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace ppcn::loss {

namespace {

template <typename T>
void check_fit_shapes(const Tensor<T>& pred, const Tensor<T>& targets) {
  if (pred.c() != 3) throw StructuralError("fitting loss expects 3 prediction channels, got " + std::to_string(pred.c()));
  require_shape(targets.shape(), pred.shape(), "fitting loss targets");
}

template <typename T>
double residual_norm(std::span<const T> a, std::span<const T> b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = double(a[i]) - double(b[i]);
    sq += e * e;
  }
  return sq;
}

}  // namespace

template <typename T>
Tensor<T> FitTargets<T>::stacked() const {
  const Shape s = y_s0.shape();
  if (s.c != 1) throw StructuralError("fit target planes must have one channel");
  require_shape(y_dolp.shape(), s, "DoLP target");
  require_shape(y_aop.shape(), s, "AoP target");
  Tensor<T> out(s.n, 3, s.h, s.w);
  for (int n = 0; n < s.n; ++n) {
    std::ranges::copy(y_s0.plane(n, 0), out.plane(n, 0).begin());
    std::ranges::copy(y_dolp.plane(n, 0), out.plane(n, 1).begin());
    std::ranges::copy(y_aop.plane(n, 0), out.plane(n, 2).begin());
  }
  return out;
}

template <typename T>
FitTargets<T> FitTargets<T>::from_stacked(const Tensor<T>& stacked) {
  if (stacked.c() != 3) throw StructuralError("stacked fit targets need 3 channels");
  FitTargets t{Tensor<T>(stacked.n(), 1, stacked.h(), stacked.w()),
               Tensor<T>(stacked.n(), 1, stacked.h(), stacked.w()),
               Tensor<T>(stacked.n(), 1, stacked.h(), stacked.w())};
  for (int n = 0; n < stacked.n(); ++n) {
    std::ranges::copy(stacked.plane(n, 0), t.y_s0.plane(n, 0).begin());
    std::ranges::copy(stacked.plane(n, 1), t.y_dolp.plane(n, 0).begin());
    std::ranges::copy(stacked.plane(n, 2), t.y_aop.plane(n, 0).begin());
  }
  return t;
}

template <typename T>
std::vector<double> fitting_loss_per_sample(const Tensor<T>& pred, const Tensor<T>& targets, FitNorm norm) {
  check_fit_shapes(pred, targets);
  const double area = double(pred.shape().plane());
  std::vector<double> out(static_cast<std::size_t>(pred.n()), 0.0);
  for (int n = 0; n < pred.n(); ++n) {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double sq = residual_norm(pred.plane(n, k), targets.plane(n, k));
      s += norm == FitNorm::L2 ? std::sqrt(sq) : sq;
    }
    out[n] = s / area;
  }
  return out;
}

template <typename T>
double fitting_loss(const Tensor<T>& pred, const Tensor<T>& targets, FitNorm norm) {
  const auto per = fitting_loss_per_sample(pred, targets, norm);
  if (per.empty()) return 0.0;
  return std::accumulate(per.begin(), per.end(), 0.0) / double(per.size());
}

template <typename T>
double fitting_loss(const Tensor<T>& pred, const FitTargets<T>& targets, FitNorm norm) {
  return fitting_loss(pred, targets.stacked(), norm);
}

template <typename T>
Tensor<T> fitting_loss_backward(const Tensor<T>& pred, const Tensor<T>& targets, FitNorm norm) {
  check_fit_shapes(pred, targets);
  Tensor<T> grad(pred.shape());
  const double scale = 1.0 / (double(pred.shape().plane()) * pred.n());
  for (int n = 0; n < pred.n(); ++n) {
    for (int k = 0; k < 3; ++k) {
      auto p = pred.plane(n, k);
      auto y = targets.plane(n, k);
      auto g = grad.plane(n, k);
      double factor;
      if (norm == FitNorm::L2) {
        const double l2 = std::sqrt(residual_norm(p, y));
        if (l2 == 0.0) continue;
        factor = scale / l2;
      } else {
        factor = 2.0 * scale;
      }
      for (std::size_t i = 0; i < p.size(); ++i) g[i] = static_cast<T>((double(p[i]) - double(y[i])) * factor);
    }
  }
  return grad;
}

// ---------------------------------------------------------------- metrics

template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits) {
  const std::size_t plane = logits.shape().plane();
  std::vector<std::uint8_t> out(plane * static_cast<std::size_t>(logits.n()), 0);
  for (int n = 0; n < logits.n(); ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      int best = 0;
      T best_v = logits.plane(n, 0)[p];
      for (int c = 1; c < logits.c(); ++c) {
        const T v = logits.plane(n, c)[p];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out[n * plane + p] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

template <typename T>
double pixel_accuracy(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  SegmentationCounts counts(logits.c());
  counts.add(argmax_labels(logits), labels);
  return counts.accuracy();
}

template <typename T>
double class_iou(const Tensor<T>& logits, std::span<const std::uint8_t> labels, int cls) {
  SegmentationCounts counts(std::max(logits.c(), cls + 1));
  counts.add(argmax_labels(logits), labels);
  return counts.iou(cls);
}

SegmentationCounts::SegmentationCounts(int num_classes)
    : intersection_(static_cast<std::size_t>(num_classes), 0), union_(static_cast<std::size_t>(num_classes), 0) {}

void SegmentationCounts::add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> labels) {
  if (predicted.size() != labels.size()) throw StructuralError("prediction and label counts differ");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predicted[i], g = labels[i];
    const int needed = std::max(p, g) + 1;
    if (needed > num_classes()) {
      intersection_.resize(static_cast<std::size_t>(needed), 0);
      union_.resize(static_cast<std::size_t>(needed), 0);
    }
    if (p == g) {
      ++correct_;
      ++intersection_[p];
      ++union_[p];
    } else {
      ++union_[p];
      ++union_[g];
    }
  }
  total_ += labels.size();
}

double SegmentationCounts::accuracy() const {
  return total_ == 0 ? 0.0 : double(correct_) / double(total_);
}

double SegmentationCounts::iou(int cls) const {
  if (cls < 0) throw UsageError("negative class index");
  if (cls >= num_classes() || union_[cls] == 0) return 1.0;
  return double(intersection_[cls]) / double(union_[cls]);
}

// ---------------------------------------------------------------- grad check

GradCheckReport grad_check(std::span<double> params, std::span<const double> analytic,
                           const std::function<double()>& loss, const GradCheckOptions& options) {
  if (params.size() != analytic.size()) throw StructuralError("grad_check: parameter and gradient sizes differ");
  std::vector<std::size_t> indices(params.size());
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  if (options.max_checks > 0 && options.max_checks < indices.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(options.max_checks);
    std::sort(indices.begin(), indices.end());
  }
  GradCheckReport report;
  const double h = options.step;
  for (std::size_t idx : indices) {
    const double saved = params[idx];
    params[idx] = saved + h;
    const double up = loss();
    params[idx] = saved - h;
    const double down = loss();
    params[idx] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[idx];
    if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(a))
      throw NumericalError("grad_check: non-finite value at parameter " + std::to_string(idx));
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double err = std::abs(a - numeric) / denom;
    if (report.checked == 0 || err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = idx;
    }
    ++report.checked;
  }
  return report;
}

#define PPCN_INSTANTIATE(T)                                                                              \
  template struct FitTargets<T>;                                                                         \
  template double fitting_loss<T>(const Tensor<T>&, const Tensor<T>&, FitNorm);                         \
  template double fitting_loss<T>(const Tensor<T>&, const FitTargets<T>&, FitNorm);                     \
  template Tensor<T> fitting_loss_backward<T>(const Tensor<T>&, const Tensor<T>&, FitNorm);             \
  template std::vector<double> fitting_loss_per_sample<T>(const Tensor<T>&, const Tensor<T>&, FitNorm); \
  template std::vector<std::uint8_t> argmax_labels<T>(const Tensor<T>&);                                \
  template double pixel_accuracy<T>(const Tensor<T>&, std::span<const std::uint8_t>);                   \
  template double class_iou<T>(const Tensor<T>&, std::span<const std::uint8_t>, int);

PPCN_INSTANTIATE(float)
PPCN_INSTANTIATE(double)

#undef PPCN_INSTANTIATE

}  // namespace ppcn::loss
