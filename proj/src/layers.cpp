#include "ppcn/layers.hpp"

#include <Eigen/Core>
#include <cmath>

#include "ppcn/parallel.hpp"

namespace ppcn::nn {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using CVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

}  // namespace

// ---------------------------------------------------------------- Conv1x1

template <typename T>
Conv1x1<T>::Conv1x1(int in_channels, int out_channels)
    : in_(in_channels), out_(out_channels) {
  if (in_ < 1 || out_ < 1) throw StructuralError("conv1x1 channel counts must be >= 1");
  const auto n = static_cast<std::size_t>(in_) * out_;
  weight_.assign(n, T(0));
  grad_weight_.assign(n, T(0));
  bias_.assign(static_cast<std::size_t>(out_), T(0));
  grad_bias_.assign(static_cast<std::size_t>(out_), T(0));
}

template <typename T>
Tensor<T> Conv1x1<T>::forward(const Tensor<T>& x) {
  if (x.c() != in_)
    throw StructuralError("conv1x1 expects " + std::to_string(in_) + " input channels, got " +
                          std::to_string(x.c()));
  cache_ = x;
  has_cache_ = true;
  const auto pixels = static_cast<Eigen::Index>(x.shape().plane());
  Tensor<T> y(x.n(), out_, x.h(), x.w());
  CMapR<T> w(weight_.data(), out_, in_);
  CVec<T> b(bias_.data(), out_);
  parallel::for_each(x.n(), [&](int n) {
    CMapR<T> xs(x.sample(n).data(), in_, pixels);
    MapR<T> ys(y.sample(n).data(), out_, pixels);
    ys.noalias() = w * xs;
    ys.colwise() += b;
  });
  debug_check_finite(y, "conv1x1 forward");
  return y;
}

template <typename T>
Tensor<T> Conv1x1<T>::backward(const Tensor<T>& grad_out) {
  if (!has_cache_) throw StateError("conv1x1 backward called before forward");
  require_shape(grad_out.shape(), Shape{cache_.n(), out_, cache_.h(), cache_.w()}, "conv1x1 backward");
  const int batch = cache_.n();
  const auto pixels = static_cast<Eigen::Index>(cache_.shape().plane());
  Tensor<T> grad_in(cache_.shape());
  CMapR<T> w(weight_.data(), out_, in_);

  // Per-sample partials, reduced in sample order.
  std::vector<MatR<T>> gw(static_cast<std::size_t>(batch));
  std::vector<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(static_cast<std::size_t>(batch));
  parallel::for_each(batch, [&](int n) {
    CMapR<T> g(grad_out.sample(n).data(), out_, pixels);
    CMapR<T> xs(cache_.sample(n).data(), in_, pixels);
    MapR<T> gi(grad_in.sample(n).data(), in_, pixels);
    gi.noalias() = w.transpose() * g;
    gw[n].noalias() = g * xs.transpose();
    gb[n].resize(out_);
    for (int o = 0; o < out_; ++o) {
      double s = 0.0;
      for (Eigen::Index p = 0; p < pixels; ++p) s += g(o, p);
      gb[n][o] = static_cast<T>(s);
    }
  });
  MapR<T> acc_w(grad_weight_.data(), out_, in_);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> acc_b(grad_bias_.data(), out_);
  for (int n = 0; n < batch; ++n) {
    acc_w += gw[n];
    acc_b += gb[n];
  }
  debug_check_finite(grad_in, "conv1x1 backward");
  return grad_in;
}

template <typename T>
void Conv1x1<T>::zero_grad() {
  std::fill(grad_weight_.begin(), grad_weight_.end(), T(0));
  std::fill(grad_bias_.begin(), grad_bias_.end(), T(0));
}

template <typename T>
void Conv1x1<T>::collect(std::vector<ParamView<T>>& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", weight_, grad_weight_});
  out.push_back({prefix + ".bias", bias_, grad_bias_});
}

// ---------------------------------------------------------------- Relu

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x) {
  cache_ = x;
  has_cache_ = true;
  Tensor<T> y(x.shape());
  const T* src = x.data();
  T* dst = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& grad_out) {
  if (!has_cache_) throw StateError("relu backward called before forward");
  require_shape(grad_out.shape(), cache_.shape(), "relu backward");
  Tensor<T> g(grad_out.shape());
  const T* x = cache_.data();
  const T* go = grad_out.data();
  T* gi = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) gi[i] = x[i] > T(0) ? go[i] : T(0);
  return g;
}

// ---------------------------------------------------------------- BatchNorm

namespace {

// Fixed-order reductions over eight interleaved lanes: vectorizable, and the
// result depends only on the values, not on memory alignment.
constexpr std::size_t kLanes = 8;

double combine(const double (&acc)[kLanes]) {
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
double lane_sum(std::span<const T> v) {
  double acc[kLanes] = {};
  const std::size_t body = v.size() - v.size() % kLanes;
  for (std::size_t i = 0; i < body; i += kLanes)
    for (std::size_t k = 0; k < kLanes; ++k) acc[k] += double(v[i + k]);
  for (std::size_t i = body; i < v.size(); ++i) acc[i - body] += double(v[i]);
  return combine(acc);
}

template <typename T>
double lane_sum_sq_dev(std::span<const T> v, double mean) {
  double acc[kLanes] = {};
  const std::size_t body = v.size() - v.size() % kLanes;
  for (std::size_t i = 0; i < body; i += kLanes)
    for (std::size_t k = 0; k < kLanes; ++k) {
      const double d = double(v[i + k]) - mean;
      acc[k] += d * d;
    }
  for (std::size_t i = body; i < v.size(); ++i) {
    const double d = double(v[i]) - mean;
    acc[i - body] += d * d;
  }
  return combine(acc);
}

template <typename T>
double lane_dot(std::span<const T> a, std::span<const T> b) {
  double acc[kLanes] = {};
  const std::size_t body = a.size() - a.size() % kLanes;
  for (std::size_t i = 0; i < body; i += kLanes)
    for (std::size_t k = 0; k < kLanes; ++k) acc[k] += double(a[i + k]) * double(b[i + k]);
  for (std::size_t i = body; i < a.size(); ++i) acc[i - body] += double(a[i]) * double(b[i]);
  return combine(acc);
}

}  // namespace

template <typename T>
BatchNorm<T>::BatchNorm(int channels, double eps, double momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      running_mean_(static_cast<std::size_t>(channels), T(0)),
      running_var_(static_cast<std::size_t>(channels), T(1)) {
  if (channels < 1) throw StructuralError("batchnorm needs at least one channel");
  if (!(eps > 0.0)) throw UsageError("batchnorm eps must be positive");
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.c() != channels_)
    throw StructuralError("batchnorm expects " + std::to_string(channels_) + " channels, got " +
                          std::to_string(x.c()));
  const std::size_t plane = x.shape().plane();
  const std::size_t m = plane * static_cast<std::size_t>(x.n());
  if (mode == Mode::Train && m < 2)
    throw UsageError("batchnorm train mode needs at least 2 values per channel (got " +
                     std::to_string(m) + ")");
  Tensor<T> y(x.shape());
  xhat_ = Tensor<T>(x.shape());
  inv_std_.assign(static_cast<std::size_t>(channels_), T(0));
  mode_ = mode;

  parallel::for_each(channels_, [&](int c) {
    double mean, var;
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (int n = 0; n < x.n(); ++n) sum += lane_sum(x.plane(n, c));
      mean = sum / double(m);
      double sq = 0.0;
      for (int n = 0; n < x.n(); ++n) sq += lane_sum_sq_dev(x.plane(n, c), mean);
      var = sq / double(m);
      const double unbiased = sq / double(m - 1);
      running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
      running_var_[c] = static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * unbiased);
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = static_cast<T>(inv);
    for (int n = 0; n < x.n(); ++n) {
      auto src = x.plane(n, c);
      auto xh = xhat_.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) xh[i] = static_cast<T>((src[i] - mean) * inv);
      std::ranges::copy(xh, y.plane(n, c).begin());
    }
  });
  has_cache_ = true;
  debug_check_finite(y, "batchnorm forward");
  return y;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& grad_out) {
  if (!has_cache_) throw StateError("batchnorm backward called before forward");
  require_shape(grad_out.shape(), xhat_.shape(), "batchnorm backward");
  Tensor<T> grad_in(grad_out.shape());
  const std::size_t plane = grad_out.shape().plane();
  const double m = double(plane) * grad_out.n();
  parallel::for_each(channels_, [&](int c) {
    const double inv = inv_std_[c];
    if (mode_ == Mode::Infer) {
      for (int n = 0; n < grad_out.n(); ++n) {
        auto g = grad_out.plane(n, c);
        auto gi = grad_in.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) gi[i] = static_cast<T>(g[i] * inv);
      }
      return;
    }
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < grad_out.n(); ++n) {
      sum_g += lane_sum(grad_out.plane(n, c));
      sum_gx += lane_dot(grad_out.plane(n, c), std::span<const T>(xhat_.plane(n, c)));
    }
    const double mean_g = sum_g / m, mean_gx = sum_gx / m;
    for (int n = 0; n < grad_out.n(); ++n) {
      auto g = grad_out.plane(n, c);
      auto xh = xhat_.plane(n, c);
      auto gi = grad_in.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i)
        gi[i] = static_cast<T>(inv * (g[i] - mean_g - xh[i] * mean_gx));
    }
  });
  debug_check_finite(grad_in, "batchnorm backward");
  return grad_in;
}

template <typename T>
void BatchNorm<T>::clear_cache() {
  xhat_ = Tensor<T>();
  inv_std_.clear();
  has_cache_ = false;
}

template <typename T>
void BatchNorm<T>::collect(std::vector<BufferView<T>>& out, const std::string& prefix) {
  out.push_back({prefix + ".running_mean", running_mean_});
  out.push_back({prefix + ".running_var", running_var_});
}

template class Conv1x1<float>;
template class Conv1x1<double>;
template class Relu<float>;
template class Relu<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;

}  // namespace ppcn::nn
