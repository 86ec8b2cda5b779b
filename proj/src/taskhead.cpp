#include "ppcn/taskhead.hpp"

#include <Eigen/Core>
#include <cmath>
#include <random>

#include "ppcn/parallel.hpp"

namespace ppcn::nn {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

// cols[(i*9 + ky*3 + kx), y*W + x] = x[i, y+ky-1, x+kx-1], zero outside.
template <typename T>
void im2col(std::span<const T> src, int channels, int h, int w, std::vector<T>& cols) {
  const std::size_t pixels = static_cast<std::size_t>(h) * w;
  cols.assign(static_cast<std::size_t>(channels) * 9 * pixels, T(0));
  for (int c = 0; c < channels; ++c) {
    const T* plane = src.data() + c * pixels;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* row = cols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * pixels;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= w) continue;
            row[y * w + x] = plane[sy * w + sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int channels, int h, int w, std::span<T> dst) {
  const std::size_t pixels = static_cast<std::size_t>(h) * w;
  std::fill(dst.begin(), dst.end(), T(0));
  for (int c = 0; c < channels; ++c) {
    T* plane = dst.data() + c * pixels;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * pixels;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= w) continue;
            plane[sy * w + sx] += row[y * w + x];
          }
        }
      }
    }
  }
}

template <typename T>
void he_init(std::mt19937_64& rng, std::span<T> weight, std::span<T> bias, int fan_in) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (T& v : weight) v = static_cast<T>(dist(rng));
  std::fill(bias.begin(), bias.end(), T(0));
}

}  // namespace

// ---------------------------------------------------------------- Conv3x3

template <typename T>
Conv3x3<T>::Conv3x3(int in_channels, int out_channels) : in_(in_channels), out_(out_channels) {
  if (in_ < 1 || out_ < 1) throw StructuralError("conv3x3 channel counts must be >= 1");
  const auto n = static_cast<std::size_t>(out_) * in_ * 9;
  weight_.assign(n, T(0));
  grad_weight_.assign(n, T(0));
  bias_.assign(static_cast<std::size_t>(out_), T(0));
  grad_bias_.assign(static_cast<std::size_t>(out_), T(0));
}

template <typename T>
Tensor<T> Conv3x3<T>::forward(const Tensor<T>& x) {
  if (x.c() != in_)
    throw StructuralError("conv3x3 expects " + std::to_string(in_) + " input channels, got " +
                          std::to_string(x.c()));
  if (x.h() < 1 || x.w() < 1) throw StructuralError("conv3x3 needs a non-empty image");
  input_shape_ = x.shape();
  cols_.resize(static_cast<std::size_t>(x.n()));
  const auto pixels = static_cast<Eigen::Index>(x.shape().plane());
  Tensor<T> y(x.n(), out_, x.h(), x.w());
  CMapR<T> w(weight_.data(), out_, in_ * 9);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias_.data(), out_);
  parallel::for_each(x.n(), [&](int n) {
    im2col<T>(x.sample(n), in_, x.h(), x.w(), cols_[n]);
    CMapR<T> cols(cols_[n].data(), in_ * 9, pixels);
    MapR<T> ys(y.sample(n).data(), out_, pixels);
    ys.noalias() = w * cols;
    ys.colwise() += b;
  });
  has_cache_ = true;
  debug_check_finite(y, "conv3x3 forward");
  return y;
}

template <typename T>
Tensor<T> Conv3x3<T>::backward(const Tensor<T>& grad_out) {
  if (!has_cache_) throw StateError("conv3x3 backward called before forward");
  require_shape(grad_out.shape(), Shape{input_shape_.n, out_, input_shape_.h, input_shape_.w},
                "conv3x3 backward");
  const int batch = input_shape_.n;
  const auto pixels = static_cast<Eigen::Index>(input_shape_.plane());
  Tensor<T> grad_in(input_shape_);
  CMapR<T> w(weight_.data(), out_, in_ * 9);
  std::vector<MatR<T>> gw(static_cast<std::size_t>(batch));
  std::vector<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(static_cast<std::size_t>(batch));
  parallel::for_each(batch, [&](int n) {
    CMapR<T> g(grad_out.sample(n).data(), out_, pixels);
    CMapR<T> cols(cols_[n].data(), in_ * 9, pixels);
    MatR<T> gcols = w.transpose() * g;
    col2im<T>(gcols.data(), in_, input_shape_.h, input_shape_.w, grad_in.sample(n));
    gw[n].noalias() = g * cols.transpose();
    gb[n].resize(out_);
    for (int o = 0; o < out_; ++o) {
      double s = 0.0;
      for (Eigen::Index p = 0; p < pixels; ++p) s += g(o, p);
      gb[n][o] = static_cast<T>(s);
    }
  });
  MapR<T> acc_w(grad_weight_.data(), out_, in_ * 9);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> acc_b(grad_bias_.data(), out_);
  for (int n = 0; n < batch; ++n) {
    acc_w += gw[n];
    acc_b += gb[n];
  }
  return grad_in;
}

template <typename T>
void Conv3x3<T>::zero_grad() {
  std::fill(grad_weight_.begin(), grad_weight_.end(), T(0));
  std::fill(grad_bias_.begin(), grad_bias_.end(), T(0));
}

template <typename T>
void Conv3x3<T>::clear_cache() {
  cols_.clear();
  has_cache_ = false;
}

template <typename T>
void Conv3x3<T>::collect(std::vector<ParamView<T>>& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", weight_, grad_weight_});
  out.push_back({prefix + ".bias", bias_, grad_bias_});
}

// ---------------------------------------------------------------- HeadModel

template <typename T>
HeadModel<T>::HeadModel(int in_channels, int num_logits, HeadOptions options)
    : options_(options),
      conv1_(in_channels, options.width1),
      conv2_(options.width1, options.width2),
      logits_(options.width2, num_logits) {
  if (num_logits < 2) throw StructuralError("task head needs at least two classes");
}

template <typename T>
Tensor<T> HeadModel<T>::forward(const Tensor<T>& x) {
  Tensor<T> h = relu1_.forward(conv1_.forward(x));
  h = relu2_.forward(conv2_.forward(h));
  return logits_.forward(h);
}

template <typename T>
Tensor<T> HeadModel<T>::backward(const Tensor<T>& grad_logits) {
  Tensor<T> g = logits_.backward(grad_logits);
  g = conv2_.backward(relu2_.backward(g));
  return conv1_.backward(relu1_.backward(g));
}

template <typename T>
void HeadModel<T>::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  he_init<T>(rng, conv1_.weight(), conv1_.bias(), conv1_.in_channels() * 9);
  he_init<T>(rng, conv2_.weight(), conv2_.bias(), conv2_.in_channels() * 9);
  he_init<T>(rng, logits_.weight(), logits_.bias(), logits_.in_channels());
}

template <typename T>
void HeadModel<T>::zero_grad() {
  conv1_.zero_grad();
  conv2_.zero_grad();
  logits_.zero_grad();
}

template <typename T>
void HeadModel<T>::clear_cache() {
  conv1_.clear_cache();
  relu1_.clear_cache();
  conv2_.clear_cache();
  relu2_.clear_cache();
  logits_.clear_cache();
}

template <typename T>
std::vector<ParamView<T>> HeadModel<T>::parameters() {
  std::vector<ParamView<T>> out;
  conv1_.collect(out, "head.conv1");
  conv2_.collect(out, "head.conv2");
  logits_.collect(out, "head.logits");
  return out;
}

template <typename T>
std::size_t HeadModel<T>::parameter_count() const {
  return conv1_.parameter_count() + conv2_.parameter_count() + logits_.parameter_count();
}

// ---------------------------------------------------------------- softmax CE

template <typename T>
double SoftmaxCrossEntropy<T>::forward(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  const std::size_t plane = logits.shape().plane();
  const std::size_t count = plane * static_cast<std::size_t>(logits.n());
  if (labels.size() != count)
    throw StructuralError("label count " + std::to_string(labels.size()) + " does not match logits " +
                          logits.shape().str());
  const int k = logits.c();
  for (auto l : labels)
    if (l >= k) throw InputError("label " + std::to_string(l) + " out of range for " + std::to_string(k) + " classes");

  probs_ = Tensor<T>(logits.shape());
  labels_.assign(labels.begin(), labels.end());
  double total = 0.0;
  std::vector<double> z(static_cast<std::size_t>(k));
  for (int n = 0; n < logits.n(); ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      double mx = -INFINITY;
      for (int c = 0; c < k; ++c) {
        z[c] = logits.plane(n, c)[p];
        mx = std::max(mx, z[c]);
      }
      double sum = 0.0;
      for (int c = 0; c < k; ++c) {
        z[c] = std::exp(z[c] - mx);
        sum += z[c];
      }
      const int label = labels[n * plane + p];
      for (int c = 0; c < k; ++c) probs_.plane(n, c)[p] = static_cast<T>(z[c] / sum);
      // -log softmax = log(sum) - (z_label - max)
      total += std::log(sum) - (double(logits.plane(n, label)[p]) - mx);
    }
  }
  has_cache_ = true;
  return total / double(count);
}

template <typename T>
Tensor<T> SoftmaxCrossEntropy<T>::backward() const {
  if (!has_cache_) throw StateError("softmax cross-entropy backward called before forward");
  Tensor<T> g = probs_;
  const std::size_t plane = g.shape().plane();
  const double scale = 1.0 / double(plane * static_cast<std::size_t>(g.n()));
  for (int n = 0; n < g.n(); ++n) {
    for (int c = 0; c < g.c(); ++c) {
      auto gp = g.plane(n, c);
      for (std::size_t p = 0; p < plane; ++p) {
        const double onehot = labels_[n * plane + p] == c ? 1.0 : 0.0;
        gp[p] = static_cast<T>((double(gp[p]) - onehot) * scale);
      }
    }
  }
  return g;
}

template class Conv3x3<float>;
template class Conv3x3<double>;
template class HeadModel<float>;
template class HeadModel<double>;
template class SoftmaxCrossEntropy<float>;
template class SoftmaxCrossEntropy<double>;

}  // namespace ppcn::nn
