#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ppcn/tensor.hpp"

namespace ppcn::nn {

enum class Mode { Train, Infer };

/// Trainable parameter block and its gradient accumulator.
template <typename T>
struct ParamView {
  std::string name;
  std::span<T> value;
  std::span<T> grad;
};

/// Non-trainable state that still has to be checkpointed (BN running stats).
template <typename T>
struct BufferView {
  std::string name;
  std::span<T> value;
};

/// Pixel-wise linear map between channel sets: out[n,o,p] = sum_i W[o,i] x[n,i,p] + b[o].
template <typename T>
class Conv1x1 {
 public:
  Conv1x1(int in_channels, int out_channels);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  std::size_t parameter_count() const { return weight_.size() + bias_.size(); }

  /// Row-major out x in.
  std::span<T> weight() { return weight_; }
  std::span<const T> weight() const { return weight_; }
  std::span<T> bias() { return bias_; }
  std::span<const T> bias() const { return bias_; }
  std::span<const T> grad_weight() const { return grad_weight_; }
  std::span<const T> grad_bias() const { return grad_bias_; }

  Tensor<T> forward(const Tensor<T>& x);
  /// Returns grad wrt the cached input and accumulates weight/bias grads.
  Tensor<T> backward(const Tensor<T>& grad_out);

  void zero_grad();
  void clear_cache() { cache_ = Tensor<T>(); has_cache_ = false; }
  void collect(std::vector<ParamView<T>>& out, const std::string& prefix);

 private:
  int in_, out_;
  std::vector<T> weight_, bias_, grad_weight_, grad_bias_;
  Tensor<T> cache_;
  bool has_cache_ = false;
};

template <typename T>
class Relu {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  /// Subgradient at 0 is 0.
  Tensor<T> backward(const Tensor<T>& grad_out);
  void clear_cache() { cache_ = Tensor<T>(); has_cache_ = false; }

 private:
  Tensor<T> cache_;
  bool has_cache_ = false;
};

/// Per-channel batch normalization without affine parameters.
template <typename T>
class BatchNorm {
 public:
  explicit BatchNorm(int channels, double eps = 1e-5, double momentum = 0.1);

  int channels() const { return channels_; }
  double eps() const { return eps_; }
  double momentum() const { return momentum_; }
  std::span<T> running_mean() { return running_mean_; }
  std::span<const T> running_mean() const { return running_mean_; }
  std::span<T> running_var() { return running_var_; }
  std::span<const T> running_var() const { return running_var_; }

  /// Train mode normalizes with batch statistics over (N,H,W) and updates the
  /// running statistics; it needs at least two values per channel.
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& grad_out);

  void clear_cache();
  void collect(std::vector<BufferView<T>>& out, const std::string& prefix);

 private:
  int channels_;
  double eps_, momentum_;
  std::vector<T> running_mean_, running_var_;
  // Cached for backward.
  Mode mode_ = Mode::Train;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool has_cache_ = false;
};

}  // namespace ppcn::nn
