#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ppcn/layers.hpp"

namespace ppcn::nn {

/// 3x3 cross-correlation, stride 1, zero padding 1. Weight layout is
/// out x in x 3 x 3, row-major.
template <typename T>
class Conv3x3 {
 public:
  Conv3x3(int in_channels, int out_channels);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  std::size_t parameter_count() const { return weight_.size() + bias_.size(); }

  std::span<T> weight() { return weight_; }
  std::span<const T> weight() const { return weight_; }
  std::span<T> bias() { return bias_; }
  std::span<const T> bias() const { return bias_; }
  std::span<const T> grad_weight() const { return grad_weight_; }
  std::span<const T> grad_bias() const { return grad_bias_; }

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_out);
  void zero_grad();
  void clear_cache();
  void collect(std::vector<ParamView<T>>& out, const std::string& prefix);

 private:
  int in_, out_;
  std::vector<T> weight_, bias_, grad_weight_, grad_bias_;
  Shape input_shape_;
  std::vector<std::vector<T>> cols_;  // per-sample im2col buffers
  bool has_cache_ = false;
};

struct HeadOptions {
  int width1 = 16;
  int width2 = 16;
  bool operator==(const HeadOptions&) const = default;
};

/// Per-pixel classifier standing in for the task network:
/// conv3x3 -> ReLU -> conv3x3 -> ReLU -> conv1x1 logits (K+1 classes).
template <typename T>
class HeadModel {
 public:
  HeadModel(int in_channels, int num_logits, HeadOptions options = {});

  int in_channels() const { return conv1_.in_channels(); }
  int num_logits() const { return logits_.out_channels(); }
  const HeadOptions& options() const { return options_; }

  Tensor<T> forward(const Tensor<T>& x);
  /// grad_in has in_channels() channels so it chains into an upstream PPCN.
  Tensor<T> backward(const Tensor<T>& grad_logits);

  void init_params(std::uint64_t seed);
  void zero_grad();
  void clear_cache();
  std::vector<ParamView<T>> parameters();
  std::size_t parameter_count() const;

  Conv3x3<T>& conv1() { return conv1_; }
  Conv3x3<T>& conv2() { return conv2_; }
  Conv1x1<T>& logits_layer() { return logits_; }

 private:
  HeadOptions options_;
  Conv3x3<T> conv1_;
  Relu<T> relu1_;
  Conv3x3<T> conv2_;
  Relu<T> relu2_;
  Conv1x1<T> logits_;
};

/// Mean per-pixel softmax cross-entropy over N x (K+1) x H x W logits.
/// Labels are N*H*W class indices in sample, row, column order.
template <typename T>
class SoftmaxCrossEntropy {
 public:
  double forward(const Tensor<T>& logits, std::span<const std::uint8_t> labels);
  /// (softmax - onehot) / (N*H*W)
  Tensor<T> backward() const;

 private:
  Tensor<T> probs_;
  std::vector<std::uint8_t> labels_;
  bool has_cache_ = false;
};

}  // namespace ppcn::nn
