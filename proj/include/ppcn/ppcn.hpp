#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ppcn/layers.hpp"

namespace ppcn::nn {

/// Output-image count of every unit, e.g. 4-8-16-8-3: input channels, the
/// fusion-unit widths, then the number of constructed parameter images.
struct StructureSpec {
  std::vector<int> sizes;

  int input_channels() const { return sizes.front(); }
  int output_channels() const { return sizes.back(); }
  int fusion_units() const { return static_cast<int>(sizes.size()) - 2; }
  std::string str() const;
  bool operator==(const StructureSpec&) const = default;
};

/// Dash-separated positive integers, at least two. Throws ParseError naming
/// the offending token.
StructureSpec parse_structure(std::string_view text);

/// Trainable scalars: sum over consecutive pairs of (c_in * c_out + c_out).
std::size_t parameter_count(const StructureSpec& spec);

struct PpcnOptions {
  bool bn_before_relu = false;  // ablation: Conv -> BN -> ReLU
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  bool operator==(const PpcnOptions&) const = default;
};

/// Polarization-parameter-constructing network: a stack of pixel-wise fusion
/// units (Conv1x1 -> ReLU -> BN) followed by a bare linear Conv1x1 producing
/// the parameter images. No spatial mixing anywhere.
template <typename T>
class PpcnModel {
 public:
  struct FusionUnit {
    Conv1x1<T> conv;
    Relu<T> relu;
    BatchNorm<T> bn;
  };

  explicit PpcnModel(StructureSpec spec, PpcnOptions options = {});

  const StructureSpec& structure() const { return spec_; }
  const PpcnOptions& options() const { return options_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& grad_out);

  /// He-normal weights (variance 2 / C_in), zero biases.
  void init_params(std::uint64_t seed);
  void zero_grad();
  void clear_cache();

  std::vector<ParamView<T>> parameters();
  std::vector<BufferView<T>> buffers();
  /// Counts what is actually allocated.
  std::size_t parameter_count() const;

  std::vector<FusionUnit>& units() { return units_; }
  Conv1x1<T>& output_layer() { return output_; }

 private:
  StructureSpec spec_;
  PpcnOptions options_;
  std::vector<FusionUnit> units_;
  Conv1x1<T> output_;
  bool has_cache_ = false;
};

}  // namespace ppcn::nn
