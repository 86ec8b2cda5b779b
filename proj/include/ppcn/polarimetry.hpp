#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "ppcn/tensor.hpp"

namespace ppcn::polar {

/// Single-channel image, row-major with x fastest.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int w, int h, double fill = 0.0);

  std::size_t size() const { return data.size(); }
  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(const Plane& other) const {
    return width == other.width && height == other.height;
  }
  bool operator==(const Plane&) const = default;
};

/// Four spatially aligned analyzer-angle intensity images (0, 45, 90, 135 deg).
struct RawStack {
  Plane i0, i45, i90, i135;

  int width() const { return i0.width; }
  int height() const { return i0.height; }
  bool operator==(const RawStack&) const = default;
};

/// Throws StructuralError on mismatched planes and InputError on negative or
/// non-finite intensities.
void validate(const RawStack& stack);

struct PolarParams {
  Plane s0, s1, s2, dolp, aop;
};

enum class AopConvention {
  Swapped,   // 1/2 atan2(S1, S2): S1 and S2 exchanged
  Standard,  // 1/2 atan2(S2, S1)
};

enum class ParamKind { S0, DoLP, AoP };

enum class InputStrategy { Raw4, S0PA, S0P, POnly, S0Only };

// Pixels with S0 below this are treated as unpolarized.
inline constexpr double kS0Epsilon = 1e-8;
inline constexpr double kS0Max = 2.0;
inline constexpr double kQuarterPi = 0.78539816339744830962;

PolarParams compute_stokes(const RawStack& stack);

/// Fills and returns params.dolp.
const Plane& compute_dolp(PolarParams& params);

/// Fills and returns params.aop, folded into [-pi/4, pi/4].
const Plane& compute_aop(PolarParams& params, AopConvention convention = AopConvention::Swapped);

/// Stokes, DoLP and AoP in one call.
PolarParams analyze(const RawStack& stack, AopConvention convention = AopConvention::Swapped);

// Scalar kernels; the plane functions above are loops over these.
double dolp_value(double s0, double s1, double s2);
double aop_value(double s1, double s2, AopConvention convention);
double fold_quarter_pi(double angle);
double normalize_value(double v, ParamKind kind);

Plane normalize_param(const Plane& plane, ParamKind kind);

int channel_count(InputStrategy strategy);
std::string_view to_string(InputStrategy strategy);
InputStrategy parse_strategy(std::string_view text);
std::string_view to_string(AopConvention convention);
AopConvention parse_convention(std::string_view text);

/// 1 x C x H x W tensor. RAW4 passes intensities through unmodified; all
/// parameter channels are normalized to [0,1].
/// Channel order: RAW4 (i0,i45,i90,i135), S0PA (S0,DoLP,AoP), S0P (S0,DoLP),
/// POnly (DoLP), S0Only (S0).
template <typename T>
Tensor<T> assemble_strategy(const RawStack& stack, InputStrategy strategy,
                            AopConvention convention = AopConvention::Swapped);

}  // namespace ppcn::polar
