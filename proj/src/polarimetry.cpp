#include "ppcn/polarimetry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ppcn::polar {

Plane::Plane(int w, int h, double fill)
    : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
  if (w < 0 || h < 0) throw StructuralError("negative plane dimension");
}

void validate(const RawStack& stack) {
  const Plane* planes[] = {&stack.i0, &stack.i45, &stack.i90, &stack.i135};
  for (const Plane* p : planes) {
    if (!p->same_shape(stack.i0) || p->data.size() != static_cast<std::size_t>(p->width) * p->height)
      throw StructuralError("raw stack planes have mismatched dimensions");
  }
  for (const Plane* p : planes) {
    for (double v : p->data) {
      if (!std::isfinite(v)) throw InputError("raw stack contains a non-finite intensity");
      if (v < 0.0) throw InputError("raw stack contains a negative intensity");
    }
  }
}

PolarParams compute_stokes(const RawStack& stack) {
  validate(stack);
  const int w = stack.width(), h = stack.height();
  PolarParams p{Plane(w, h), Plane(w, h), Plane(w, h), {}, {}};
  for (std::size_t i = 0; i < stack.i0.size(); ++i) {
    p.s0.data[i] = stack.i0.data[i] + stack.i90.data[i];
    p.s1.data[i] = stack.i0.data[i] - stack.i90.data[i];
    p.s2.data[i] = stack.i45.data[i] - stack.i135.data[i];
  }
  return p;
}

double dolp_value(double s0, double s1, double s2) {
  if (!(s0 >= kS0Epsilon)) return 0.0;
  return std::clamp(std::sqrt(s1 * s1 + s2 * s2) / s0, 0.0, 1.0);
}

double fold_quarter_pi(double angle) {
  constexpr double half_pi = 2.0 * kQuarterPi;
  while (angle > kQuarterPi) angle -= half_pi;
  while (angle < -kQuarterPi) angle += half_pi;
  return angle;
}

double aop_value(double s1, double s2, AopConvention convention) {
  if (s1 == 0.0 && s2 == 0.0) return 0.0;
  const double a = convention == AopConvention::Swapped ? 0.5 * std::atan2(s1, s2)
                                                         : 0.5 * std::atan2(s2, s1);
  return fold_quarter_pi(a);
}

const Plane& compute_dolp(PolarParams& params) {
  if (!params.s0.same_shape(params.s1) || !params.s0.same_shape(params.s2))
    throw StructuralError("stokes planes have mismatched dimensions");
  params.dolp = Plane(params.s0.width, params.s0.height);
  for (std::size_t i = 0; i < params.s0.size(); ++i)
    params.dolp.data[i] = dolp_value(params.s0.data[i], params.s1.data[i], params.s2.data[i]);
  return params.dolp;
}

const Plane& compute_aop(PolarParams& params, AopConvention convention) {
  if (!params.s1.same_shape(params.s2))
    throw StructuralError("stokes planes have mismatched dimensions");
  params.aop = Plane(params.s1.width, params.s1.height);
  const bool have_s0 = params.s0.same_shape(params.s1);
  for (std::size_t i = 0; i < params.s1.size(); ++i) {
    if (have_s0 && params.s0.data[i] < kS0Epsilon) continue;  // dark pixel: aop = 0
    params.aop.data[i] = aop_value(params.s1.data[i], params.s2.data[i], convention);
  }
  return params.aop;
}

PolarParams analyze(const RawStack& stack, AopConvention convention) {
  PolarParams p = compute_stokes(stack);
  compute_dolp(p);
  compute_aop(p, convention);
  return p;
}

double normalize_value(double v, ParamKind kind) {
  double t = 0.0;
  switch (kind) {
    case ParamKind::S0: t = v / kS0Max; break;
    case ParamKind::DoLP: t = v; break;
    case ParamKind::AoP: t = (v + kQuarterPi) / (2.0 * kQuarterPi); break;
    default: throw UsageError("unknown parameter kind");
  }
  return std::clamp(t, 0.0, 1.0);
}

Plane normalize_param(const Plane& plane, ParamKind kind) {
  Plane out(plane.width, plane.height);
  for (std::size_t i = 0; i < plane.size(); ++i) out.data[i] = normalize_value(plane.data[i], kind);
  return out;
}

int channel_count(InputStrategy strategy) {
  switch (strategy) {
    case InputStrategy::Raw4: return 4;
    case InputStrategy::S0PA: return 3;
    case InputStrategy::S0P: return 2;
    case InputStrategy::POnly: return 1;
    case InputStrategy::S0Only: return 1;
  }
  throw UsageError("unknown input strategy");
}

std::string_view to_string(InputStrategy strategy) {
  switch (strategy) {
    case InputStrategy::Raw4: return "raw4";
    case InputStrategy::S0PA: return "s0pa";
    case InputStrategy::S0P: return "s0p";
    case InputStrategy::POnly: return "p";
    case InputStrategy::S0Only: return "s0";
  }
  return "?";
}

InputStrategy parse_strategy(std::string_view text) {
  for (auto s : {InputStrategy::Raw4, InputStrategy::S0PA, InputStrategy::S0P,
                 InputStrategy::POnly, InputStrategy::S0Only})
    if (text == to_string(s)) return s;
  throw ParseError("unknown input strategy '" + std::string(text) + "' (raw4|s0pa|s0p|p|s0)");
}

std::string_view to_string(AopConvention convention) {
  return convention == AopConvention::Swapped ? "swapped" : "standard";
}

AopConvention parse_convention(std::string_view text) {
  if (text == "swapped") return AopConvention::Swapped;
  if (text == "standard") return AopConvention::Standard;
  throw ParseError("unknown AoP convention '" + std::string(text) + "' (swapped|standard)");
}

template <typename T>
Tensor<T> assemble_strategy(const RawStack& stack, InputStrategy strategy,
                            AopConvention convention) {
  validate(stack);
  std::vector<const Plane*> channels;
  PolarParams params;
  Plane s0n, aopn;
  if (strategy == InputStrategy::Raw4) {
    channels = {&stack.i0, &stack.i45, &stack.i90, &stack.i135};
  } else {
    params = analyze(stack, convention);
    s0n = normalize_param(params.s0, ParamKind::S0);
    aopn = normalize_param(params.aop, ParamKind::AoP);
    switch (strategy) {
      case InputStrategy::S0PA: channels = {&s0n, &params.dolp, &aopn}; break;
      case InputStrategy::S0P: channels = {&s0n, &params.dolp}; break;
      case InputStrategy::POnly: channels = {&params.dolp}; break;
      case InputStrategy::S0Only: channels = {&s0n}; break;
      default: break;
    }
  }
  Tensor<T> out(1, static_cast<int>(channels.size()), stack.height(), stack.width());
  for (std::size_t c = 0; c < channels.size(); ++c) {
    auto dst = out.plane(0, static_cast<int>(c));
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(channels[c]->data[i]);
  }
  return out;
}

template Tensor<float> assemble_strategy<float>(const RawStack&, InputStrategy, AopConvention);
template Tensor<double> assemble_strategy<double>(const RawStack&, InputStrategy, AopConvention);

}  // namespace ppcn::polar
