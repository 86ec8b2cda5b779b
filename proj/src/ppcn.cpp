#include "ppcn/ppcn.hpp"

#include <charconv>
#include <cmath>
#include <random>

namespace ppcn::nn {

std::string StructureSpec::str() const {
  std::string s;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (i) s += '-';
    s += std::to_string(sizes[i]);
  }
  return s;
}

StructureSpec parse_structure(std::string_view text) {
  if (text.empty()) throw ParseError("empty structure string");
  StructureSpec spec;
  std::size_t start = 0;
  while (true) {
    const std::size_t dash = text.find('-', start);
    const std::string_view token = text.substr(start, dash == std::string_view::npos ? text.npos : dash - start);
    int value = 0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (token.empty() || ec != std::errc() || ptr != token.data() + token.size())
      throw ParseError("invalid structure token '" + std::string(token) + "' in '" + std::string(text) + "'");
    if (value < 1)
      throw ParseError("structure token '" + std::string(token) + "' must be a positive integer");
    spec.sizes.push_back(value);
    if (dash == std::string_view::npos) break;
    start = dash + 1;
  }
  if (spec.sizes.size() < 2)
    throw ParseError("structure '" + std::string(text) + "' needs at least an input and an output size");
  return spec;
}

std::size_t parameter_count(const StructureSpec& spec) {
  std::size_t total = 0;
  for (std::size_t i = 0; i + 1 < spec.sizes.size(); ++i)
    total += static_cast<std::size_t>(spec.sizes[i]) * spec.sizes[i + 1] + spec.sizes[i + 1];
  return total;
}

namespace {
void validate_structure(const StructureSpec& spec) {
  if (spec.sizes.size() < 2) throw StructuralError("structure needs at least two sizes");
  for (int s : spec.sizes)
    if (s < 1) throw StructuralError("structure sizes must be >= 1");
}
}  // namespace

template <typename T>
PpcnModel<T>::PpcnModel(StructureSpec spec, PpcnOptions options)
    : spec_((validate_structure(spec), std::move(spec))),
      options_(options),
      output_(spec_.sizes[spec_.sizes.size() - 2], spec_.sizes.back()) {
  for (std::size_t i = 1; i + 1 < spec_.sizes.size(); ++i)
    units_.push_back({Conv1x1<T>(spec_.sizes[i - 1], spec_.sizes[i]), Relu<T>(),
                      BatchNorm<T>(spec_.sizes[i], options_.bn_eps, options_.bn_momentum)});
}

template <typename T>
Tensor<T> PpcnModel<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.c() != spec_.input_channels())
    throw StructuralError("PPCN " + spec_.str() + " expects " + std::to_string(spec_.input_channels()) +
                          " input channels, got " + std::to_string(x.c()));
  Tensor<T> h = x;
  for (auto& u : units_) {
    h = u.conv.forward(h);
    if (options_.bn_before_relu) {
      h = u.relu.forward(u.bn.forward(h, mode));
    } else {
      h = u.bn.forward(u.relu.forward(h), mode);
    }
  }
  has_cache_ = true;
  return output_.forward(h);
}

template <typename T>
Tensor<T> PpcnModel<T>::backward(const Tensor<T>& grad_out) {
  if (!has_cache_) throw StateError("PPCN backward called before forward");
  Tensor<T> g = output_.backward(grad_out);
  for (auto it = units_.rbegin(); it != units_.rend(); ++it) {
    if (options_.bn_before_relu) {
      g = it->bn.backward(it->relu.backward(g));
    } else {
      g = it->relu.backward(it->bn.backward(g));
    }
    g = it->conv.backward(g);
  }
  return g;
}

template <typename T>
void PpcnModel<T>::init_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto init = [&](Conv1x1<T>& conv) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / conv.in_channels()));
    for (T& w : conv.weight()) w = static_cast<T>(dist(rng));
    std::fill(conv.bias().begin(), conv.bias().end(), T(0));
  };
  for (auto& u : units_) init(u.conv);
  init(output_);
}

template <typename T>
void PpcnModel<T>::zero_grad() {
  for (auto& u : units_) u.conv.zero_grad();
  output_.zero_grad();
}

template <typename T>
void PpcnModel<T>::clear_cache() {
  for (auto& u : units_) {
    u.conv.clear_cache();
    u.relu.clear_cache();
    u.bn.clear_cache();
  }
  output_.clear_cache();
  has_cache_ = false;
}

template <typename T>
std::vector<ParamView<T>> PpcnModel<T>::parameters() {
  std::vector<ParamView<T>> out;
  for (std::size_t i = 0; i < units_.size(); ++i) units_[i].conv.collect(out, "ppcn.unit" + std::to_string(i) + ".conv");
  output_.collect(out, "ppcn.output");
  return out;
}

template <typename T>
std::vector<BufferView<T>> PpcnModel<T>::buffers() {
  std::vector<BufferView<T>> out;
  for (std::size_t i = 0; i < units_.size(); ++i) units_[i].bn.collect(out, "ppcn.unit" + std::to_string(i) + ".bn");
  return out;
}

template <typename T>
std::size_t PpcnModel<T>::parameter_count() const {
  std::size_t n = output_.parameter_count();
  for (const auto& u : units_) n += u.conv.parameter_count();
  return n;
}

template class PpcnModel<float>;
template class PpcnModel<double>;

}  // namespace ppcn::nn
