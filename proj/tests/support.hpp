#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "ppcn/scenegen.hpp"
#include "ppcn/tensor.hpp"

namespace ppcn::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ppcn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

/// Same, but every value is at least `margin` away from zero (keeps ReLU
/// finite-difference probes off the kink).
inline Tensor<double> random_off_zero(Shape shape, std::uint64_t seed, double margin = 0.05) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor<double> t(shape);
  for (auto& v : t.values()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

inline void fill_random(std::span<double> values, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : values) v = dist(rng);
}

/// Sum of r[i] * y[i]: a scalar probe whose gradient with respect to y is r.
inline double project(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * r.data()[i];
  return s;
}

inline std::vector<double> copy_of(std::span<const double> s) { return {s.begin(), s.end()}; }

/// In-memory dataset of one scene family, built the way gen-data builds it.
inline scene::Dataset make_dataset(const std::string& family, std::size_t count, int width, int height,
                                   std::uint64_t seed, double noise = -1.0) {
  auto spec = scene::family_spec(family, width, height);
  spec.seed = seed;
  if (noise >= 0.0) spec.noise_sigma = noise;
  scene::Dataset ds;
  ds.manifest.count = count;
  ds.manifest.width = width;
  ds.manifest.height = height;
  ds.manifest.seed = seed;
  ds.manifest.num_classes = spec.num_classes();
  ds.manifest.family = family;
  ds.manifest.spec = spec;
  ds.samples = scene::generate_dataset(spec, count);
  return ds;
}

}  // namespace ppcn::testing
