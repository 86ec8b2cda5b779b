#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "ppcn/polarimetry.hpp"

namespace ppcn::scene {

using polar::Plane;
using polar::RawStack;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

/// Distribution of polarization state for one class. Each region draws one
/// (s0, dolp, aop) triple uniformly from the ranges; a `match_*` flag copies
/// the background's value for that scene instead. AoP uses the standard
/// convention.
struct ClassProfile {
  std::string name;
  Range s0{0.2, 1.8};
  Range dolp{0.0, 1.0};
  Range aop{-polar::kQuarterPi, polar::kQuarterPi};
  bool match_s0 = false;
  bool match_dolp = false;
  bool match_aop = false;
  bool operator==(const ClassProfile&) const = default;
};

struct SceneSpec {
  int width = 64;
  int height = 64;
  std::uint64_t seed = 0;
  int num_regions = 6;
  double noise_sigma = 0.0;
  /// Region half-extent range as a fraction of the image side.
  Range region_scale{0.1, 0.35};
  /// Amplitude of smooth per-pixel modulation added to every parameter
  /// (fractions of each parameter's range). Zero gives piecewise-constant scenes.
  double texture = 0.0;
  ClassProfile background{"background"};
  std::vector<ClassProfile> classes;

  int num_classes() const { return static_cast<int>(classes.size()); }
  bool operator==(const SceneSpec&) const = default;
};

void validate(const SceneSpec& spec);

struct GroundTruthScene {
  Plane s0, dolp, aop;        // aop in the standard convention
  std::vector<std::uint8_t> class_mask;  // 0 = background, 1..K

  int width() const { return s0.width; }
  int height() const { return s0.height; }
  bool operator==(const GroundTruthScene&) const = default;
};

GroundTruthScene generate_scene(const SceneSpec& spec);

/// Malus-law render of the four analyzer angles, plus optional additive
/// Gaussian noise clipped at zero.
RawStack render_raw(const GroundTruthScene& scene, double noise_sigma, std::uint64_t seed);

/// Named scene families used by the CLI and the experiments:
///   "generic"     broad random polarization states with texture (fitting)
///   "camouflage"  two target classes identical to background in S0; one
///                 differs only in AoP, the other only in DoLP
///   "distinct"    two target classes with distinct polarization signatures
SceneSpec family_spec(const std::string& family, int width, int height);
std::vector<std::string> family_names();

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec spec_from_json(const nlohmann::json& j);

struct Sample {
  RawStack raw;
  GroundTruthScene truth;
  bool operator==(const Sample&) const = default;
};

/// Per-sample seed derived from the dataset seed and sample index.
std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index);

/// Generates `count` samples. Plane values are rounded to float32 so that a
/// write/read cycle through the on-disk format is exact.
std::vector<Sample> generate_dataset(const SceneSpec& spec, std::size_t count);

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  std::size_t count = 0;
  int width = 0;
  int height = 0;
  std::uint64_t seed = 0;
  int num_classes = 0;
  std::string family;
  SceneSpec spec;
  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;
};

/// Layout: manifest.json plus, per sample i, sample_{i:05}_raw.ptns
/// (4 x H x W f32), sample_{i:05}_truth.ptns (3 x H x W f32: s0, dolp, aop)
/// and sample_{i:05}_mask.ptns (H x W u8).
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);

/// One 4 x H x W raw file (any sample_*_raw.ptns).
RawStack read_raw_sample(const std::filesystem::path& path);

}  // namespace ppcn::scene
