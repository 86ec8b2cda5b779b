#include "ppcn/scenegen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "ppcn/ptns.hpp"

namespace ppcn::scene {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, Range r) {
  if (r.hi <= r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

void validate_range(const Range& r, double lo, double hi, const std::string& what) {
  if (!(r.lo <= r.hi) || r.lo < lo || r.hi > hi)
    throw UsageError(what + " range [" + std::to_string(r.lo) + "," + std::to_string(r.hi) +
                     "] outside [" + std::to_string(lo) + "," + std::to_string(hi) + "]");
}

void validate_profile(const ClassProfile& p) {
  validate_range(p.s0, 0.0, polar::kS0Max, p.name + " s0");
  validate_range(p.dolp, 0.0, 1.0, p.name + " dolp");
  validate_range(p.aop, -polar::kQuarterPi, polar::kQuarterPi, p.name + " aop");
}

// Sum of three random plane waves scaled into [-1, 1].
struct SmoothField {
  std::array<double, 3> fx{}, fy{}, phase{};

  explicit SmoothField(Rng& rng) {
    for (int k = 0; k < 3; ++k) {
      fx[k] = uniform(rng, {-2.0, 2.0});
      fy[k] = uniform(rng, {-2.0, 2.0});
      phase[k] = uniform(rng, {0.0, 2.0 * std::numbers::pi});
    }
  }
  double operator()(double u, double v) const {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) s += std::sin(2.0 * std::numbers::pi * (fx[k] * u + fy[k] * v) + phase[k]);
    return s / 3.0;
  }
};

struct RegionValues {
  double s0, dolp, aop;
};

RegionValues draw_values(Rng& rng, const ClassProfile& p, const RegionValues* bg) {
  RegionValues v{uniform(rng, p.s0), uniform(rng, p.dolp), uniform(rng, p.aop)};
  if (bg) {
    if (p.match_s0) v.s0 = bg->s0;
    if (p.match_dolp) v.dolp = bg->dolp;
    if (p.match_aop) v.aop = bg->aop;
  }
  return v;
}

float round_f32(double v) { return static_cast<float>(v); }

void quantize(Plane& p) {
  for (double& v : p.data) v = round_f32(v);
}

std::string sample_file(std::size_t index, const char* group) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "sample_%05zu_%s.ptns", index, group);
  return buf;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

void validate(const SceneSpec& spec) {
  if (spec.width < 8 || spec.height < 8)
    throw UsageError("scene width and height must be >= 8 (got " + std::to_string(spec.width) +
                     "x" + std::to_string(spec.height) + ")");
  if (!(spec.noise_sigma >= 0.0)) throw UsageError("noise sigma must be >= 0");
  if (spec.num_regions < 0) throw UsageError("num_regions must be >= 0");
  if (spec.num_regions > 0 && spec.classes.empty())
    throw UsageError("regions requested but no target classes defined");
  if (spec.classes.size() > 254) throw UsageError("at most 254 target classes");
  if (!(spec.texture >= 0.0)) throw UsageError("texture amplitude must be >= 0");
  if (!(spec.region_scale.lo > 0.0 && spec.region_scale.lo <= spec.region_scale.hi))
    throw UsageError("region scale range must be positive and ordered");
  validate_profile(spec.background);
  for (const auto& c : spec.classes) validate_profile(c);
}

GroundTruthScene generate_scene(const SceneSpec& spec) {
  validate(spec);
  const int w = spec.width, h = spec.height;
  Rng rng(spec.seed);

  const RegionValues bg = draw_values(rng, spec.background, nullptr);
  std::vector<RegionValues> values(static_cast<std::size_t>(w) * h, bg);
  std::vector<std::uint8_t> mask(values.size(), 0);

  const int k = spec.num_classes();
  for (int r = 0; r < spec.num_regions; ++r) {
    const int label = std::uniform_int_distribution<int>(1, k)(rng);
    const bool ellipse = std::bernoulli_distribution(0.5)(rng);
    const double cx = uniform(rng, {0.0, double(w)});
    const double cy = uniform(rng, {0.0, double(h)});
    const double rx = std::max(1.0, uniform(rng, spec.region_scale) * w);
    const double ry = std::max(1.0, uniform(rng, spec.region_scale) * h);
    const RegionValues v = draw_values(rng, spec.classes[label - 1], &bg);

    const int x0 = std::max(0, int(std::floor(cx - rx))), x1 = std::min(w - 1, int(std::ceil(cx + rx)));
    const int y0 = std::max(0, int(std::floor(cy - ry))), y1 = std::min(h - 1, int(std::ceil(cy + ry)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        const bool inside = ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (!inside) continue;
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        values[i] = v;
        mask[i] = static_cast<std::uint8_t>(label);
      }
    }
  }

  GroundTruthScene scene{Plane(w, h), Plane(w, h), Plane(w, h), std::move(mask)};
  // Texture fields are drawn even when unused so the region stream above is
  // independent of the texture setting.
  const SmoothField f_s0(rng), f_dolp(rng), f_aop(rng);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      RegionValues v = values[i];
      if (spec.texture > 0.0) {
        const double u = (x + 0.5) / w, t = (y + 0.5) / h;
        v.s0 += spec.texture * polar::kS0Max * f_s0(u, t);
        v.dolp += spec.texture * f_dolp(u, t);
        v.aop += spec.texture * 2.0 * polar::kQuarterPi * f_aop(u, t);
      }
      scene.s0.data[i] = std::clamp(v.s0, 0.0, polar::kS0Max);
      scene.dolp.data[i] = std::clamp(v.dolp, 0.0, 1.0);
      scene.aop.data[i] = std::clamp(v.aop, -polar::kQuarterPi, polar::kQuarterPi);
    }
  }
  return scene;
}

RawStack render_raw(const GroundTruthScene& scene, double noise_sigma, std::uint64_t seed) {
  const int w = scene.width(), h = scene.height();
  RawStack raw{Plane(w, h), Plane(w, h), Plane(w, h), Plane(w, h)};
  for (std::size_t i = 0; i < scene.s0.size(); ++i) {
    const double s0 = scene.s0.data[i];
    const double pol = s0 * scene.dolp.data[i];
    const double s1 = pol * std::cos(2.0 * scene.aop.data[i]);
    const double s2 = pol * std::sin(2.0 * scene.aop.data[i]);
    raw.i0.data[i] = std::max(0.0, 0.5 * (s0 + s1));
    raw.i45.data[i] = std::max(0.0, 0.5 * (s0 + s2));
    raw.i90.data[i] = std::max(0.0, 0.5 * (s0 - s1));
    raw.i135.data[i] = std::max(0.0, 0.5 * (s0 - s2));
  }
  if (noise_sigma > 0.0) {
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (Plane* p : {&raw.i0, &raw.i45, &raw.i90, &raw.i135})
      for (double& v : p->data) v = std::max(0.0, v + noise(rng));
  }
  return raw;
}

SceneSpec family_spec(const std::string& family, int width, int height) {
  SceneSpec s;
  s.width = width;
  s.height = height;
  constexpr double q = polar::kQuarterPi;
  if (family == "generic") {
    s.num_regions = 8;
    s.texture = 0.12;
    s.background = {"background", {0.2, 1.8}, {0.0, 0.6}, {-q, q}};
    s.classes = {{"c1", {0.2, 1.8}, {0.0, 1.0}, {-q, q}},
                 {"c2", {0.2, 1.8}, {0.0, 1.0}, {-q, q}},
                 {"c3", {0.2, 1.8}, {0.0, 1.0}, {-q, q}}};
  } else if (family == "camouflage") {
    s.num_regions = 6;
    s.region_scale = {0.15, 0.4};
    s.texture = 0.05;
    s.noise_sigma = 0.05;
    s.background = {"background", {0.4, 1.6}, {0.25, 0.45}, {-0.55, -0.2}};
    ClassProfile aop_class{"aop_camouflaged", {}, {}, {0.15, 0.55}};
    aop_class.match_s0 = aop_class.match_dolp = true;
    ClassProfile dolp_class{"dolp_camouflaged", {}, {0.65, 0.9}, {}};
    dolp_class.match_s0 = dolp_class.match_aop = true;
    s.classes = {aop_class, dolp_class};
  } else if (family == "distinct") {
    s.num_regions = 6;
    s.region_scale = {0.15, 0.4};
    s.texture = 0.05;
    s.noise_sigma = 0.02;
    s.background = {"background", {0.3, 1.7}, {0.0, 0.25}, {-q, q}};
    s.classes = {{"low_angle", {0.3, 1.7}, {0.5, 0.85}, {-0.65, -0.25}},
                 {"high_angle", {0.3, 1.7}, {0.5, 0.85}, {0.25, 0.65}}};
  } else {
    throw UsageError("unknown scene family '" + family + "'");
  }
  return s;
}

std::vector<std::string> family_names() { return {"generic", "camouflage", "distinct"}; }

namespace {

nlohmann::json range_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }

Range range_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

nlohmann::json profile_json(const ClassProfile& p) {
  return {{"name", p.name},           {"s0", range_json(p.s0)},   {"dolp", range_json(p.dolp)},
          {"aop", range_json(p.aop)}, {"match_s0", p.match_s0},   {"match_dolp", p.match_dolp},
          {"match_aop", p.match_aop}};
}

ClassProfile profile_from(const nlohmann::json& j) {
  ClassProfile p;
  p.name = j.at("name").get<std::string>();
  p.s0 = range_from(j.at("s0"));
  p.dolp = range_from(j.at("dolp"));
  p.aop = range_from(j.at("aop"));
  p.match_s0 = j.at("match_s0").get<bool>();
  p.match_dolp = j.at("match_dolp").get<bool>();
  p.match_aop = j.at("match_aop").get<bool>();
  return p;
}

}  // namespace

nlohmann::json to_json(const SceneSpec& spec) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : spec.classes) classes.push_back(profile_json(c));
  return {{"width", spec.width},
          {"height", spec.height},
          {"seed", spec.seed},
          {"num_regions", spec.num_regions},
          {"noise_sigma", spec.noise_sigma},
          {"region_scale", range_json(spec.region_scale)},
          {"texture", spec.texture},
          {"background", profile_json(spec.background)},
          {"classes", classes}};
}

SceneSpec spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.num_regions = j.at("num_regions").get<int>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.region_scale = range_from(j.at("region_scale"));
  s.texture = j.at("texture").get<double>();
  s.background = profile_from(j.at("background"));
  for (const auto& c : j.at("classes")) s.classes.push_back(profile_from(c));
  return s;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index) {
  return splitmix64(dataset_seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1));
}

std::vector<Sample> generate_dataset(const SceneSpec& spec, std::size_t count) {
  validate(spec);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SceneSpec s = spec;
    s.seed = sample_seed(spec.seed, i);
    Sample sample;
    sample.truth = generate_scene(s);
    quantize(sample.truth.s0);
    quantize(sample.truth.dolp);
    quantize(sample.truth.aop);
    sample.raw = render_raw(sample.truth, spec.noise_sigma, splitmix64(s.seed));
    for (Plane* p : {&sample.raw.i0, &sample.raw.i45, &sample.raw.i90, &sample.raw.i135}) quantize(*p);
    out.push_back(std::move(sample));
  }
  return out;
}

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kFormatTag = "ppcn-dataset";

std::vector<float> stack_planes(std::initializer_list<const Plane*> planes) {
  std::vector<float> out;
  for (const Plane* p : planes)
    for (double v : p->data) out.push_back(static_cast<float>(v));
  return out;
}

void unstack_planes(const std::vector<float>& values, std::initializer_list<Plane*> planes, int w, int h) {
  std::size_t k = 0;
  for (Plane* p : planes) {
    *p = Plane(w, h);
    for (double& v : p->data) v = values[k++];
  }
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  const auto& m = dataset.manifest;
  if (m.count != dataset.samples.size()) throw StructuralError("manifest count does not match samples");
  const auto w = static_cast<std::uint32_t>(m.width), h = static_cast<std::uint32_t>(m.height);

  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& s = dataset.samples[i];
    if (s.raw.width() != m.width || s.raw.height() != m.height || s.truth.width() != m.width ||
        s.truth.height() != m.height)
      throw StructuralError("sample " + std::to_string(i) + " does not match manifest dimensions");
    validate(s.raw);
    const auto raw = stack_planes({&s.raw.i0, &s.raw.i45, &s.raw.i90, &s.raw.i135});
    const auto truth = stack_planes({&s.truth.s0, &s.truth.dolp, &s.truth.aop});
    io::write_ptns(dir / sample_file(i, "raw"), io::PtnsArray::from({4, h, w}, std::span<const float>(raw)));
    io::write_ptns(dir / sample_file(i, "truth"), io::PtnsArray::from({3, h, w}, std::span<const float>(truth)));
    io::write_ptns(dir / sample_file(i, "mask"),
                   io::PtnsArray::from({h, w}, std::span<const std::uint8_t>(s.truth.class_mask)));
  }

  nlohmann::json j = {{"format", kFormatTag},
                      {"format_version", m.format_version},
                      {"count", m.count},
                      {"width", m.width},
                      {"height", m.height},
                      {"seed", m.seed},
                      {"num_classes", m.num_classes},
                      {"family", m.family},
                      {"spec", to_json(m.spec)}};
  // Manifest goes last: its presence marks a complete dataset.
  io::write_text_atomic(dir / kManifestName, j.dump(2) + "\n");
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  if (!std::filesystem::exists(path)) throw IoError("manifest not found: " + path.string());
  const auto bytes = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormatTag)
      throw FormatError(path.string() + ": not a ppcn dataset manifest");
    DatasetManifest m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kDatasetFormatVersion)
      throw FormatError(path.string() + ": dataset format version " + std::to_string(m.format_version) +
                        " (expected " + std::to_string(kDatasetFormatVersion) + ")");
    m.count = j.at("count").get<std::size_t>();
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.num_classes = j.at("num_classes").get<int>();
    m.family = j.at("family").get<std::string>();
    m.spec = spec_from_json(j.at("spec"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.manifest = read_manifest(dir);
  const auto& m = ds.manifest;
  const auto w = static_cast<std::uint32_t>(m.width), h = static_cast<std::uint32_t>(m.height);
  auto expect_dims = [](const io::PtnsArray& a, std::vector<std::uint32_t> dims,
                        const std::filesystem::path& p) {
    if (a.dims() != dims) throw FormatError(p.string() + ": unexpected tensor dimensions");
  };
  ds.samples.resize(m.count);
  for (std::size_t i = 0; i < m.count; ++i) {
    Sample& s = ds.samples[i];
    const auto raw_path = dir / sample_file(i, "raw");
    const auto truth_path = dir / sample_file(i, "truth");
    const auto mask_path = dir / sample_file(i, "mask");
    const auto raw = io::read_ptns(raw_path);
    expect_dims(raw, {4, h, w}, raw_path);
    unstack_planes(raw.as_f32(), {&s.raw.i0, &s.raw.i45, &s.raw.i90, &s.raw.i135}, m.width, m.height);
    const auto truth = io::read_ptns(truth_path);
    expect_dims(truth, {3, h, w}, truth_path);
    unstack_planes(truth.as_f32(), {&s.truth.s0, &s.truth.dolp, &s.truth.aop}, m.width, m.height);
    const auto mask = io::read_ptns(mask_path);
    expect_dims(mask, {h, w}, mask_path);
    s.truth.class_mask = mask.as_u8();
    for (auto label : s.truth.class_mask)
      if (label > m.num_classes) throw FormatError(mask_path.string() + ": label out of range");
  }
  return ds;
}

RawStack read_raw_sample(const std::filesystem::path& path) {
  const auto a = io::read_ptns(path);
  if (a.dims().size() != 3 || a.dims()[0] != 4)
    throw FormatError(path.string() + ": expected a 4 x H x W raw sample");
  RawStack raw;
  const int h = static_cast<int>(a.dims()[1]), w = static_cast<int>(a.dims()[2]);
  unstack_planes(a.as_f32(), {&raw.i0, &raw.i45, &raw.i90, &raw.i135}, w, h);
  return raw;
}

}  // namespace ppcn::scene
