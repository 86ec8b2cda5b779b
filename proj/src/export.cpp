#include "ppcn/export.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "ppcn/error.hpp"
#include "ppcn/ptns.hpp"

namespace ppcn::img {

GrayDepth parse_depth(const std::string& text) {
  if (text == "png8") return GrayDepth::Png8;
  if (text == "png16") return GrayDepth::Png16;
  throw ParseError("unknown image format '" + text + "' (expected png8 or png16)");
}

std::vector<double> minmax_normalize(std::span<const float> plane) {
  std::vector<double> out(plane.size(), 0.5);
  if (plane.empty()) return out;
  const auto [lo, hi] = std::ranges::minmax(plane);
  if (!(hi > lo)) return out;
  const double span = double(hi) - double(lo);
  for (std::size_t i = 0; i < plane.size(); ++i) out[i] = (double(plane[i]) - double(lo)) / span;
  return out;
}

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

std::vector<std::uint8_t> encode_gray_png(std::span<const double> unit_values, int width, int height,
                                          GrayDepth depth) {
  if (width < 1 || height < 1 || unit_values.size() != std::size_t(width) * std::size_t(height))
    throw StructuralError("encode_gray_png: value count does not match image size");
  const int bits = static_cast<int>(depth);
  const double top = bits == 8 ? 255.0 : 65535.0;
  const std::size_t stride = std::size_t(width) * (bits / 8);
  std::vector<std::uint8_t> pixels(stride * std::size_t(height));
  for (std::size_t i = 0; i < unit_values.size(); ++i) {
    const auto q = static_cast<std::uint32_t>(std::lround(std::clamp(unit_values[i], 0.0, 1.0) * top));
    if (bits == 8) {
      pixels[i] = static_cast<std::uint8_t>(q);
    } else {
      pixels[2 * i] = static_cast<std::uint8_t>(q >> 8);
      pixels[2 * i + 1] = static_cast<std::uint8_t>(q & 0xFF);
    }
  }

  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_fn);
  if (!png) throw IoError("PNG encoder: cannot allocate");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("PNG encoder: cannot allocate");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoder failed");
  }
  png_set_write_fn(png, &out, append_bytes, nullptr);
  png_set_compression_level(png, 9);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bits,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) png_write_row(png, pixels.data() + std::size_t(y) * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

nn::PpcnModel<float> load_ppcn(const train::Checkpoint& ckpt) {
  const auto& cfg = ckpt.config;
  if (cfg.mode == train::TrainMode::Joint && cfg.baseline)
    throw UsageError("checkpoint is a baseline run without a PPCN");
  nn::PpcnModel<float> model(cfg.effective_structure(), cfg.ppcn);
  std::map<std::string, const std::vector<float>*> stored;
  for (const auto& e : ckpt.tensors) stored[e.name] = &e.values;
  auto fill = [&](const std::string& name, std::span<float> dst) {
    const auto it = stored.find(name);
    if (it == stored.end()) throw FormatError("checkpoint lacks tensor '" + name + "'");
    if (it->second->size() != dst.size()) throw FormatError("checkpoint tensor '" + name + "' has the wrong size");
    std::ranges::copy(*it->second, dst.begin());
  };
  for (auto& p : model.parameters()) fill(p.name, p.value);
  for (auto& b : model.buffers()) fill(b.name, b.value);
  return model;
}

std::vector<std::filesystem::path> export_channels(const Tensor<float>& output, const std::filesystem::path& dir,
                                                   GrayDepth depth) {
  if (output.n() != 1) throw StructuralError("export expects a single-sample output");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  const auto h = static_cast<std::uint32_t>(output.h()), w = static_cast<std::uint32_t>(output.w());
  for (int k = 0; k < output.c(); ++k) {
    const auto plane = output.plane(0, k);
    const auto stem = "out_ch" + std::to_string(k);
    const auto png = dir / (stem + ".png");
    io::write_file_atomic(png, encode_gray_png(minmax_normalize(plane), output.w(), output.h(), depth));
    const auto raw = dir / (stem + ".ptns");
    io::write_ptns(raw, io::PtnsArray::from({h, w}, plane));
    written.push_back(png);
    written.push_back(raw);
  }
  return written;
}

}  // namespace ppcn::img
