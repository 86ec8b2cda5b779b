#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ppcn/ppcn.hpp"
#include "ppcn/training.hpp"

namespace ppcn::img {

enum class GrayDepth { Png8 = 8, Png16 = 16 };

GrayDepth parse_depth(const std::string& text);  // "png8" | "png16"

/// Min-max map onto [0, 1]; a constant plane maps to 0.5 everywhere.
std::vector<double> minmax_normalize(std::span<const float> plane);

/// Grayscale PNG with pinned encoder settings (zlib level 9, no filtering,
/// no time or text chunks), so identical input gives identical bytes.
std::vector<std::uint8_t> encode_gray_png(std::span<const double> unit_values, int width, int height,
                                          GrayDepth depth);

/// PPCN rebuilt from a checkpoint, ready for inference.
nn::PpcnModel<float> load_ppcn(const train::Checkpoint& ckpt);

/// Writes out_ch{k}.png and out_ch{k}.ptns for every channel of a
/// 1 x C x H x W output; returns the files written.
std::vector<std::filesystem::path> export_channels(const Tensor<float>& output, const std::filesystem::path& dir,
                                                   GrayDepth depth);

}  // namespace ppcn::img
