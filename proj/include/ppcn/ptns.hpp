#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ppcn::io {

// PTNS binary tensor container:
//   "PTNS" | version u8 (=1) | dtype u8 | ndim u8 | ndim x u32 dims |
//   payload (row-major, last dim fastest) | u32 CRC32 of payload.
// All multi-byte fields little-endian.

enum class DType : std::uint8_t { F32 = 1, F64 = 2, U8 = 3 };

inline constexpr std::uint8_t kPtnsVersion = 1;

std::size_t dtype_size(DType dtype);

class PtnsArray {
 public:
  PtnsArray() = default;

  static PtnsArray from(std::vector<std::uint32_t> dims, std::span<const float> values);
  static PtnsArray from(std::vector<std::uint32_t> dims, std::span<const double> values);
  static PtnsArray from(std::vector<std::uint32_t> dims, std::span<const std::uint8_t> values);

  DType dtype() const { return dtype_; }
  const std::vector<std::uint32_t>& dims() const { return dims_; }
  std::size_t count() const;

  /// Typed copy of the payload; throws FormatError on dtype mismatch.
  std::vector<float> as_f32() const;
  std::vector<double> as_f64() const;
  std::vector<std::uint8_t> as_u8() const;

  std::vector<std::uint8_t> encode() const;
  /// Decodes one record starting at `pos`, advancing it. `origin` names the
  /// source in error messages.
  static PtnsArray decode(std::span<const std::uint8_t> bytes, std::size_t& pos,
                          const std::string& origin);

  bool operator==(const PtnsArray&) const = default;

 private:
  DType dtype_ = DType::F32;
  std::vector<std::uint32_t> dims_;
  std::vector<std::uint8_t> payload_;  // little-endian element bytes
};

void write_ptns(const std::filesystem::path& path, const PtnsArray& array);
PtnsArray read_ptns(const std::filesystem::path& path);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Whole-file helpers. write_file_atomic writes to a sibling temporary and
// renames it into place.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// Little-endian primitive encoding used by PTNS and the checkpoint container.
void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v);
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
std::uint8_t get_u8(std::span<const std::uint8_t> in, std::size_t& pos, const std::string& origin);
std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t& pos, const std::string& origin);
std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t& pos, const std::string& origin);

}  // namespace ppcn::io
