#include "ppcn/ptns.hpp"

#include <zlib.h>

#include <bit>
#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ppcn/error.hpp"

namespace ppcn::io {

static_assert(std::endian::native == std::endian::little,
              "PTNS payload encoding assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'T', 'N', 'S'};

template <typename T>
std::vector<std::uint8_t> to_bytes(std::span<const T> values) {
  std::vector<std::uint8_t> out(values.size_bytes());
  if (!out.empty()) std::memcpy(out.data(), values.data(), out.size());
  return out;
}

template <typename T>
std::vector<T> from_bytes(const std::vector<std::uint8_t>& bytes) {
  std::vector<T> out(bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
  return out;
}

std::size_t product(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void check_count(const std::vector<std::uint32_t>& dims, std::size_t count) {
  if (dims.size() > 255) throw StructuralError("PTNS supports at most 255 dimensions");
  if (product(dims) != count)
    throw StructuralError("PTNS dims do not match value count");
}

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U8: return 1;
  }
  throw FormatError("unknown PTNS dtype");
}

PtnsArray PtnsArray::from(std::vector<std::uint32_t> dims, std::span<const float> values) {
  check_count(dims, values.size());
  PtnsArray a;
  a.dtype_ = DType::F32;
  a.dims_ = std::move(dims);
  a.payload_ = to_bytes(values);
  return a;
}

PtnsArray PtnsArray::from(std::vector<std::uint32_t> dims, std::span<const double> values) {
  check_count(dims, values.size());
  PtnsArray a;
  a.dtype_ = DType::F64;
  a.dims_ = std::move(dims);
  a.payload_ = to_bytes(values);
  return a;
}

PtnsArray PtnsArray::from(std::vector<std::uint32_t> dims, std::span<const std::uint8_t> values) {
  check_count(dims, values.size());
  PtnsArray a;
  a.dtype_ = DType::U8;
  a.dims_ = std::move(dims);
  a.payload_.assign(values.begin(), values.end());
  return a;
}

std::size_t PtnsArray::count() const { return product(dims_); }

std::vector<float> PtnsArray::as_f32() const {
  if (dtype_ != DType::F32) throw FormatError("PTNS array is not float32");
  return from_bytes<float>(payload_);
}

std::vector<double> PtnsArray::as_f64() const {
  if (dtype_ != DType::F64) throw FormatError("PTNS array is not float64");
  return from_bytes<double>(payload_);
}

std::vector<std::uint8_t> PtnsArray::as_u8() const {
  if (dtype_ != DType::U8) throw FormatError("PTNS array is not uint8");
  return payload_;
}

std::vector<std::uint8_t> PtnsArray::encode() const {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * dims_.size() + payload_.size() + 4);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u8(out, kPtnsVersion);
  put_u8(out, static_cast<std::uint8_t>(dtype_));
  put_u8(out, static_cast<std::uint8_t>(dims_.size()));
  for (auto d : dims_) put_u32(out, d);
  out.insert(out.end(), payload_.begin(), payload_.end());
  put_u32(out, crc32(payload_));
  return out;
}

PtnsArray PtnsArray::decode(std::span<const std::uint8_t> bytes, std::size_t& pos,
                            const std::string& origin) {
  if (bytes.size() < pos + 4 || std::memcmp(bytes.data() + pos, kMagic, 4) != 0)
    throw FormatError(origin + ": bad PTNS magic");
  pos += 4;
  const auto version = get_u8(bytes, pos, origin);
  if (version != kPtnsVersion)
    throw FormatError(origin + ": unsupported PTNS version " + std::to_string(version));
  const auto code = get_u8(bytes, pos, origin);
  if (code < 1 || code > 3) throw FormatError(origin + ": unknown PTNS dtype " + std::to_string(code));
  PtnsArray a;
  a.dtype_ = static_cast<DType>(code);
  const auto ndim = get_u8(bytes, pos, origin);
  a.dims_.resize(ndim);
  for (auto& d : a.dims_) d = get_u32(bytes, pos, origin);
  const std::size_t nbytes = product(a.dims_) * dtype_size(a.dtype_);
  if (bytes.size() - pos < nbytes) throw FormatError(origin + ": truncated PTNS payload");
  a.payload_.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + nbytes));
  pos += nbytes;
  const auto stored = get_u32(bytes, pos, origin);
  if (stored != crc32(a.payload_)) throw FormatError(origin + ": PTNS CRC mismatch");
  return a;
}

void write_ptns(const std::filesystem::path& path, const PtnsArray& array) {
  write_file_atomic(path, array.encode());
}

PtnsArray read_ptns(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  auto a = PtnsArray::decode(bytes, pos, path.string());
  if (pos != bytes.size()) throw FormatError(path.string() + ": trailing bytes after PTNS record");
  return a;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = ::crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint8_t get_u8(std::span<const std::uint8_t> in, std::size_t& pos, const std::string& origin) {
  if (pos + 1 > in.size()) throw FormatError(origin + ": unexpected end of data");
  return in[pos++];
}

std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t& pos, const std::string& origin) {
  if (pos + 2 > in.size()) throw FormatError(origin + ": unexpected end of data");
  std::uint16_t v = static_cast<std::uint16_t>(in[pos] | (in[pos + 1] << 8));
  pos += 2;
  return v;
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t& pos, const std::string& origin) {
  if (pos + 4 > in.size()) throw FormatError(origin + ": unexpected end of data");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace ppcn::io
