#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2t/gradcheck.hpp"
#include "s2t/optics.hpp"

namespace s2t::io {

using Bytes = std::vector<std::uint8_t>;

/// Malformed or unreadable file content, located by byte offset.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// zlib CRC32 of `bytes`.
std::uint32_t checksum(std::span<const std::uint8_t> bytes);

Bytes read_file(const std::string& path);
/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::string& path, const Bytes& bytes);
void write_text_atomic(const std::string& path, const std::string& text);

// HSC1: "HSC1", u32 H, W, C, then H*W*C little-endian f32 in (h*W + w)*C + c order.
Bytes encode_cube(const optics::HyperCube& cube);
optics::HyperCube decode_cube(const Bytes& bytes);
void write_cube(const std::string& path, const optics::HyperCube& cube);
optics::HyperCube read_cube(const std::string& path);

// MSK1: "MSK1", u32 H, W, then H*W little-endian f32, row-major.
Bytes encode_mask(const optics::CodedMask& mask);
optics::CodedMask decode_mask(const Bytes& bytes);
void write_mask(const std::string& path, const optics::CodedMask& mask);
optics::CodedMask read_mask(const std::string& path);

// S2CK: "S2CK", u32 version, u32 count, per tensor {u16 name length, name,
// u8 rank, u32 dims..., f32 data}, then u32 CRC32 of every preceding byte.
inline constexpr std::uint32_t kCheckpointVersion = 1;

Bytes encode_checkpoint(const std::vector<NamedTensor<float>>& tensors);
std::vector<NamedTensor<float>> decode_checkpoint(const Bytes& bytes);
void write_checkpoint(const std::string& path, const std::vector<NamedTensor<float>>& tensors);
std::vector<NamedTensor<float>> read_checkpoint(const std::string& path);

/// Copies stored tensors into `params`, which must match by name, order and shape.
void load_into(std::vector<NamedTensor<float>>& params, const std::vector<NamedTensor<float>>& stored);

/// 8-bit binary PGM (P5) of an h x w map scaled linearly from [0, max] to [0, 255].
/// Negative values clamp to 0. Returns the max used (0 maps to an all-black image).
double write_pgm(const std::string& path, Index h, Index w, std::span<const float> values);

/// Fixed 6-significant-digit formatting used by every CSV and sidecar file.
std::string format_number(double v);

}  // namespace s2t::io
