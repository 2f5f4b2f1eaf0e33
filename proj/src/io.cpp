#include "s2t/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <zlib.h>

namespace s2t::io {
namespace {

class Writer {
 public:
  void magic(const char (&m)[5]) { bytes_.insert(bytes_.end(), m, m + 4); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  Bytes& bytes() { return bytes_; }

 private:
  Bytes bytes_;
};

class Reader {
 public:
  Reader(const Bytes& b, std::size_t end) : b_(b), end_(end) {}

  void magic(const char (&m)[5], const char* format) {
    need(4, format);
    if (std::memcmp(b_.data() + pos_, m, 4) != 0) {
      throw FormatError(std::string(format) + ": bad magic, expected \"" + m + "\"", pos_);
    }
    pos_ += 4;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (end_ - pos_ < n || pos_ > end_) throw FormatError(std::string("truncated payload reading ") + what, pos_);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  const Bytes& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

// Rejects payloads that cannot fit the remaining bytes before allocating.
std::uint64_t checked_payload(const Reader& r, std::initializer_list<std::uint32_t> dims, const char* format) {
  std::uint64_t n = 1;
  for (std::uint32_t d : dims) {
    if (d == 0) throw FormatError(std::string(format) + ": zero dimension", r.pos());
    n *= d;
    if (n > (std::uint64_t{1} << 40)) throw FormatError(std::string(format) + ": dimension overflow", r.pos());
  }
  if (n * 4 > r.remaining()) throw FormatError(std::string(format) + ": truncated payload", r.pos());
  return n;
}

}  // namespace

std::uint32_t checksum(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  Bytes b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return b;
}

void write_file_atomic(const std::string& path, const Bytes& bytes) {
  const std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path + ": " + ec.message());
}

void write_text_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, Bytes(text.begin(), text.end()));
}

Bytes encode_cube(const optics::HyperCube& cube) {
  Writer w;
  w.magic("HSC1");
  w.u32(static_cast<std::uint32_t>(cube.height()));
  w.u32(static_cast<std::uint32_t>(cube.width()));
  w.u32(static_cast<std::uint32_t>(cube.channels()));
  for (float v : cube.data.values()) w.f32(v);
  return std::move(w.bytes());
}

optics::HyperCube decode_cube(const Bytes& bytes) {
  Reader r(bytes, bytes.size());
  r.magic("HSC1", "HSC1");
  const std::uint32_t h = r.u32("height"), w = r.u32("width"), c = r.u32("channels");
  const std::uint64_t n = checked_payload(r, {h, w, c}, "HSC1");
  if (r.remaining() != n * 4) throw FormatError("HSC1: trailing bytes after payload", r.pos() + n * 4);
  std::vector<float> v(n);
  for (auto& x : v) x = r.f32("value");
  return optics::HyperCube(Tensor<float>(Shape{h, w, c}, std::move(v)));
}

void write_cube(const std::string& path, const optics::HyperCube& cube) { write_file_atomic(path, encode_cube(cube)); }
optics::HyperCube read_cube(const std::string& path) { return decode_cube(read_file(path)); }

Bytes encode_mask(const optics::CodedMask& mask) {
  Writer w;
  w.magic("MSK1");
  w.u32(static_cast<std::uint32_t>(mask.height()));
  w.u32(static_cast<std::uint32_t>(mask.width()));
  for (float v : mask.data.values()) w.f32(v);
  return std::move(w.bytes());
}

optics::CodedMask decode_mask(const Bytes& bytes) {
  Reader r(bytes, bytes.size());
  r.magic("MSK1", "MSK1");
  const std::uint32_t h = r.u32("height"), w = r.u32("width");
  const std::uint64_t n = checked_payload(r, {h, w}, "MSK1");
  if (r.remaining() != n * 4) throw FormatError("MSK1: trailing bytes after payload", r.pos() + n * 4);
  std::vector<float> v(n);
  for (auto& x : v) x = r.f32("value");
  return optics::CodedMask(Tensor<float>(Shape{h, w}, std::move(v)));
}

void write_mask(const std::string& path, const optics::CodedMask& mask) { write_file_atomic(path, encode_mask(mask)); }
optics::CodedMask read_mask(const std::string& path) { return decode_mask(read_file(path)); }

Bytes encode_checkpoint(const std::vector<NamedTensor<float>>& tensors) {
  std::set<std::string> seen;
  Writer w;
  w.magic("S2CK");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (!seen.insert(t.name).second) throw ContractError("checkpoint: duplicate tensor name " + t.name);
    if (t.name.size() > 0xffff) throw ContractError("checkpoint: tensor name too long");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(t.name);
    w.u8(static_cast<std::uint8_t>(t.tensor.rank()));
    for (Index d : t.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.tensor.values()) w.f32(v);
  }
  w.u32(checksum(w.bytes()));
  return std::move(w.bytes());
}

std::vector<NamedTensor<float>> decode_checkpoint(const Bytes& bytes) {
  if (bytes.size() < 16) throw FormatError("S2CK: file too short", bytes.size());
  const std::size_t body = bytes.size() - 4;
  {
    Reader head(bytes, bytes.size());
    head.magic("S2CK", "S2CK");
  }
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
  if (checksum(std::span(bytes).first(body)) != stored) throw FormatError("S2CK: CRC mismatch", body);

  Reader r(bytes, body);
  r.magic("S2CK", "S2CK");
  const std::size_t version_at = r.pos();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("S2CK: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")",
                      version_at);
  }
  const std::uint32_t count = r.u32("tensor count");
  std::vector<NamedTensor<float>> out;
  std::set<std::string> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t at = r.pos();
    const std::uint16_t len = r.u16("name length");
    std::string name = r.raw(len, "name");
    if (!seen.insert(name).second) throw FormatError("S2CK: duplicate tensor name " + name, at);
    const std::uint8_t rank = r.u8("rank");
    if (rank == 0) throw FormatError("S2CK: zero rank for " + name, r.pos() - 1);
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t e = r.u32("dimension");
      if (e == 0) throw FormatError("S2CK: zero dimension in " + name, r.pos() - 4);
      n *= e;
      if (n > (std::uint64_t{1} << 40)) throw FormatError("S2CK: dimension overflow in " + name, r.pos() - 4);
      shape.push_back(e);
    }
    if (n * 4 > r.remaining()) throw FormatError("S2CK: truncated payload for " + name, r.pos());
    std::vector<float> v(n);
    for (auto& x : v) x = r.f32("value");
    out.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(v))});
  }
  if (r.remaining() != 0) throw FormatError("S2CK: trailing bytes before CRC", r.pos());
  return out;
}

void write_checkpoint(const std::string& path, const std::vector<NamedTensor<float>>& tensors) {
  write_file_atomic(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor<float>> read_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

void load_into(std::vector<NamedTensor<float>>& params, const std::vector<NamedTensor<float>>& stored) {
  if (params.size() != stored.size()) {
    throw ContractError("checkpoint holds " + std::to_string(stored.size()) + " tensors, model expects " +
                        std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != stored[i].name) {
      throw ContractError("checkpoint tensor " + std::to_string(i) + " is " + stored[i].name + ", model expects " +
                          params[i].name);
    }
    if (params[i].tensor.shape() != stored[i].tensor.shape()) {
      throw DimensionError("checkpoint tensor " + stored[i].name + " has shape " + shape_str(stored[i].tensor.shape()) +
                           ", model expects " + shape_str(params[i].tensor.shape()));
    }
    auto src = stored[i].tensor.values();
    std::copy(src.begin(), src.end(), params[i].tensor.values().begin());
  }
}

double write_pgm(const std::string& path, Index h, Index w, std::span<const float> values) {
  if (static_cast<Index>(values.size()) != h * w) throw DimensionError("write_pgm: value count does not match h x w");
  double mx = 0.0;
  for (float v : values) mx = std::max(mx, static_cast<double>(v));
  const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  Bytes b(header.begin(), header.end());
  b.reserve(b.size() + values.size());
  for (float v : values) {
    const double s = mx > 0 ? std::clamp(static_cast<double>(v), 0.0, mx) / mx : 0.0;
    b.push_back(static_cast<std::uint8_t>(std::lround(s * 255.0)));
  }
  write_file_atomic(path, b);
  return mx;
}

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace s2t::io
