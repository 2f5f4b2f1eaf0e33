#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "s2t/io.hpp"
#include "test_util.hpp"

using namespace s2t;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "s2t_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<NamedTensor<float>> sample_params() {
  Rng rng(21);
  return {{"a.w", s2t::testing::random_tensor<float>({3, 4}, rng)},
          {"a.b", s2t::testing::random_tensor<float>({4}, rng)},
          {"conv", s2t::testing::random_tensor<float>({3, 3, 2, 5}, rng)}};
}

template <typename Fn>
std::size_t format_error_offset(Fn fn) {
  try {
    fn();
  } catch (const io::FormatError& e) {
    return e.offset();
  }
  FAIL("expected FormatError");
  return 0;
}

}  // namespace

TEST_CASE("cube round trip is bit exact") {
  Rng rng(20);
  optics::HyperCube cube(s2t::testing::random_tensor<float>({4, 4, 3}, rng));
  const auto path = scratch("cube.hsc").string();
  io::write_cube(path, cube);
  optics::HyperCube back = io::read_cube(path);
  REQUIRE(back.data.shape() == cube.data.shape());
  for (Index i = 0; i < cube.data.numel(); ++i) CHECK(std::bit_cast<std::uint32_t>(back.data[i]) == std::bit_cast<std::uint32_t>(cube.data[i]));
  CHECK(!std::filesystem::exists(path + ".tmp"));
}

TEST_CASE("cube byte layout") {
  optics::HyperCube cube(Tensor<float>(Shape{2, 2, 1}, {1, 2, 3, 4}));
  io::Bytes b = io::encode_cube(cube);
  CHECK(b.size() == 32);
  CHECK(std::string(b.begin(), b.begin() + 4) == "HSC1");
  CHECK(b[4] == 2);
  CHECK(b[12] == 1);
  // 1.0f little-endian
  CHECK(b[16] == 0x00);
  CHECK(b[19] == 0x3f);
}

TEST_CASE("malformed cubes are located") {
  optics::HyperCube cube(Tensor<float>(Shape{2, 2, 1}, {1, 2, 3, 4}));
  io::Bytes good = io::encode_cube(cube);

  io::Bytes bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(format_error_offset([&] { io::decode_cube(bad_magic); }) == 0);

  io::Bytes truncated(good.begin(), good.end() - 3);
  CHECK(format_error_offset([&] { io::decode_cube(truncated); }) == 16);

  io::Bytes header_only(good.begin(), good.begin() + 10);
  CHECK(format_error_offset([&] { io::decode_cube(header_only); }) == 8);

  io::Bytes huge = good;
  for (int i = 4; i < 16; ++i) huge[i] = 0xff;
  CHECK_THROWS_AS(io::decode_cube(huge), io::FormatError);

  io::Bytes trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(io::decode_cube(trailing), io::FormatError);

  CHECK_THROWS_AS(io::read_cube(scratch("missing.hsc").string() + ".none"), io::IoError);
}

TEST_CASE("mask round trip") {
  Rng rng(22);
  optics::CodedMask mask(s2t::testing::random_tensor<float>({5, 3}, rng, 0, 1));
  const auto path = scratch("mask.msk").string();
  io::write_mask(path, mask);
  optics::CodedMask back = io::read_mask(path);
  REQUIRE(back.data.shape() == mask.data.shape());
  for (Index i = 0; i < mask.data.numel(); ++i) CHECK(back.data[i] == mask.data[i]);
  CHECK(io::encode_mask(mask).size() == 12 + 4 * 15);

  optics::CodedMask via_kind = optics::make_mask(5, 3, optics::MaskKind::File, 0.5, 0, path);
  for (Index i = 0; i < mask.data.numel(); ++i) CHECK(via_kind.data[i] == mask.data[i]);
  CHECK_THROWS_AS(optics::make_mask(3, 5, optics::MaskKind::File, 0.5, 0, path), DimensionError);
}

TEST_CASE("checkpoint round trip and rejection") {
  auto params = sample_params();
  const auto path = scratch("model.s2ck").string();
  io::write_checkpoint(path, params);
  auto stored = io::read_checkpoint(path);
  REQUIRE(stored.size() == params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    CHECK(stored[k].name == params[k].name);
    CHECK(stored[k].tensor.shape() == params[k].tensor.shape());
    for (Index i = 0; i < params[k].tensor.numel(); ++i) CHECK(stored[k].tensor[i] == params[k].tensor[i]);
  }

  io::Bytes bytes = io::encode_checkpoint(params);
  io::Bytes flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  try {
    io::decode_checkpoint(flipped);
    FAIL("expected CRC rejection");
  } catch (const io::FormatError& e) {
    CHECK(std::string(e.what()).find("CRC") != std::string::npos);
  }

  io::Bytes foreign(bytes.begin(), bytes.end() - 4);
  foreign[4] = 9;
  const std::uint32_t crc = io::checksum(foreign);
  for (int i = 0; i < 4; ++i) foreign.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  try {
    io::decode_checkpoint(foreign);
    FAIL("expected version error");
  } catch (const io::FormatError& e) {
    CHECK(std::string(e.what()).find("version 9") != std::string::npos);
    CHECK(e.offset() == 4);
  }

  auto dup = params;
  dup[1].name = dup[0].name;
  CHECK_THROWS_AS(io::encode_checkpoint(dup), ContractError);
}

TEST_CASE("load_into validates names and shapes") {
  auto params = sample_params();
  auto stored = sample_params();
  for (auto& v : stored[0].tensor.values()) v = 0.25f;
  io::load_into(params, stored);
  CHECK(params[0].tensor[0] == 0.25f);

  auto renamed = sample_params();
  renamed[2].name = "other";
  CHECK_THROWS_AS(io::load_into(params, renamed), ContractError);

  auto reshaped = sample_params();
  reshaped[1].tensor = Tensor<float>(Shape{5});
  CHECK_THROWS_AS(io::load_into(params, reshaped), DimensionError);

  std::vector<NamedTensor<float>> short_list(params.begin(), params.begin() + 1);
  CHECK_THROWS_AS(io::load_into(params, short_list), ContractError);
}

TEST_CASE("pgm output") {
  const auto path = scratch("map.pgm").string();
  std::vector<float> v = {0.0f, 0.5f, 1.0f, -1.0f, 2.0f, 1.0f};
  const double mx = io::write_pgm(path, 2, 3, v);
  CHECK(mx == 2.0);
  io::Bytes b = io::read_file(path);
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(b.size() == header.size() + 6);
  CHECK(std::string(b.begin(), b.begin() + static_cast<long>(header.size())) == header);
  const std::uint8_t expect[] = {0, 64, 128, 0, 255, 128};
  for (int i = 0; i < 6; ++i) CHECK(b[header.size() + i] == expect[i]);

  std::vector<float> zeros(4, 0.0f);
  CHECK(io::write_pgm(path, 2, 2, zeros) == 0.0);
  CHECK_THROWS_AS(io::write_pgm(path, 3, 3, zeros), DimensionError);
}

TEST_CASE("number formatting") {
  CHECK(io::format_number(0.1) == "0.1");
  CHECK(io::format_number(1.0 / 3.0) == "0.333333");
  CHECK(io::format_number(123456789.0) == "1.23457e+08");
  CHECK(io::format_number(std::numeric_limits<double>::infinity()) == "inf");
}
