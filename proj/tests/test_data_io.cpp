#include <doctest.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "dcnt/data_io.hpp"
#include "dcnt/errors.hpp"
#include "helpers.hpp"

using namespace dcnt;

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& b, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(b, v);
}

std::vector<std::uint8_t> cube_header(std::uint32_t h, std::uint32_t w, std::uint32_t l) {
  std::vector<std::uint8_t> b{'H', 'S', 'C', '1'};
  put_u32(b, h);
  put_u32(b, w);
  put_u32(b, l);
  put_u32(b, 0);
  return b;
}

}  // namespace

TEST_CASE("cube file decodes band-major values") {
  testing::TempDir dir("io");
  auto bytes = cube_header(2, 2, 3);
  for (int i = 0; i < 12; ++i) put_f32(bytes, static_cast<float>(i));
  write_bytes(dir / "c.hsc", bytes);
  const auto cube = load_cube(dir / "c.hsc");
  CHECK(cube.height == 2);
  CHECK(cube.width == 2);
  CHECK(cube.bands == 3);
  CHECK(cube.at(0, 0, 0) == 0.0f);
  CHECK(cube.at(0, 0, 1) == 1.0f);
  CHECK(cube.at(0, 1, 0) == 2.0f);
  CHECK(cube.at(0, 1, 1) == 3.0f);
  CHECK(cube.at(2, 1, 1) == 11.0f);
}

TEST_CASE("cube save/load round trip is bit identical") {
  testing::TempDir dir("io");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1e3f, 1e3f);
  HsiCube cube{5, 7, 4, std::vector<float>(140)};
  for (auto& v : cube.values) v = u(rng);
  save_cube(cube, dir / "c.hsc");
  const auto back = load_cube(dir / "c.hsc");
  REQUIRE(back.values.size() == cube.values.size());
  CHECK(std::memcmp(back.values.data(), cube.values.data(), cube.values.size() * 4) == 0);
  save_cube(back, dir / "d.hsc");
  CHECK(read_bytes(dir / "c.hsc") == read_bytes(dir / "d.hsc"));
}

TEST_CASE("1x1x3 cube is a 20-byte header plus 12-byte payload") {
  testing::TempDir dir("io");
  save_cube(HsiCube{1, 1, 3, {1.0f, 2.0f, 3.0f}}, dir / "c.hsc");
  CHECK(std::filesystem::file_size(dir / "c.hsc") == 32);
}

TEST_CASE("large cube header is accepted") {
  testing::TempDir dir("io");
  // The header alone is read; the error names the payload size it implies.
  write_bytes(dir / "big.hsc", cube_header(550, 400, 270));
  try {
    load_cube(dir / "big.hsc");
    FAIL("expected a size error");
  } catch (const SizeError& e) {
    CHECK(std::string(e.what()).find(std::to_string(550ull * 400 * 270 * 4)) != std::string::npos);
  }
}

TEST_CASE("cube invariants are enforced") {
  testing::TempDir dir("io");
  write_bytes(dir / "zero.hsc", cube_header(1, 1, 0));
  CHECK_THROWS_AS(load_cube(dir / "zero.hsc"), DataError);

  auto bytes = cube_header(1, 1, 3);
  put_f32(bytes, 1.0f);
  write_bytes(dir / "short.hsc", bytes);
  CHECK_THROWS_AS(load_cube(dir / "short.hsc"), SizeError);

  bytes[0] = 'X';
  write_bytes(dir / "magic.hsc", bytes);
  CHECK_THROWS_AS(load_cube(dir / "magic.hsc"), FormatError);

  HsiCube nan_cube{1, 1, 3, {1.0f, NAN, 3.0f}};
  CHECK_THROWS_AS(nan_cube.validate(), DataError);
  CHECK_THROWS_AS(load_cube(dir / "missing.hsc"), IoError);
}

TEST_CASE("label maps") {
  testing::TempDir dir("io");
  SUBCASE("all-zero payload is a valid map with nothing labeled") {
    save_labels(LabelMap{2, 2, {0, 0, 0, 0}}, dir / "z.lbl");
    CHECK(load_labels(dir / "z.lbl").labeled_count() == 0);
  }
  SUBCASE("payload [0,1,2,1] holds two classes") {
    std::vector<std::uint8_t> b{'L', 'B', 'L', '1'};
    put_u32(b, 2);
    put_u32(b, 2);
    for (std::uint16_t v : {0, 1, 2, 1}) {
      b.push_back(static_cast<std::uint8_t>(v));
      b.push_back(0);
    }
    write_bytes(dir / "m.lbl", b);
    const auto m = load_labels(dir / "m.lbl");
    CHECK(m.max_label() == 2);
    CHECK(m.labeled_count() == 3);
    CHECK(m.labels == std::vector<std::uint16_t>{0, 1, 2, 1});
  }
  SUBCASE("size mismatch") {
    std::vector<std::uint8_t> b{'L', 'B', 'L', '1'};
    put_u32(b, 2);
    put_u32(b, 2);
    b.insert(b.end(), 6, 0);
    write_bytes(dir / "bad.lbl", b);
    CHECK_THROWS_AS(load_labels(dir / "bad.lbl"), SizeError);
  }
}

TEST_CASE("ppm images") {
  testing::TempDir dir("io");
  SUBCASE("single red pixel body") {
    write_ppm(RgbImage{1, 1, {255, 0, 0}}, dir / "r.ppm");
    const auto bytes = read_bytes(dir / "r.ppm");
    REQUIRE(bytes.size() >= 3);
    CHECK(bytes[bytes.size() - 3] == 0xFF);
    CHECK(bytes[bytes.size() - 2] == 0x00);
    CHECK(bytes[bytes.size() - 1] == 0x00);
  }
  SUBCASE("round trip and payload length") {
    RgbImage img{2, 3, {}};
    for (int i = 0; i < 18; ++i) img.data.push_back(static_cast<std::uint8_t>(i * 13));
    write_ppm(img, dir / "a.ppm");
    const auto back = read_ppm(dir / "a.ppm");
    CHECK(back.height == 2);
    CHECK(back.width == 3);
    CHECK(back.data == img.data);
    const auto bytes = read_bytes(dir / "a.ppm");
    const std::string header = "P6\n3 2\n255\n";
    CHECK(bytes.size() - header.size() == 18);
  }
  SUBCASE("header comments are skipped") {
    const std::string text = "P6 # c\n1 # w\n1\n255\n";
    std::vector<std::uint8_t> b(text.begin(), text.end());
    b.insert(b.end(), {1, 2, 3});
    write_bytes(dir / "c.ppm", b);
    CHECK(read_ppm(dir / "c.ppm").data == std::vector<std::uint8_t>{1, 2, 3});
  }
  SUBCASE("bad maxval") {
    const std::string text = "P6\n1 1\n65535\n";
    std::vector<std::uint8_t> b(text.begin(), text.end());
    b.insert(b.end(), 6, 0);
    write_bytes(dir / "m.ppm", b);
    CHECK_THROWS_AS(read_ppm(dir / "m.ppm"), FormatError);
  }
}

TEST_CASE("probability maps") {
  testing::TempDir dir("io");
  ProbMap p{2, 1, 1, {0.25f, 0.75f}};
  save_probmap(p, dir / "p.prb");
  const auto back = load_probmap(dir / "p.prb");
  CHECK(back.values == p.values);
  CHECK(back.classes == 2);
  // Header: magic + classes + height + width, then 2 x f32.
  CHECK(std::filesystem::file_size(dir / "p.prb") - 16 == 8);

  auto bytes = read_bytes(dir / "p.prb");
  float neg = -0.5f;
  std::memcpy(bytes.data() + 16, &neg, 4);
  write_bytes(dir / "n.prb", bytes);
  CHECK_THROWS_AS(load_probmap(dir / "n.prb"), DataError);
}

TEST_CASE("palette") {
  CHECK(palette_color(0) == std::array<std::uint8_t, 3>{0, 0, 0});
  for (std::uint16_t a = 1; a <= 22; ++a)
    for (std::uint16_t b = a + 1; b <= 22; ++b) CHECK(palette_color(a) != palette_color(b));
  const auto img = render_class_map(LabelMap{1, 2, {0, 3}});
  CHECK(img.data[0] == 0);
  CHECK(img.data[1] == palette_color(3)[0]);
  CHECK(img.data[3] == palette_color(3)[1]);
  CHECK(img.data[5] == palette_color(3)[2]);
}
