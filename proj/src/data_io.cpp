#include "dcnt/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "dcnt/errors.hpp"

namespace dcnt {
namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

// Bounds-checked little-endian cursor over a byte buffer.
class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  void expect_magic(const char (&magic)[5]) {
    need(4, "magic");
    if (!std::equal(magic, magic + 4, bytes_.begin())) throw FormatError(what_ + ": bad magic");
    pos_ += 4;
  }
  std::uint16_t u16() {
    need(2, "payload");
    auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4, "header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void need(std::size_t n, const char* part) const {
    if (pos_ + n > bytes_.size()) throw SizeError(what_ + ": truncated " + part);
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

void expect_exact_payload(const Reader& r, std::size_t count, std::size_t width, const std::string& what) {
  if (r.remaining() != count * width) {
    throw SizeError(what + ": payload holds " + std::to_string(r.remaining()) + " bytes, header implies " +
                    std::to_string(count * width));
  }
}

}  // namespace

void HsiCube::validate() const {
  if (height < 1 || width < 1) throw DataError("cube: height and width must be >= 1");
  if (bands < 3) throw DataError("cube: at least 3 bands required, got " + std::to_string(bands));
  if (values.size() != plane_size() * bands) throw SizeError("cube: value count does not match dimensions");
  for (float v : values) {
    if (!std::isfinite(v)) throw DataError("cube: non-finite value");
  }
}

std::size_t LabelMap::labeled_count() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
}

std::uint16_t LabelMap::max_label() const {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
}

HsiCube load_cube(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  Reader r(bytes, "cube " + path.string());
  r.expect_magic("HSC1");
  HsiCube cube;
  cube.height = r.u32();
  cube.width = r.u32();
  cube.bands = r.u32();
  const std::uint32_t dtype = r.u32();
  if (dtype != 0) throw FormatError("cube: unsupported dtype code " + std::to_string(dtype));
  const std::size_t count = std::size_t{cube.height} * cube.width * cube.bands;
  expect_exact_payload(r, count, 4, "cube");
  cube.values.resize(count);
  for (auto& v : cube.values) v = r.f32();
  cube.validate();
  return cube;
}

void save_cube(const HsiCube& cube, const std::filesystem::path& path) {
  cube.validate();
  std::vector<std::uint8_t> out;
  out.reserve(20 + cube.values.size() * 4);
  out.insert(out.end(), {'H', 'S', 'C', '1'});
  put_u32(out, cube.height);
  put_u32(out, cube.width);
  put_u32(out, cube.bands);
  put_u32(out, 0);
  for (float v : cube.values) put_f32(out, v);
  write_all(path, out);
}

LabelMap load_labels(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  Reader r(bytes, "labels " + path.string());
  r.expect_magic("LBL1");
  LabelMap map;
  map.height = r.u32();
  map.width = r.u32();
  const std::size_t count = std::size_t{map.height} * map.width;
  expect_exact_payload(r, count, 2, "labels");
  map.labels.resize(count);
  for (auto& l : map.labels) l = r.u16();
  return map;
}

void save_labels(const LabelMap& labels, const std::filesystem::path& path) {
  if (labels.labels.size() != std::size_t{labels.height} * labels.width) {
    throw SizeError("labels: count does not match dimensions");
  }
  std::vector<std::uint8_t> out;
  out.reserve(12 + labels.labels.size() * 2);
  out.insert(out.end(), {'L', 'B', 'L', '1'});
  put_u32(out, labels.height);
  put_u32(out, labels.width);
  for (auto l : labels.labels) put_u16(out, l);
  write_all(path, out);
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  if (image.data.size() != 3 * image.plane_size()) throw SizeError("ppm: image must have exactly 3 channels");
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + image.data.size());
  const std::size_t plane = image.plane_size();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) out.push_back(image.data[ch * plane + i]);
  }
  write_all(path, out);
}

RgbImage read_ppm(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::uint32_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError("ppm: malformed header");
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > 0xffffffffu) throw FormatError("ppm: header value overflow");
    }
    return static_cast<std::uint32_t>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError("ppm: expected P6 magic");
  pos = 2;
  RgbImage img;
  img.width = read_int();
  img.height = read_int();
  const std::uint32_t maxval = read_int();
  if (maxval != 255) throw FormatError("ppm: unsupported maxval " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("ppm: malformed header");
  ++pos;
  const std::size_t plane = img.plane_size();
  if (bytes.size() - pos != 3 * plane) throw SizeError("ppm: payload size does not match header");
  img.data.resize(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) img.data[ch * plane + i] = bytes[pos + 3 * i + ch];
  }
  return img;
}

void save_probmap(const ProbMap& probs, const std::filesystem::path& path) {
  if (probs.values.size() != probs.classes * probs.plane_size()) throw SizeError("probmap: count mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(16 + probs.values.size() * 4);
  out.insert(out.end(), {'P', 'R', 'B', '1'});
  put_u32(out, probs.classes);
  put_u32(out, probs.height);
  put_u32(out, probs.width);
  for (float v : probs.values) put_f32(out, v);
  write_all(path, out);
}

ProbMap load_probmap(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  Reader r(bytes, "probmap " + path.string());
  r.expect_magic("PRB1");
  ProbMap p;
  p.classes = r.u32();
  p.height = r.u32();
  p.width = r.u32();
  const std::size_t count = std::size_t{p.classes} * p.height * p.width;
  expect_exact_payload(r, count, 4, "probmap");
  p.values.resize(count);
  for (auto& v : p.values) {
    v = r.f32();
    if (!std::isfinite(v) || v < 0.0f) throw DataError("probmap: negative or non-finite score");
  }
  return p;
}

namespace {

std::array<std::array<std::uint8_t, 3>, kPaletteSize> build_palette() {
  std::array<std::array<std::uint8_t, 3>, kPaletteSize> table{};
  constexpr double golden_angle = 137.50776405003785;
  constexpr double sat = 0.75;
  constexpr double val = 0.95;
  for (std::size_t k = 0; k < kPaletteSize; ++k) {
    const double hue = std::fmod(static_cast<double>(k) * golden_angle, 360.0) / 60.0;
    const int sector = static_cast<int>(hue) % 6;
    const double f = hue - std::floor(hue);
    const double p = val * (1.0 - sat);
    const double q = val * (1.0 - sat * f);
    const double t = val * (1.0 - sat * (1.0 - f));
    double r = 0, g = 0, b = 0;
    switch (sector) {
      case 0: r = val, g = t, b = p; break;
      case 1: r = q, g = val, b = p; break;
      case 2: r = p, g = val, b = t; break;
      case 3: r = p, g = q, b = val; break;
      case 4: r = t, g = p, b = val; break;
      default: r = val, g = p, b = q; break;
    }
    auto to8 = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * x)); };
    table[k] = {to8(r), to8(g), to8(b)};
  }
  return table;
}

}  // namespace

std::array<std::uint8_t, 3> palette_color(std::uint16_t label) {
  static const auto table = build_palette();
  if (label == 0) return {0, 0, 0};
  return table[(label - 1u) % kPaletteSize];
}

RgbImage render_class_map(const ClassMap& map) {
  RgbImage img{map.height, map.width, std::vector<std::uint8_t>(3 * map.labels.size())};
  const std::size_t plane = map.labels.size();
  for (std::size_t i = 0; i < plane; ++i) {
    const auto c = palette_color(map.labels[i]);
    for (std::size_t ch = 0; ch < 3; ++ch) img.data[ch * plane + i] = c[ch];
  }
  return img;
}

}  // namespace dcnt
