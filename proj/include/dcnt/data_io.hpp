#pragma once

// On-disk artifacts: HSC1 cubes, LBL1 label/class maps, PRB1 probability maps
// and binary P6 pixmaps. All integers are little-endian.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dcnt {

/// Hyperspectral cube in band-sequential layout: `bands` planes of
/// `height` rows of `width` values, band index ascending with wavelength.
struct HsiCube {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t bands = 0;
  std::vector<float> values;

  std::size_t plane_size() const { return std::size_t{height} * width; }
  std::span<const float> band_plane(std::size_t band) const {
    return {values.data() + band * plane_size(), plane_size()};
  }
  float at(std::size_t band, std::size_t row, std::size_t col) const {
    return values[band * plane_size() + row * width + col];
  }
  /// Throws DataError/SizeError when an invariant is broken.
  void validate() const;
};

/// Per-pixel class ids; 0 marks an unlabeled pixel. Also used for dense
/// predicted class maps, where every pixel is in 1..C_n.
struct LabelMap {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint16_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t labeled_count() const;
  std::uint16_t max_label() const;
};

using ClassMap = LabelMap;

/// Class-major per-pixel class scores (classes x height x width).
struct ProbMap {
  std::uint32_t classes = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> values;

  std::size_t plane_size() const { return std::size_t{height} * width; }
  float at(std::size_t cls, std::size_t pixel) const { return values[cls * plane_size() + pixel]; }
};

/// Planar 8-bit three-channel image (3 x height x width).
struct RgbImage {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint8_t> data;

  std::size_t plane_size() const { return std::size_t{height} * width; }
  std::uint8_t at(std::size_t ch, std::size_t row, std::size_t col) const {
    return data[ch * plane_size() + row * width + col];
  }
};

HsiCube load_cube(const std::filesystem::path& path);
void save_cube(const HsiCube& cube, const std::filesystem::path& path);

LabelMap load_labels(const std::filesystem::path& path);
void save_labels(const LabelMap& labels, const std::filesystem::path& path);

void write_ppm(const RgbImage& image, const std::filesystem::path& path);
RgbImage read_ppm(const std::filesystem::path& path);

void save_probmap(const ProbMap& probs, const std::filesystem::path& path);
ProbMap load_probmap(const std::filesystem::path& path);

inline constexpr std::size_t kPaletteSize = 22;

/// Fixed class palette. Label 0 is black; label k >= 1 uses entry (k-1) mod 22,
/// golden-angle hues at fixed saturation and value.
std::array<std::uint8_t, 3> palette_color(std::uint16_t label);

RgbImage render_class_map(const ClassMap& map);

}  // namespace dcnt
