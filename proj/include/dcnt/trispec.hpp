#pragma once

// Tri-spectral image generation: sequential band grouping with mean
// aggregation, exhaustive wavelength-ordered triplet enumeration, and a joint
// linear 2% stretch to 8 bits.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "dcnt/data_io.hpp"

namespace dcnt::trispec {

struct GroupedCube {
  std::uint32_t groups = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<double> planes;  // groups x height x width

  std::size_t plane_size() const { return std::size_t{height} * width; }
  const double* plane(std::size_t group) const { return planes.data() + group * plane_size(); }
};

/// 1-based group indices; g1 is the longest-wavelength group.
struct BandTriplet {
  std::uint32_t g1 = 0;
  std::uint32_t g2 = 0;
  std::uint32_t g3 = 0;

  friend bool operator==(const BandTriplet&, const BandTriplet&) = default;
};

/// Planar 3 x H x W real image before stretching.
struct RawImage {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<double> data;
};

struct StretchResult {
  RgbImage image;
  double low = 0.0;   // 2% position
  double high = 0.0;  // 98% position
  bool degenerate = false;
};

struct TriSpectralSet {
  std::vector<RgbImage> images;
  std::vector<BandTriplet> manifest;
  std::size_t degenerate_count = 0;

  std::size_t capacity() const { return images.size(); }
};

struct GenerateOptions {
  bool wavelength_descending = false;
  std::size_t jobs = 1;  // worker threads across triplets
};

GroupedCube group_and_aggregate(const HsiCube& cube, std::uint32_t groups);

/// Number of 3-combinations of G groups.
std::uint64_t compute_capacity(std::uint32_t groups);

/// Every 3-combination of 1..G, internally ordered longest wavelength first,
/// listed in descending lexicographic order.
std::vector<BandTriplet> enumerate_triplets(std::uint32_t groups, bool wavelength_descending = false);

RawImage render_raw(const GroupedCube& grouped, const BandTriplet& triplet);

/// Nearest-rank percentile indices used by the stretch for n pooled values.
std::size_t low_rank(std::size_t n);
std::size_t high_rank(std::size_t n);

StretchResult linear_stretch(const RawImage& raw);

TriSpectralSet generate_set(const HsiCube& cube, std::uint32_t groups, const GenerateOptions& options = {});

/// Writes img_<index>.ppm for every image and manifest.txt (`index g1 g2 g3`).
void write_set(const TriSpectralSet& set, const std::filesystem::path& dir);
TriSpectralSet read_set(const std::filesystem::path& dir);

}  // namespace dcnt::trispec
