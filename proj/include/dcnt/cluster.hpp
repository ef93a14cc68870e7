#pragma once

// Homogeneous area generation: grid-initialized centers, windowed affinities
// exp(-||f_j - r_i||^2) restricted to the 3x3 neighbourhood of each pixel's
// initial cell, differentiable soft center updates and a final hard argmax.

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "dcnt/tensor.hpp"

namespace dcnt::cluster {

using ad::Tensor;

inline constexpr std::size_t kWindowSlots = 9;

/// Candidate clusters of one grid cell in ascending index order; unused
/// slots hold -1.
using CandidateSet = std::array<std::int32_t, kWindowSlots>;

/// Near-uniform tiling of an H1 x W1 map into rows x cols = Z cells. Cell i
/// sits at band (i / cols, i % cols).
struct GridLayout {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t areas = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_bounds;  // rows + 1
  std::vector<std::size_t> col_bounds;  // cols + 1
  std::vector<std::int32_t> cell_of_pixel;
  std::vector<CandidateSet> cell_candidates;

  static GridLayout build(std::size_t height, std::size_t width, std::size_t areas);

  std::size_t pixels() const { return height * width; }
  const CandidateSet& candidates(std::size_t pixel) const {
    return cell_candidates[static_cast<std::size_t>(cell_of_pixel[pixel])];
  }
};

struct AreaAssignment {
  GridLayout layout;
  Tensor affinity;  // N x 9, slot k belongs to layout.candidates(j)[k]
  Tensor centers;   // Z x C
  std::vector<std::int32_t> hard_labels;
  std::vector<std::size_t> counts;
  /// Clusters whose last soft update saw zero affinity mass and kept their
  /// previous center.
  std::vector<std::uint8_t> stale;

  /// N x Z matrix with zeros outside each pixel's window.
  std::vector<double> dense_affinity() const;
};

struct InitResult {
  GridLayout layout;
  Tensor centers;  // Z x C
};

/// feature: C x H1 x W1.
InitResult init_centers(const Tensor& feature, std::size_t areas);

/// tokens: N x C, centers: Z x C -> N x 9 windowed affinity.
Tensor compute_affinity(const Tensor& tokens, const Tensor& centers, const GridLayout& layout);

struct SoftUpdate {
  Tensor centers;
  std::vector<std::uint8_t> stale;
};

/// Affinity-weighted means per cluster; zero-mass clusters keep `previous`.
SoftUpdate soft_update_centers(const Tensor& tokens, const Tensor& affinity, const Tensor& previous,
                               const GridLayout& layout);

struct HardAssignment {
  std::vector<std::int32_t> labels;
  std::vector<std::size_t> counts;
};

/// Per-pixel argmax over the window; ties go to the smallest cluster index.
HardAssignment hard_assign(const Tensor& affinity, const GridLayout& layout);

/// T soft iterations followed by a hard assignment on the last affinity.
AreaAssignment run_clustering(const Tensor& feature, std::size_t areas, std::size_t iterations);

}  // namespace dcnt::cluster
