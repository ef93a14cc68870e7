#pragma once

// Small synthetic hyperspectral scenes for desk-scale runs: voronoi class
// regions, smooth per-class spectra, seeded noise.

#include <cstdint>
#include <vector>

#include "dcnt/data_io.hpp"

namespace dcnt::synth {

struct SceneOptions {
  std::uint32_t height = 32;
  std::uint32_t width = 32;
  std::uint32_t bands = 20;
  std::uint32_t classes = 3;
  std::uint32_t per_class = 100;  // training labels per class
  double noise = 0.02;
  double margin = 0.08;  // minimum mean absolute gap between class spectra
};

struct Scene {
  HsiCube cube;
  LabelMap truth;  // dense
  LabelMap train;  // exactly per_class pixels of each class
  std::vector<std::vector<double>> signatures;  // classes x bands
};

Scene synth_scene(std::uint64_t seed, const SceneOptions& options = {});

/// Mean absolute difference of two spectra.
double spectral_gap(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace dcnt::synth
