#include "dcnt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "dcnt/errors.hpp"

namespace dcnt::synth {

double spectral_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

namespace {

std::vector<double> random_signature(std::mt19937_64& rng, std::uint32_t bands) {
  std::uniform_real_distribution<double> base(0.25, 0.6), amp(0.05, 0.2), freq(0.5, 2.0),
      phase(0.0, 2.0 * std::numbers::pi), slope(-0.2, 0.2);
  const double b = base(rng), a1 = amp(rng), f1 = freq(rng), p1 = phase(rng), a2 = amp(rng) * 0.5,
               f2 = freq(rng) * 2.0, p2 = phase(rng), s = slope(rng);
  std::vector<double> sig(bands);
  for (std::uint32_t l = 0; l < bands; ++l) {
    const double t = static_cast<double>(l) / static_cast<double>(bands - 1);
    sig[l] = b + s * (t - 0.5) + a1 * std::sin(2.0 * std::numbers::pi * f1 * t + p1) +
             a2 * std::sin(2.0 * std::numbers::pi * f2 * t + p2);
  }
  return sig;
}

}  // namespace

Scene synth_scene(std::uint64_t seed, const SceneOptions& o) {
  if (o.classes < 2) throw DomainError("synth: need at least 2 classes");
  if (o.bands < 6) throw DomainError("synth: need at least 6 bands");
  if (o.height < 2 || o.width < 2) throw DomainError("synth: scene must be at least 2x2");
  if (o.per_class == 0) throw DomainError("synth: per_class must be positive");
  const std::size_t n = std::size_t{o.height} * o.width;
  if (n < std::size_t{o.classes} * o.per_class * 2) {
    throw DomainError("synth: " + std::to_string(o.height) + "x" + std::to_string(o.width) + " is too small for " +
                      std::to_string(o.classes) + " classes of " + std::to_string(o.per_class) + " labels");
  }

  std::mt19937_64 rng(seed);
  Scene scene;

  // Signatures, redrawn until every pair clears the margin.
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1000) throw DomainError("synth: cannot separate class spectra; lower the margin");
    scene.signatures.clear();
    for (std::uint32_t c = 0; c < o.classes; ++c) scene.signatures.push_back(random_signature(rng, o.bands));
    bool ok = true;
    for (std::uint32_t a = 0; a < o.classes && ok; ++a)
      for (std::uint32_t b = a + 1; b < o.classes && ok; ++b)
        ok = spectral_gap(scene.signatures[a], scene.signatures[b]) >= o.margin;
    if (ok) break;
  }

  // Voronoi regions; sites cycle through classes. Layouts leaving a class
  // with too few pixels are redrawn.
  const std::size_t sites = std::size_t{3} * o.classes;
  std::vector<double> sy(sites), sx(sites), gain(sites);
  std::vector<std::uint16_t> truth(n);
  std::vector<std::size_t> site_of(n);
  std::uniform_real_distribution<double> uy(0.0, o.height), ux(0.0, o.width), ug(0.9, 1.1);
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1000) throw DomainError("synth: cannot place class regions");
    for (std::size_t s = 0; s < sites; ++s) {
      sy[s] = uy(rng);
      sx[s] = ux(rng);
      gain[s] = ug(rng);
    }
    std::vector<std::size_t> count(o.classes, 0);
    for (std::uint32_t y = 0; y < o.height; ++y) {
      for (std::uint32_t x = 0; x < o.width; ++x) {
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t s = 0; s < sites; ++s) {
          const double dy = y + 0.5 - sy[s], dx = x + 0.5 - sx[s], d = dy * dy + dx * dx;
          if (d < best_d) {
            best_d = d;
            best = s;
          }
        }
        const auto cls = static_cast<std::uint16_t>(best % o.classes + 1);
        truth[std::size_t{y} * o.width + x] = cls;
        site_of[std::size_t{y} * o.width + x] = best;
        ++count[cls - 1];
      }
    }
    if (*std::min_element(count.begin(), count.end()) >= std::size_t{2} * o.per_class) break;
  }

  scene.cube = HsiCube{o.height, o.width, o.bands, std::vector<float>(n * o.bands)};
  std::normal_distribution<double> noise(0.0, o.noise);
  for (std::uint32_t l = 0; l < o.bands; ++l) {
    for (std::size_t p = 0; p < n; ++p) {
      const double v = gain[site_of[p]] * scene.signatures[truth[p] - 1u][l] + noise(rng);
      scene.cube.values[l * n + p] = static_cast<float>(v);
    }
  }
  scene.truth = LabelMap{o.height, o.width, truth};

  scene.train = LabelMap{o.height, o.width, std::vector<std::uint16_t>(n, 0)};
  for (std::uint16_t c = 1; c <= o.classes; ++c) {
    std::vector<std::size_t> pixels;
    for (std::size_t p = 0; p < n; ++p)
      if (truth[p] == c) pixels.push_back(p);
    std::shuffle(pixels.begin(), pixels.end(), rng);
    for (std::size_t i = 0; i < o.per_class; ++i) scene.train.labels[pixels[i]] = c;
  }
  return scene;
}

}  // namespace dcnt::synth
