#include "dcnt/trispec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include "dcnt/errors.hpp"

namespace dcnt::trispec {

GroupedCube group_and_aggregate(const HsiCube& cube, std::uint32_t groups) {
  // Triplet stages need G >= 3; the averaging itself works for any G.
  if (groups == 0) throw ConfigError("group count must be positive");
  if (cube.bands % groups != 0) {
    throw ConfigError("band count " + std::to_string(cube.bands) + " is not divisible by group count " +
                      std::to_string(groups));
  }
  const std::size_t per_group = cube.bands / groups;
  const std::size_t plane = cube.plane_size();
  GroupedCube out{groups, cube.height, cube.width, std::vector<double>(groups * plane, 0.0)};
  const double scale = static_cast<double>(groups) / static_cast<double>(cube.bands);
  for (std::size_t g = 0; g < groups; ++g) {
    double* dst = out.planes.data() + g * plane;
    for (std::size_t j = 0; j < per_group; ++j) {
      const auto src = cube.band_plane(g * per_group + j);
      for (std::size_t p = 0; p < plane; ++p) dst[p] += src[p];
    }
    for (std::size_t p = 0; p < plane; ++p) dst[p] *= scale;
  }
  return out;
}

std::uint64_t compute_capacity(std::uint32_t groups) {
  if (groups < 3) throw DomainError("capacity needs G >= 3, got " + std::to_string(groups));
  const std::uint64_t g = groups;
  return g * (g - 1) * (g - 2) / 6;
}

std::vector<BandTriplet> enumerate_triplets(std::uint32_t groups, bool wavelength_descending) {
  compute_capacity(groups);  // validates G
  std::vector<BandTriplet> out;
  out.reserve(compute_capacity(groups));
  for (std::uint32_t a = groups; a >= 3; --a) {
    for (std::uint32_t b = a - 1; b >= 2; --b) {
      for (std::uint32_t c = b - 1; c >= 1; --c) {
        if (wavelength_descending) {
          // Index 1 is the longest wavelength; mirror the index space.
          out.push_back({groups + 1 - a, groups + 1 - b, groups + 1 - c});
        } else {
          out.push_back({a, b, c});
        }
      }
    }
  }
  return out;
}

RawImage render_raw(const GroupedCube& grouped, const BandTriplet& t) {
  for (auto g : {t.g1, t.g2, t.g3}) {
    if (g < 1 || g > grouped.groups) throw ContractError("triplet index out of range: " + std::to_string(g));
  }
  const std::size_t plane = grouped.plane_size();
  RawImage raw{grouped.height, grouped.width, std::vector<double>(3 * plane)};
  const std::uint32_t order[3] = {t.g1, t.g2, t.g3};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const double* src = grouped.plane(order[ch] - 1);
    std::copy(src, src + plane, raw.data.begin() + static_cast<std::ptrdiff_t>(ch * plane));
  }
  return raw;
}

// floor(0.02 (n-1)) and ceil(0.98 (n-1)) in exact integer arithmetic.
std::size_t low_rank(std::size_t n) { return n == 0 ? 0 : (2 * (n - 1)) / 100; }
std::size_t high_rank(std::size_t n) { return n == 0 ? 0 : (98 * (n - 1) + 99) / 100; }

StretchResult linear_stretch(const RawImage& raw) {
  const std::size_t n = raw.data.size();
  if (n == 0) throw ContractError("stretch: empty image");
  for (double v : raw.data) {
    if (!std::isfinite(v)) throw DataError("stretch: non-finite value");
  }
  std::vector<double> pooled = raw.data;
  const std::size_t lo = low_rank(n);
  const std::size_t hi = high_rank(n);
  std::nth_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(lo), pooled.end());
  const double p = pooled[lo];
  std::nth_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(hi), pooled.end());
  const double q = pooled[hi];

  StretchResult out;
  out.low = p;
  out.high = q;
  out.image = RgbImage{raw.height, raw.width, std::vector<std::uint8_t>(n, 0)};
  if (!(p < q)) {
    out.degenerate = true;
    return out;
  }
  const double range = q - p;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = raw.data[i];
    std::uint8_t v;
    if (x <= p) {
      v = 0;
    } else if (x >= q) {
      v = 255;
    } else {
      v = static_cast<std::uint8_t>(std::clamp(std::round(255.0 * (x - p) / range), 0.0, 255.0));
    }
    out.image.data[i] = v;
  }
  return out;
}

TriSpectralSet generate_set(const HsiCube& cube, std::uint32_t groups, const GenerateOptions& options) {
  if (groups < 3) throw ConfigError("group count must be >= 3, got " + std::to_string(groups));
  const GroupedCube grouped = group_and_aggregate(cube, groups);
  TriSpectralSet set;
  set.manifest = enumerate_triplets(groups, options.wavelength_descending);
  set.images.resize(set.manifest.size());
  std::vector<char> degenerate(set.manifest.size(), 0);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto stretched = linear_stretch(render_raw(grouped, set.manifest[i]));
      set.images[i] = std::move(stretched.image);
      degenerate[i] = stretched.degenerate ? 1 : 0;
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min<std::size_t>(options.jobs, set.manifest.size()));
  if (jobs == 1) {
    work(0, set.manifest.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (set.manifest.size() + jobs - 1) / jobs;
    for (std::size_t j = 0; j < jobs; ++j) {
      const std::size_t b = j * chunk;
      const std::size_t e = std::min(set.manifest.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }
  set.degenerate_count = static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), 1));
  return set;
}

void write_set(const TriSpectralSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in " + dir.string());
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    write_ppm(set.images[i], dir / ("img_" + std::to_string(i) + ".ppm"));
    const auto& t = set.manifest[i];
    manifest << i << ' ' << t.g1 << ' ' << t.g2 << ' ' << t.g3 << '\n';
  }
  if (!manifest) throw IoError("manifest write failed in " + dir.string());
}

TriSpectralSet read_set(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("missing manifest.txt in " + dir.string());
  TriSpectralSet set;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::size_t index = 0;
    BandTriplet t;
    if (!(fields >> index >> t.g1 >> t.g2 >> t.g3)) throw FormatError("malformed manifest line: " + line);
    if (index != set.images.size()) throw FormatError("manifest indices must be consecutive from 0");
    set.images.push_back(read_ppm(dir / ("img_" + std::to_string(index) + ".ppm")));
    set.manifest.push_back(t);
  }
  if (set.images.empty()) throw DataError("empty tri-spectral set in " + dir.string());
  return set;
}

}  // namespace dcnt::trispec
