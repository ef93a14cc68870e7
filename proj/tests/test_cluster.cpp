#include <doctest.h>

#include <cmath>

#include "dcnt/cluster.hpp"
#include "dcnt/errors.hpp"
#include "dcnt/gradcheck.hpp"
#include "dcnt/ops.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace dcnt;
using namespace dcnt::cluster;
using ad::Tensor;

namespace {

// C x 4 x 4 map whose quadrants hold the given per-channel constants.
Tensor quadrant_map(const std::vector<std::vector<double>>& q) {
  const std::size_t c = q[0].size();
  std::vector<double> v(c * 16);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) v[ch * 16 + y * 4 + x] = q[(y / 2) * 2 + x / 2][ch];
  return Tensor::from({c, 4, 4}, v);
}

std::size_t window_slot(const GridLayout& g, std::size_t pixel, std::int32_t cluster) {
  const auto& c = g.candidates(pixel);
  for (std::size_t k = 0; k < kWindowSlots; ++k)
    if (c[k] == cluster) return k;
  return kWindowSlots;
}

}  // namespace

TEST_CASE("grid layout") {
  const auto g = GridLayout::build(4, 4, 4);
  CHECK(g.rows == 2);
  CHECK(g.cols == 2);
  CHECK(g.cell_of_pixel[0] == 0);
  CHECK(g.cell_of_pixel[3] == 1);
  CHECK(g.cell_of_pixel[15] == 3);
  const auto wide = GridLayout::build(4, 16, 16);
  CHECK(wide.rows == 2);
  CHECK(wide.cols == 8);
  const auto odd = GridLayout::build(7, 5, 6);
  CHECK(odd.rows * odd.cols == 6);
  std::vector<std::size_t> per_cell(6, 0);
  for (auto c : odd.cell_of_pixel) ++per_cell[static_cast<std::size_t>(c)];
  for (auto n : per_cell) CHECK(n > 0);
  CHECK_THROWS_AS(GridLayout::build(4, 4, 3), ConfigError);
  CHECK_THROWS_AS(GridLayout::build(2, 2, 5), ConfigError);
  CHECK_THROWS_AS(GridLayout::build(2, 3, 5), ConfigError);
}

TEST_CASE("initial centers are cell means") {
  const auto f = quadrant_map({{1.0, -1.0}, {2.0, 0.5}, {3.0, 4.0}, {-2.0, 7.0}});
  const auto init = init_centers(f, 4);
  const std::vector<double> expect{1.0, -1.0, 2.0, 0.5, 3.0, 4.0, -2.0, 7.0};
  for (std::size_t i = 0; i < 8; ++i) CHECK(init.centers[i] == doctest::Approx(expect[i]));

  std::mt19937_64 rng(1);
  const auto r = testing::random_tensor({1, 4, 4}, rng);
  const auto rc = init_centers(r, 4);
  const double q0 = (r[0] + r[1] + r[4] + r[5]) / 4.0;
  CHECK(rc.centers[0] == doctest::Approx(q0));

  const auto constant = init_centers(Tensor::full({3, 6, 6}, 0.7), 9);
  for (double v : constant.centers.values()) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("affinity values and window geometry") {
  const auto g = GridLayout::build(6, 6, 9);
  const auto tokens = Tensor::full({36, 2}, 0.0);
  std::vector<double> c(18, 0.0);
  c[1 * 2 + 0] = 1.0;  // cluster 1 at distance 1 from every pixel
  const auto a = compute_affinity(tokens, Tensor::from({9, 2}, c), g);
  // Pixel 0 sits in the corner cell: 4 candidates.
  std::size_t nz = 0;
  for (std::size_t k = 0; k < kWindowSlots; ++k) nz += a[k] > 0.0;
  CHECK(nz == 4);
  CHECK(a[window_slot(g, 0, 0)] == 1.0);
  CHECK(a[window_slot(g, 0, 1)] == doctest::Approx(std::exp(-1.0)));
  CHECK(a[window_slot(g, 0, 1)] == doctest::Approx(0.36788).epsilon(1e-5));
  // Pixel (2,2) sits in the centre cell: all 9.
  const std::size_t centre = 2 * 6 + 2;
  nz = 0;
  for (std::size_t k = 0; k < kWindowSlots; ++k) nz += a[centre * kWindowSlots + k] > 0.0;
  CHECK(nz == 9);
}

TEST_CASE("soft center updates") {
  const auto g = GridLayout::build(2, 2, 4);
  const auto tokens = Tensor::from({4, 1}, {1.0, 2.0, 3.0, 10.0});
  const auto previous = Tensor::from({4, 1}, {9, 9, 9, 9});
  SUBCASE("one-hot affinity gives hard means") {
    std::vector<double> a(4 * kWindowSlots, 0.0);
    for (std::size_t j = 0; j < 4; ++j) a[j * kWindowSlots + window_slot(g, j, 0)] = 1.0;
    const auto u = soft_update_centers(tokens, Tensor::from({4, kWindowSlots}, a), previous, g);
    CHECK(u.centers[0] == doctest::Approx(4.0));
    CHECK(u.centers[1] == 9.0);
    CHECK(u.stale == std::vector<std::uint8_t>{0, 1, 1, 1});
  }
  SUBCASE("uniform affinity gives the global mean") {
    const auto u = soft_update_centers(tokens, Tensor::full({4, kWindowSlots}, 0.5), previous, g);
    for (std::size_t i = 0; i < 4; ++i) CHECK(u.centers[i] == doctest::Approx(4.0));
  }
  SUBCASE("two pixels, two clusters, weights 0.8 / 0.2") {
    std::vector<double> a(4 * kWindowSlots, 0.0);
    a[0 * kWindowSlots + window_slot(g, 0, 0)] = 0.8;
    a[0 * kWindowSlots + window_slot(g, 0, 1)] = 0.2;
    a[1 * kWindowSlots + window_slot(g, 1, 0)] = 0.2;
    a[1 * kWindowSlots + window_slot(g, 1, 1)] = 0.8;
    const auto u = soft_update_centers(tokens, Tensor::from({4, kWindowSlots}, a), previous, g);
    CHECK(u.centers[0] == doctest::Approx((0.8 * 1 + 0.2 * 2) / 1.0));
    CHECK(u.centers[1] == doctest::Approx((0.2 * 1 + 0.8 * 2) / 1.0));
  }
}

TEST_CASE("hard assignment ties go to the smaller index") {
  const auto g = GridLayout::build(6, 6, 9);
  std::vector<double> a(36 * kWindowSlots, 0.1);
  const std::size_t centre = 2 * 6 + 2;
  a[centre * kWindowSlots + window_slot(g, centre, 3)] = 0.9;
  a[centre * kWindowSlots + window_slot(g, centre, 5)] = 0.9;
  const auto h = hard_assign(Tensor::from({36, kWindowSlots}, a), g);
  CHECK(h.labels[centre] == 3);
  std::size_t total = 0;
  for (auto n : h.counts) total += n;
  CHECK(total == 36);

  const auto g1 = GridLayout::build(2, 2, 4);
  CHECK(hard_assign(Tensor::full({4, kWindowSlots}, 0.5), g1).labels[3] == 0);
}

TEST_CASE("hard assignment matches an exhaustive argmax") {
  std::mt19937_64 rng(2);
  const auto f = testing::random_tensor({3, 6, 6}, rng, 0.0, 1.0);
  const auto g = GridLayout::build(6, 6, 4);
  const auto centers = testing::random_tensor({4, 3}, rng, 0.0, 1.0);
  const auto tokens = nn::map_to_tokens(f);
  const auto h = hard_assign(compute_affinity(tokens, centers, g), g);
  for (std::size_t j = 0; j < 36; ++j) {
    int best = -1;
    double best_d = 1e300;
    for (std::size_t i = 0; i < 4; ++i) {
      double d = 0.0;
      for (std::size_t c = 0; c < 3; ++c) d += std::pow(tokens[j * 3 + c] - centers[i * 3 + c], 2);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    CHECK(h.labels[j] == best);
  }
}

TEST_CASE("quadrant map clusters into its quadrants") {
  const auto f = quadrant_map({{0.0, 0.0}, {3.0, 0.0}, {0.0, 3.0}, {3.0, 3.0}});
  const auto a = run_clustering(f, 4, 1);
  for (std::size_t p = 0; p < 16; ++p) CHECK(a.hard_labels[p] == a.layout.cell_of_pixel[p]);
  const auto o = oracle::cluster(std::vector<double>(f.values().begin(), f.values().end()), 2, 4, 4, 2, 1);
  for (std::size_t p = 0; p < 16; ++p) CHECK(a.hard_labels[p] == o.labels[p]);
}

TEST_CASE("constant map resolves every tie to the lowest window index") {
  const auto a = run_clustering(Tensor::full({2, 6, 6}, 0.3), 9, 3);
  for (std::size_t p = 0; p < 36; ++p) {
    const auto& c = a.layout.candidates(p);
    CHECK(a.hard_labels[p] == *std::min_element(c.begin(), c.begin() + 4));
  }
}

TEST_CASE("two separated blobs end up in two areas") {
  // Left half near 0, right half near 4. Z = 4 tiles the 4 x 8 map into a
  // row of four 4 x 2 cells, two per blob.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.05);
  std::vector<double> v(2 * 32);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 8; ++x) v[c * 32 + y * 8 + x] = (x < 4 ? 0.0 : 4.0) + n(rng);
  const auto a = run_clustering(Tensor::from({2, 4, 8}, v), 4, 5);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      const auto label = a.hard_labels[y * 8 + x];
      CHECK((x < 4) == (label < 2));
    }
}

TEST_CASE("invariants over random maps") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = testing::random_tensor({3, 8, 8}, rng, 0.0, 1.0);
    const auto a = run_clustering(f, 4, 3);
    std::size_t total = 0;
    for (auto n : a.counts) total += n;
    CHECK(total == 64);
    for (std::size_t p = 0; p < 64; ++p) CHECK(window_slot(a.layout, p, a.hard_labels[p]) < kWindowSlots);
    for (double v : a.affinity.values()) CHECK((v >= 0.0 && v <= 1.0));

    // Channel permutation permutes centers and keeps labels.
    const std::vector<std::size_t> perm{2, 0, 1};
    std::vector<double> pv(f.numel());
    for (std::size_t c = 0; c < 3; ++c)
      std::copy_n(f.values().begin() + perm[c] * 64, 64, pv.begin() + c * 64);
    const auto b = run_clustering(Tensor::from({3, 8, 8}, pv), 4, 3);
    CHECK(b.hard_labels == a.hard_labels);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 3; ++c) CHECK(b.centers[i * 3 + c] == doctest::Approx(a.centers[i * 3 + perm[c]]));
  }
}

TEST_CASE("a converged assignment stays put") {
  const auto f = quadrant_map({{0.0}, {2.0}, {4.0}, {6.0}});
  const auto a = run_clustering(f, 4, 2), b = run_clustering(f, 4, 6);
  CHECK(a.hard_labels == b.hard_labels);
}

TEST_CASE("gradient through two soft iterations") {
  std::mt19937_64 rng(5);
  auto f = testing::random_tensor({3, 6, 6}, rng, 0.0, 1.0, true);
  const auto r = ad::grad_check(
      [&] {
        const auto a = run_clustering(f, 4, 2);
        return ad::sum(ad::mul(a.centers, a.centers));
      },
      {f});
  CHECK(r.ok(1e-4));
}

TEST_CASE("dense affinity is zero outside each window") {
  std::mt19937_64 rng(6);
  const auto a = run_clustering(testing::random_tensor({2, 6, 6}, rng), 9, 1);
  const auto dense = a.dense_affinity();
  for (std::size_t j = 0; j < 36; ++j)
    for (std::int32_t i = 0; i < 9; ++i) {
      const bool inside = window_slot(a.layout, j, i) < kWindowSlots;
      if (!inside) CHECK(dense[j * 9 + static_cast<std::size_t>(i)] == 0.0);
      else CHECK(dense[j * 9 + static_cast<std::size_t>(i)] > 0.0);
    }
}
