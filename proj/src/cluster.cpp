#include "dcnt/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dcnt/errors.hpp"
#include "dcnt/nn.hpp"
#include "dcnt/ops.hpp"

namespace dcnt::cluster {
namespace {

double* grad_buf(const std::shared_ptr<ad::Node>& n) { return n->requires_grad ? n->ensure_grad().data() : nullptr; }

std::vector<std::size_t> band_bounds(std::size_t extent, std::size_t bands) {
  std::vector<std::size_t> b(bands + 1);
  for (std::size_t k = 0; k <= bands; ++k) b[k] = k * extent / bands;
  return b;
}

}  // namespace

GridLayout GridLayout::build(std::size_t height, std::size_t width, std::size_t areas) {
  if (areas < 4) throw ConfigError("area count must be >= 4, got " + std::to_string(areas));
  if (areas > height * width) {
    throw ConfigError("area count " + std::to_string(areas) + " exceeds pixel count " + std::to_string(height * width));
  }
  // Row band count: the divisor of Z closest to sqrt(Z * H1 / W1). For a
  // square s x s tiling this is exactly H1 / s.
  const double target = std::sqrt(static_cast<double>(areas) * static_cast<double>(height) / static_cast<double>(width));
  std::size_t best = 0;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t d = 1; d <= areas; ++d) {
    if (areas % d != 0 || d > height || areas / d > width) continue;
    const double gap = std::abs(static_cast<double>(d) - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = d;
    }
  }
  if (best == 0) throw ConfigError("cannot tile the feature map into " + std::to_string(areas) + " cells");

  GridLayout g;
  g.height = height;
  g.width = width;
  g.areas = areas;
  g.rows = best;
  g.cols = areas / best;
  g.row_bounds = band_bounds(height, g.rows);
  g.col_bounds = band_bounds(width, g.cols);
  g.cell_of_pixel.resize(height * width);
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c)
      for (std::size_t y = g.row_bounds[r]; y < g.row_bounds[r + 1]; ++y)
        for (std::size_t x = g.col_bounds[c]; x < g.col_bounds[c + 1]; ++x)
          g.cell_of_pixel[y * width + x] = static_cast<std::int32_t>(r * g.cols + c);

  g.cell_candidates.resize(areas);
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) {
      CandidateSet set;
      set.fill(-1);
      std::size_t slot = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const auto rr = static_cast<std::ptrdiff_t>(r) + dr;
          const auto cc = static_cast<std::ptrdiff_t>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(g.rows) || cc >= static_cast<std::ptrdiff_t>(g.cols))
            continue;
          set[slot++] = static_cast<std::int32_t>(static_cast<std::size_t>(rr) * g.cols + static_cast<std::size_t>(cc));
        }
      }
      g.cell_candidates[r * g.cols + c] = set;
    }
  }
  return g;
}

std::vector<double> AreaAssignment::dense_affinity() const {
  const std::size_t n = layout.pixels();
  std::vector<double> dense(n * layout.areas, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& cand = layout.candidates(j);
    for (std::size_t k = 0; k < kWindowSlots; ++k)
      if (cand[k] >= 0) dense[j * layout.areas + static_cast<std::size_t>(cand[k])] = affinity[j * kWindowSlots + k];
  }
  return dense;
}

InitResult init_centers(const Tensor& feature, std::size_t areas) {
  if (feature.rank() != 3) throw ContractError("init_centers: expected C x H1 x W1 feature");
  GridLayout layout = GridLayout::build(feature.dim(1), feature.dim(2), areas);
  Tensor centers = ad::scatter_mean(nn::map_to_tokens(feature), layout.cell_of_pixel, areas);
  return {std::move(layout), std::move(centers)};
}

Tensor compute_affinity(const Tensor& tokens, const Tensor& centers, const GridLayout& layout) {
  const std::size_t n = layout.pixels();
  if (tokens.rank() != 2 || tokens.dim(0) != n || centers.rank() != 2 || centers.dim(0) != layout.areas ||
      centers.dim(1) != tokens.dim(1)) {
    throw ContractError("compute_affinity: tokens " + ad::shape_str(tokens.shape()) + " and centers " +
                        ad::shape_str(centers.shape()) + " do not fit the layout");
  }
  const std::size_t c = tokens.dim(1);
  std::vector<double> out(n * kWindowSlots, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& cand = layout.candidates(j);
    for (std::size_t k = 0; k < kWindowSlots; ++k) {
      if (cand[k] < 0) continue;
      const auto i = static_cast<std::size_t>(cand[k]);
      double d = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double diff = tokens[j * c + ch] - centers[i * c + ch];
        d += diff * diff;
      }
      out[j * kWindowSlots + k] = std::exp(-d);
    }
  }
  return ad::make_result("windowed_affinity", {n, kWindowSlots}, std::move(out), {tokens, centers},
                         [n, c, cands = layout.cell_candidates, cells = layout.cell_of_pixel](ad::Node& self) {
                           const auto& F = self.inputs[0];
                           const auto& R = self.inputs[1];
                           double* gf = grad_buf(F);
                           double* gr = grad_buf(R);
                           for (std::size_t j = 0; j < n; ++j) {
                             const auto& cand = cands[static_cast<std::size_t>(cells[j])];
                             for (std::size_t k = 0; k < kWindowSlots; ++k) {
                               if (cand[k] < 0) continue;
                               const auto i = static_cast<std::size_t>(cand[k]);
                               const double a = self.value[j * kWindowSlots + k];
                               const double g = self.grad[j * kWindowSlots + k] * a;
                               if (g == 0.0) continue;
                               for (std::size_t ch = 0; ch < c; ++ch) {
                                 const double diff = F->value[j * c + ch] - R->value[i * c + ch];
                                 if (gf) gf[j * c + ch] -= 2.0 * g * diff;
                                 if (gr) gr[i * c + ch] += 2.0 * g * diff;
                               }
                             }
                           }
                         });
}

SoftUpdate soft_update_centers(const Tensor& tokens, const Tensor& affinity, const Tensor& previous,
                               const GridLayout& layout) {
  const std::size_t n = layout.pixels();
  const std::size_t z = layout.areas;
  if (tokens.rank() != 2 || tokens.dim(0) != n || affinity.shape() != ad::Shape{n, kWindowSlots} ||
      previous.shape() != ad::Shape{z, tokens.dim(1)}) {
    throw ContractError("soft_update_centers: inconsistent shapes " + ad::shape_str(tokens.shape()) + ", " +
                        ad::shape_str(affinity.shape()) + ", " + ad::shape_str(previous.shape()));
  }
  const std::size_t c = tokens.dim(1);
  std::vector<double> mass(z, 0.0);
  std::vector<double> out(z * c, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const auto& cand = layout.candidates(j);
    for (std::size_t k = 0; k < kWindowSlots; ++k) {
      if (cand[k] < 0) continue;
      const auto i = static_cast<std::size_t>(cand[k]);
      const double a = affinity[j * kWindowSlots + k];
      mass[i] += a;
      for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] += a * tokens[j * c + ch];
    }
  }
  std::vector<std::uint8_t> stale(z, 0);
  for (std::size_t i = 0; i < z; ++i) {
    if (mass[i] > 0.0) {
      for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] /= mass[i];
    } else {
      stale[i] = 1;
      for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] = previous[i * c + ch];
    }
  }
  Tensor centers = ad::make_result(
      "soft_update_centers", {z, c}, std::move(out), {tokens, affinity, previous},
      [n, c, mass, stale, cands = layout.cell_candidates, cells = layout.cell_of_pixel](ad::Node& self) {
        const auto& F = self.inputs[0];
        const auto& A = self.inputs[1];
        double* gf = grad_buf(F);
        double* ga = grad_buf(A);
        double* gp = grad_buf(self.inputs[2]);
        for (std::size_t j = 0; j < n; ++j) {
          const auto& cand = cands[static_cast<std::size_t>(cells[j])];
          for (std::size_t k = 0; k < kWindowSlots; ++k) {
            if (cand[k] < 0) continue;
            const auto i = static_cast<std::size_t>(cand[k]);
            if (stale[i]) continue;
            const double inv_m = 1.0 / mass[i];
            const double a = A->value[j * kWindowSlots + k];
            double da = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
              const double g = self.grad[i * c + ch];
              da += g * (F->value[j * c + ch] - self.value[i * c + ch]);
              if (gf) gf[j * c + ch] += g * a * inv_m;
            }
            if (ga) ga[j * kWindowSlots + k] += da * inv_m;
          }
        }
        if (gp) {
          for (std::size_t i = 0; i < stale.size(); ++i)
            if (stale[i])
              for (std::size_t ch = 0; ch < c; ++ch) gp[i * c + ch] += self.grad[i * c + ch];
        }
      });
  return {std::move(centers), std::move(stale)};
}

HardAssignment hard_assign(const Tensor& affinity, const GridLayout& layout) {
  const std::size_t n = layout.pixels();
  if (affinity.shape() != ad::Shape{n, kWindowSlots}) throw ContractError("hard_assign: affinity does not fit layout");
  HardAssignment out{std::vector<std::int32_t>(n, -1), std::vector<std::size_t>(layout.areas, 0)};
  for (std::size_t j = 0; j < n; ++j) {
    const auto& cand = layout.candidates(j);
    std::int32_t best = -1;
    double best_a = -1.0;
    // Candidates are ascending, so the strict comparison keeps the smallest
    // index among ties.
    for (std::size_t k = 0; k < kWindowSlots; ++k) {
      if (cand[k] < 0) continue;
      const double a = affinity[j * kWindowSlots + k];
      if (a > best_a) {
        best_a = a;
        best = cand[k];
      }
    }
    out.labels[j] = best;
    ++out.counts[static_cast<std::size_t>(best)];
  }
  return out;
}

AreaAssignment run_clustering(const Tensor& feature, std::size_t areas, std::size_t iterations) {
  if (iterations < 1) throw ConfigError("clustering needs at least one iteration");
  InitResult init = init_centers(feature, areas);
  const Tensor tokens = nn::map_to_tokens(feature);
  AreaAssignment out;
  out.layout = std::move(init.layout);
  out.centers = std::move(init.centers);
  for (std::size_t t = 0; t < iterations; ++t) {
    out.affinity = compute_affinity(tokens, out.centers, out.layout);
    SoftUpdate upd = soft_update_centers(tokens, out.affinity, out.centers, out.layout);
    out.centers = std::move(upd.centers);
    out.stale = std::move(upd.stale);
  }
  HardAssignment hard = hard_assign(out.affinity, out.layout);
  out.hard_labels = std::move(hard.labels);
  out.counts = std::move(hard.counts);
  return out;
}

}  // namespace dcnt::cluster
