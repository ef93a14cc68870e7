#include "dcnt/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "dcnt/errors.hpp"

namespace dcnt::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Gradient buffer of an input, or nullptr when it does not require one.
double* grad_buf(const std::shared_ptr<Node>& n) { return n->requires_grad ? n->ensure_grad().data() : nullptr; }

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw ContractError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_rank(const std::string& op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ContractError(op + ": expected rank " + std::to_string(rank) + ", got shape " + shape_str(t.shape()));
  }
}

template <class F>
Tensor elementwise_binary(const char* op, const Tensor& a, const Tensor& b, F f, double da_sign, double db_sign,
                          bool product) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return make_result(op, a.shape(), std::move(out), {a, b}, [da_sign, db_sign, product](Node& self) {
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    double* ga = grad_buf(A);
    double* gb = grad_buf(B);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i];
      if (product) {
        if (ga) ga[i] += g * B->value[i];
        if (gb) gb[i] += g * A->value[i];
      } else {
        if (ga) ga[i] += da_sign * g;
        if (gb) gb[i] += db_sign * g;
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary("add", a, b, [](double x, double y) { return x + y; }, 1.0, 1.0, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary("sub", a, b, [](double x, double y) { return x - y; }, 1.0, -1.0, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary("mul", a, b, [](double x, double y) { return x * y; }, 0.0, 0.0, true);
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= s;
  return make_result("scale", a.shape(), std::move(out), {a}, [s](Node& self) {
    double* ga = grad_buf(self.inputs[0]);
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += s * self.grad[i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() == 0 || b.rank() != 1 || b.dim(0) != x.shape().back()) shape_error("add_bias", x.shape(), b.shape());
  const std::size_t c = b.dim(0);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
  return make_result("add_bias", x.shape(), std::move(out), {x, b}, [c](Node& self) {
    double* gx = grad_buf(self.inputs[0]);
    double* gb = grad_buf(self.inputs[1]);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (gx) gx[i] += self.grad[i];
      if (gb) gb[i % c] += self.grad[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() = ConstMapMat(a.values().data(), m, k) * ConstMapMat(b.values().data(), k, n);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    ConstMapMat g(self.grad.data(), m, n);
    if (double* ga = grad_buf(A)) MapMat(ga, m, k).noalias() += g * ConstMapMat(B->value.data(), k, n).transpose();
    if (double* gb = grad_buf(B)) MapMat(gb, k, n).noalias() += ConstMapMat(A->value.data(), m, k).transpose() * g;
  });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return make_result("transpose", {n, m}, std::move(out), {a}, [m, n](Node& self) {
    double* ga = grad_buf(self.inputs[0]);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    double* gx = grad_buf(self.inputs[0]);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

namespace {

struct ConvGeometry {
  std::size_t channels, height, width, out_channels, kh, kw, out_h, out_w;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const Conv2dParams& p) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", w, 4);
  if (p.groups == 0 || p.stride == 0) throw ContractError("conv2d: groups and stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), w.dim(3), 0, 0};
  if (g.channels % p.groups != 0 || g.out_channels % p.groups != 0 || w.dim(1) != g.channels / p.groups) {
    shape_error("conv2d", x.shape(), w.shape());
  }
  if (g.height + 2 * p.pad_h < g.kh || g.width + 2 * p.pad_w < g.kw) shape_error("conv2d", x.shape(), w.shape());
  g.out_h = (g.height + 2 * p.pad_h - g.kh) / p.stride + 1;
  g.out_w = (g.width + 2 * p.pad_w - g.kw) / p.stride + 1;
  return g;
}

// col: (C*kh*kw) x (out_h*out_w)
void im2col(const double* x, const ConvGeometry& g, const Conv2dParams& p, double* col) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* dst = col + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * p.stride + ki) - static_cast<std::ptrdiff_t>(p.pad_h);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * p.stride + kj) - static_cast<std::ptrdiff_t>(p.pad_w);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                ix < static_cast<std::ptrdiff_t>(g.width);
            dst[oy * g.out_w + ox] = inside ? x[(c * g.height + iy) * g.width + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, const Conv2dParams& p, double* dx) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* src = col + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * p.stride + ki) - static_cast<std::ptrdiff_t>(p.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * p.stride + kj) - static_cast<std::ptrdiff_t>(p.pad_w);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            dx[(c * g.height + iy) * g.width + ix] += src[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

Tensor dense_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dParams& p, const ConvGeometry& g) {
  const std::size_t rows = g.channels * g.kh * g.kw;
  const std::size_t plane = g.out_h * g.out_w;
  std::vector<double> col(rows * plane);
  im2col(x.values().data(), g, p, col.data());
  std::vector<double> out(g.out_channels * plane);
  MapMat y(out.data(), g.out_channels, plane);
  y.noalias() = ConstMapMat(w.values().data(), g.out_channels, rows) * ConstMapMat(col.data(), rows, plane);
  if (b.defined()) {
    for (std::size_t o = 0; o < g.out_channels; ++o) y.row(o).array() += b[o];
  }
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result(
      "conv2d", {g.out_channels, g.out_h, g.out_w}, std::move(out), std::move(inputs),
      [g, p, rows, plane, col = std::move(col)](Node& self) {
        ConstMapMat dy(self.grad.data(), g.out_channels, plane);
        const auto& X = self.inputs[0];
        const auto& W = self.inputs[1];
        if (double* gw = grad_buf(W)) {
          MapMat(gw, g.out_channels, rows).noalias() += dy * ConstMapMat(col.data(), rows, plane).transpose();
        }
        if (self.inputs.size() > 2) {
          if (double* gb = grad_buf(self.inputs[2])) {
            for (std::size_t o = 0; o < g.out_channels; ++o) gb[o] += dy.row(o).sum();
          }
        }
        if (double* gx = grad_buf(X)) {
          std::vector<double> dcol(rows * plane);
          MapMat(dcol.data(), rows, plane).noalias() =
              ConstMapMat(W->value.data(), g.out_channels, rows).transpose() * dy;
          col2im(dcol.data(), g, p, gx);
        }
      });
}

// Direct loops for grouped (including depthwise) convolution.
Tensor grouped_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv2dParams& p,
                      const ConvGeometry& g) {
  const std::size_t in_per = g.channels / p.groups;
  const std::size_t out_per = g.out_channels / p.groups;
  auto for_each_tap = [g, p, in_per, out_per](auto&& visit) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const std::size_t group = o / out_per;
      for (std::size_t ci = 0; ci < in_per; ++ci) {
        const std::size_t c = group * in_per + ci;
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
          for (std::size_t kj = 0; kj < g.kw; ++kj) {
            const std::size_t widx = ((o * in_per + ci) * g.kh + ki) * g.kw + kj;
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * p.stride + ki) - static_cast<std::ptrdiff_t>(p.pad_h);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
              for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const auto ix =
                    static_cast<std::ptrdiff_t>(ox * p.stride + kj) - static_cast<std::ptrdiff_t>(p.pad_w);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                visit((o * g.out_h + oy) * g.out_w + ox, (c * g.height + iy) * g.width + ix, widx);
              }
            }
          }
        }
      }
    }
  };
  const std::size_t plane = g.out_h * g.out_w;
  std::vector<double> out(g.out_channels * plane, 0.0);
  if (b.defined()) {
    for (std::size_t o = 0; o < g.out_channels; ++o)
      std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(o * plane), plane, b[o]);
  }
  const auto xv = x.values();
  const auto wv = w.values();
  for_each_tap([&](std::size_t yi, std::size_t xi, std::size_t wi) { out[yi] += wv[wi] * xv[xi]; });
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result("grouped_conv2d", {g.out_channels, g.out_h, g.out_w}, std::move(out), std::move(inputs),
                     [for_each_tap, g, plane](Node& self) {
                       const auto& X = self.inputs[0];
                       const auto& W = self.inputs[1];
                       double* gx = grad_buf(X);
                       double* gw = grad_buf(W);
                       for_each_tap([&](std::size_t yi, std::size_t xi, std::size_t wi) {
                         const double gy = self.grad[yi];
                         if (gx) gx[xi] += gy * W->value[wi];
                         if (gw) gw[wi] += gy * X->value[xi];
                       });
                       if (self.inputs.size() > 2) {
                         if (double* gb = grad_buf(self.inputs[2])) {
                           for (std::size_t o = 0; o < g.out_channels; ++o)
                             for (std::size_t i = 0; i < plane; ++i) gb[o] += self.grad[o * plane + i];
                         }
                       }
                     });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dParams& params) {
  const ConvGeometry g = conv_geometry(x, weight, params);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels)) {
    shape_error("conv2d bias", weight.shape(), bias.shape());
  }
  return params.groups == 1 ? dense_conv2d(x, weight, bias, params, g) : grouped_conv2d(x, weight, bias, params, g);
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t pad_h,
                        std::size_t pad_w) {
  require_rank("depthwise_conv2d", x, 3);
  return conv2d(x, weight, bias, Conv2dParams{1, pad_h, pad_w, x.dim(0)});
}

Tensor maxpool2d(const Tensor& x, std::size_t window) {
  require_rank("maxpool2d", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (window == 0 || h < window || w < window) throw ContractError("maxpool2d: window larger than input " + shape_str(x.shape()));
  const std::size_t oh = h / window, ow = w / window;
  std::vector<double> out(c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (ch * h + oy * window) * w + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = (ch * h + oy * window + dy) * w + ox * window + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (ch * oh + oy) * ow + ox;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  return make_result("maxpool2d", {c, oh, ow}, std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
    double* gx = grad_buf(self.inputs[0]);
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self.grad[o];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return make_result("relu", x.shape(), std::move(out), {x}, [](Node& self) {
    const auto& X = self.inputs[0];
    double* gx = grad_buf(X);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (X->value[i] > 0.0) gx[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result("sum", {}, {s}, {x}, [](Node& self) {
    double* gx = grad_buf(self.inputs[0]);
    for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) gx[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_over_index_set(const Tensor& x, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("mean_over_index_set: empty index set");
  double s = 0.0;
  for (auto i : indices) {
    if (i >= x.numel()) throw ContractError("mean_over_index_set: index out of range");
    s += x[i];
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result("mean_over_index_set", {}, {s * inv}, {x}, [idx = std::move(idx), inv](Node& self) {
    double* gx = grad_buf(self.inputs[0]);
    for (auto i : idx) gx[i] += inv * self.grad[0];
  });
}

namespace {

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// y is a softmax along the split axis; dx = y * (dy - <dy, y>).
void softmax_backward(const AxisSplit& s, const std::vector<double>& y, const std::vector<double>& dy, double* dx) {
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double dot = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) dot += dy[base + k * s.inner] * y[base + k * s.inner];
      for (std::size_t k = 0; k < s.extent; ++k) {
        const std::size_t i = base + k * s.inner;
        dx[i] += y[i] * (dy[i] - dot);
      }
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ContractError("softmax: axis out of range for shape " + shape_str(x.shape()));
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(x[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= z;
    }
  }
  std::vector<double> saved = out;
  return make_result("softmax", x.shape(), std::move(out), {x}, [s, saved = std::move(saved)](Node& self) {
    softmax_backward(s, saved, self.grad, grad_buf(self.inputs[0]));
  });
}

Tensor masked_softmax_rows(const Tensor& x, std::span<const std::uint8_t> mask) {
  require_rank("masked_softmax_rows", x, 2);
  const std::size_t n = x.dim(0), m = x.dim(1);
  const bool per_pair = mask.size() == n * m && mask.size() != m;
  if (mask.size() != m && mask.size() != n * m) {
    throw ContractError("masked_softmax_rows: mask length " + std::to_string(mask.size()) +
                        " fits neither keys nor the score matrix " + shape_str(x.shape()));
  }
  auto allowed = [&](std::size_t i, std::size_t j) { return per_pair ? mask[i * m + j] != 0 : mask[j] != 0; };
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (allowed(i, j)) mx = std::max(mx, x[i * m + j]);
    if (!std::isfinite(mx)) continue;  // every key masked: all-zero row
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!allowed(i, j)) continue;
      out[i * m + j] = std::exp(x[i * m + j] - mx);
      z += out[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  std::vector<double> saved = out;
  const AxisSplit s{n, m, 1};
  return make_result("masked_softmax_rows", {n, m}, std::move(out), {x}, [s, saved = std::move(saved)](Node& self) {
    // Masked entries have y = 0 and therefore receive no gradient.
    softmax_backward(s, saved, self.grad, grad_buf(self.inputs[0]));
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0) throw ContractError("layer_norm: scalar input");
  const std::size_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c) shape_error("layer_norm", x.shape(), gamma.shape());
  const std::size_t rows = x.numel() / c;
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t k = 0; k < c; ++k) mu += x[r * c + k];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t k = 0; k < c; ++k) var += (x[r * c + k] - mu) * (x[r * c + k] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t i = r * c + k;
      xhat[i] = (x[i] - mu) * inv_std[r];
      out[i] = xhat[i] * gamma[k] + beta[k];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                     [c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const auto& G = self.inputs[1];
                       double* gx = grad_buf(self.inputs[0]);
                       double* gg = grad_buf(G);
                       double* gb = grad_buf(self.inputs[2]);
                       std::vector<double> dxhat(c);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_d = 0.0, mean_dx = 0.0;
                         for (std::size_t k = 0; k < c; ++k) {
                           const std::size_t i = r * c + k;
                           const double dy = self.grad[i];
                           if (gg) gg[k] += dy * xhat[i];
                           if (gb) gb[k] += dy;
                           dxhat[k] = dy * G->value[k];
                           mean_d += dxhat[k];
                           mean_dx += dxhat[k] * xhat[i];
                         }
                         if (!gx) continue;
                         mean_d /= static_cast<double>(c);
                         mean_dx /= static_cast<double>(c);
                         for (std::size_t k = 0; k < c; ++k) {
                           const std::size_t i = r * c + k;
                           gx[i] += inv_std[r] * (dxhat[k] - mean_d - xhat[i] * mean_dx);
                         }
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ContractError("concat: axis out of range for shape " + shape_str(ref));
  Shape shape = ref;
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) shape_error("concat", ref, p.shape());
    for (std::size_t d = 0; d < ref.size(); ++d)
      if (d != axis && p.dim(d) != ref[d]) shape_error("concat", ref, p.shape());
    shape[axis] += p.dim(axis);
  }
  const AxisSplit s = split_axis(shape, axis);
  std::vector<double> out(shape_numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t ext = p.dim(axis);
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.values().begin() + static_cast<std::ptrdiff_t>(o * ext * s.inner), ext * s.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * s.extent + offset) * s.inner));
    }
    offset += ext;
  }
  return make_result("concat", shape, std::move(out), parts, [s, offsets = std::move(offsets)](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      double* g = grad_buf(self.inputs[k]);
      if (!g) continue;
      const std::size_t ext = self.inputs[k]->shape.empty() ? 1 : self.inputs[k]->value.size() / (s.outer * s.inner);
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = self.grad.data() + (o * s.extent + offsets[k]) * s.inner;
        double* dst = g + o * ext * s.inner;
        for (std::size_t i = 0; i < ext * s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

namespace {

struct LerpTap {
  std::size_t lo, hi;
  double frac;
};

// Half-pixel-center source positions, clamped at the borders.
std::vector<LerpTap> bilinear_taps(std::size_t in, std::size_t factor) {
  std::vector<LerpTap> taps(in * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::max(src, 0.0);
    auto lo = static_cast<std::size_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[o] = {lo, hi, lo == hi ? 0.0 : src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::size_t factor) {
  require_rank("bilinear_upsample", x, 3);
  if (factor == 0) throw ContractError("bilinear_upsample: factor must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;
  const auto ty = bilinear_taps(h, factor);
  const auto tx = bilinear_taps(w, factor);
  std::vector<double> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = x.values().data() + ch * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const auto& vy = ty[oy];
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const auto& vx = tx[ox];
        const double a = src[vy.lo * w + vx.lo], b = src[vy.lo * w + vx.hi];
        const double cc = src[vy.hi * w + vx.lo], d = src[vy.hi * w + vx.hi];
        const double top = a + vx.frac * (b - a);
        const double bot = cc + vx.frac * (d - cc);
        out[(ch * oh + oy) * ow + ox] = top + vy.frac * (bot - top);
      }
    }
  }
  return make_result("bilinear_upsample", {c, oh, ow}, std::move(out), {x}, [c, h, w, oh, ow, ty, tx](Node& self) {
    double* gx = grad_buf(self.inputs[0]);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* dst = gx + ch * h * w;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const auto& vy = ty[oy];
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const auto& vx = tx[ox];
          const double g = self.grad[(ch * oh + oy) * ow + ox];
          dst[vy.lo * w + vx.lo] += g * (1 - vy.frac) * (1 - vx.frac);
          dst[vy.lo * w + vx.hi] += g * (1 - vy.frac) * vx.frac;
          dst[vy.hi * w + vx.lo] += g * vy.frac * (1 - vx.frac);
          dst[vy.hi * w + vx.hi] += g * vy.frac * vx.frac;
        }
      }
    }
  });
}

Tensor crop2d(const Tensor& x, std::size_t height, std::size_t width) {
  require_rank("crop2d", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (height > h || width > w) throw ContractError("crop2d: window larger than input " + shape_str(x.shape()));
  std::vector<double> out(c * height * width);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t xx = 0; xx < width; ++xx) out[(ch * height + y) * width + xx] = x[(ch * h + y) * w + xx];
  return make_result("crop2d", {c, height, width}, std::move(out), {x}, [c, h, w, height, width](Node& self) {
    double* gx = grad_buf(self.inputs[0]);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t xx = 0; xx < width; ++xx) gx[(ch * h + y) * w + xx] += self.grad[(ch * height + y) * width + xx];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  require_rank("gather_rows", x, 2);
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<double> out(idx.size() * c);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= n) throw ContractError("gather_rows: row index out of range");
    std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(idx[k] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(k * c));
  }
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  return make_result("gather_rows", {idx.size(), c}, std::move(out), {x}, [rows = std::move(rows), c](Node& self) {
    double* gx = grad_buf(self.inputs[0]);
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (std::size_t j = 0; j < c; ++j) gx[rows[k] * c + j] += self.grad[k * c + j];
  });
}

Tensor scatter_mean(const Tensor& x, std::span<const std::int32_t> set_of_row, std::size_t sets) {
  require_rank("scatter_mean", x, 2);
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (set_of_row.size() != n) throw ContractError("scatter_mean: set table length does not match row count");
  std::vector<double> counts(sets, 0.0);
  for (auto s : set_of_row) {
    if (s < 0 || static_cast<std::size_t>(s) >= sets) throw ContractError("scatter_mean: set index out of range");
    counts[static_cast<std::size_t>(s)] += 1.0;
  }
  std::vector<double> out(sets * c, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto s = static_cast<std::size_t>(set_of_row[r]);
    for (std::size_t j = 0; j < c; ++j) out[s * c + j] += x[r * c + j];
  }
  for (std::size_t s = 0; s < sets; ++s)
    if (counts[s] > 0)
      for (std::size_t j = 0; j < c; ++j) out[s * c + j] /= counts[s];
  std::vector<std::int32_t> table(set_of_row.begin(), set_of_row.end());
  return make_result("scatter_mean", {sets, c}, std::move(out), {x},
                     [table = std::move(table), counts = std::move(counts), c](Node& self) {
                       double* gx = grad_buf(self.inputs[0]);
                       for (std::size_t r = 0; r < table.size(); ++r) {
                         const auto s = static_cast<std::size_t>(table[r]);
                         for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += self.grad[s * c + j] / counts[s];
                       }
                     });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::uint16_t> labels) {
  require_rank("softmax_cross_entropy", logits, 3);
  const std::size_t k = logits.dim(0);
  const std::size_t plane = logits.dim(1) * logits.dim(2);
  if (labels.size() != plane) throw ContractError("softmax_cross_entropy: label map does not match logits");
  std::vector<double> probs(k * plane, 0.0);
  std::size_t labeled = 0;
  double total = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    if (labels[p] == 0) continue;
    if (labels[p] > k) throw ContractError("softmax_cross_entropy: label exceeds class count");
    ++labeled;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, logits[c * plane + p]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(logits[c * plane + p] - mx);
    const double log_z = mx + std::log(z);
    total += log_z - logits[(labels[p] - 1u) * plane + p];
    for (std::size_t c = 0; c < k; ++c) probs[c * plane + p] = std::exp(logits[c * plane + p] - log_z);
  }
  if (labeled == 0) throw ContractError("softmax_cross_entropy: no labeled pixels");
  const double inv = 1.0 / static_cast<double>(labeled);
  std::vector<std::uint16_t> lab(labels.begin(), labels.end());
  return make_result("softmax_cross_entropy", {}, {total * inv}, {logits},
                     [k, plane, inv, probs = std::move(probs), lab = std::move(lab)](Node& self) {
                       double* g = grad_buf(self.inputs[0]);
                       const double scale_g = inv * self.grad[0];
                       for (std::size_t p = 0; p < plane; ++p) {
                         if (lab[p] == 0) continue;
                         for (std::size_t c = 0; c < k; ++c) {
                           const double target = (c + 1 == lab[p]) ? 1.0 : 0.0;
                           g[c * plane + p] += scale_g * (probs[c * plane + p] - target);
                         }
                       }
                     });
}

}  // namespace dcnt::ad
