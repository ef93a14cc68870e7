#pragma once

// Differentiable primitives. Images are single C x H x W tensors; token sets
// are N x C matrices with one row per token.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dcnt/tensor.hpp"

namespace dcnt::ad {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Adds b (length = last extent of x) to every row of x.
Tensor add_bias(const Tensor& x, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& x, Shape shape);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  std::size_t groups = 1;
};

/// x: C x H x W, weight: O x (C/groups) x kh x kw, bias: O or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dParams& params);
/// One filter per channel; weight: C x 1 x kh x kw.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t pad_h,
                        std::size_t pad_w);

/// Non-overlapping window max pooling. Ties route the gradient to the first
/// maximal element in row-major window order.
Tensor maxpool2d(const Tensor& x, std::size_t window = 2);

Tensor relu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean of the elements at the given flat indices.
Tensor mean_over_index_set(const Tensor& x, std::span<const std::size_t> indices);

Tensor softmax(const Tensor& x, std::size_t axis);
/// Row softmax of an N x M matrix restricted to allowed entries; masked
/// entries get probability 0. The mask is either per key (length M, shared by
/// all rows) or per entry (length N*M, row-major).
Tensor masked_softmax_rows(const Tensor& x, std::span<const std::uint8_t> mask);

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes over the last axis, then applies gamma and beta (both of the
/// last extent).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// C x H x W -> C x fH x fW, half-pixel centers (align_corners = false).
Tensor bilinear_upsample(const Tensor& x, std::size_t factor);

/// Keeps the top-left height x width window of a C x H x W tensor.
Tensor crop2d(const Tensor& x, std::size_t height, std::size_t width);

/// Rows idx[k] of an N x C matrix.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx);

/// Z x C matrix of per-set row means; sets that receive no row yield zeros.
Tensor scatter_mean(const Tensor& x, std::span<const std::int32_t> set_of_row, std::size_t sets);

/// Softmax cross entropy of K x H x W logits against 1-based labels (0 =
/// unlabeled), averaged over labeled pixels.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::uint16_t> labels);

}  // namespace dcnt::ad
