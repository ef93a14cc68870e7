#pragma once

// Transformer building blocks over token matrices (N tokens x C channels):
// multi-head (self/cross) attention, pre-norm encoder and decoder layers, and
// depthwise-convolution positional encodings.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dcnt/optim.hpp"
#include "dcnt/tensor.hpp"

namespace dcnt::nn {

using ad::ParameterList;
using ad::ParamGroup;
using ad::Tensor;

enum class Activation { relu };

struct AttentionConfig {
  std::size_t channels = 0;
  std::size_t heads = 1;
  std::size_t mlp_ratio = 2;
  Activation activation = Activation::relu;

  std::size_t head_dim() const { return channels / heads; }
  /// Throws ConfigError unless heads * head_dim == channels.
  void validate() const;
};

/// Attention mask: empty = every key participates; length Nk = per-key;
/// length Nq*Nk = per query/key pair.
using KeyMask = std::span<const std::uint8_t>;

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);

  /// x: N x in -> N x out
  Tensor forward(const Tensor& x) const;
  void collect(ParameterList& out, const std::string& prefix, ParamGroup group) const;
  void zero();

  Tensor weight;  // in x out
  Tensor bias;    // out
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t channels);

  Tensor forward(const Tensor& x) const;
  void collect(ParameterList& out, const std::string& prefix, ParamGroup group) const;

  Tensor gamma;
  Tensor beta;
};

class MultiHeadAttention {
 public:
  struct Head {
    Linear query, key, value;  // each C -> d
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(const AttentionConfig& cfg, std::mt19937_64& rng);

  /// Softmax over keys of Q K^T / sqrt(d) for one head: Nq x Nk.
  Tensor attention(std::size_t head, const Tensor& x1, const Tensor& x2, KeyMask mask = {}) const;
  /// One head's output, Nq x d.
  Tensor head(std::size_t head, const Tensor& x1, const Tensor& x2, KeyMask mask = {}) const;
  /// Queries from x1 (Nq x C), keys and values from x2 (Nk x C): Nq x C.
  Tensor forward(const Tensor& x1, const Tensor& x2, KeyMask mask = {}) const;

  void collect(ParameterList& out, const std::string& prefix, ParamGroup group) const;
  const AttentionConfig& config() const { return cfg_; }

  std::vector<Head> heads;
  Linear output;  // h*d -> C

 private:
  AttentionConfig cfg_;
};

Tensor self_attention(const MultiHeadAttention& attn, std::size_t head, const Tensor& x);
Tensor mhsa(const MultiHeadAttention& attn, const Tensor& x, KeyMask mask = {});
Tensor mha(const MultiHeadAttention& attn, const Tensor& x1, const Tensor& x2, KeyMask mask = {});

class Mlp {
 public:
  Mlp() = default;
  Mlp(const AttentionConfig& cfg, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  void collect(ParameterList& out, const std::string& prefix, ParamGroup group) const;

  Linear fc1, fc2;
};

/// Y = (X + P) + MHSA(Norm(X + P)); out = Y + MLP(Norm(Y))
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(const AttentionConfig& cfg, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, const Tensor& pos, KeyMask mask = {}) const;
  void collect(ParameterList& out, const std::string& prefix, ParamGroup group) const;
  /// Zeroes the attention and MLP output projections, making the layer an
  /// identity on X + P.
  void zero_output_projections();

  LayerNorm norm1;
  MultiHeadAttention attn;
  LayerNorm norm2;
  Mlp mlp;
};

/// Y = X_DI + MHA(Norm(X_DI), X_EO); out = Y + MLP(Norm(Y)). No self-attention
/// and no positional encoding.
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(const AttentionConfig& cfg, std::mt19937_64& rng);

  Tensor forward(const Tensor& x_di, const Tensor& x_eo, KeyMask mask = {}) const;
  void collect(ParameterList& out, const std::string& prefix, ParamGroup group) const;
  void zero_output_projections();

  LayerNorm norm1;
  MultiHeadAttention attn;
  LayerNorm norm2;
  Mlp mlp;
};

/// 3x3 depthwise convolution, padding 1: C x H x W -> C x H x W.
class PositionalEncoding2d {
 public:
  PositionalEncoding2d() = default;
  PositionalEncoding2d(std::size_t channels, std::mt19937_64& rng);

  Tensor forward(const Tensor& feature) const;
  void collect(ParameterList& out, const std::string& prefix, ParamGroup group) const;

  Tensor weight;  // C x 1 x 3 x 3
  Tensor bias;    // C
};

/// Depthwise 1-D convolution along the token axis, kernel 3, padding 1:
/// Z x C -> Z x C.
class PositionalEncoding1d {
 public:
  PositionalEncoding1d() = default;
  PositionalEncoding1d(std::size_t channels, std::mt19937_64& rng);

  Tensor forward(const Tensor& tokens) const;
  void collect(ParameterList& out, const std::string& prefix, ParamGroup group) const;

  Tensor weight;  // C x 1 x 1 x 3
  Tensor bias;    // C
};

/// N x C tokens <-> C x H x W maps.
Tensor map_to_tokens(const Tensor& feature);
Tensor tokens_to_map(const Tensor& tokens, std::size_t height, std::size_t width);

}  // namespace dcnt::nn
