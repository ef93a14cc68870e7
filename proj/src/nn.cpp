#include "dcnt/nn.hpp"

#include <cmath>

#include "dcnt/errors.hpp"
#include "dcnt/ops.hpp"

namespace dcnt::nn {

namespace ops = dcnt::ad;

void AttentionConfig::validate() const {
  if (channels == 0 || heads == 0 || channels % heads != 0) {
    throw ConfigError("attention: channels " + std::to_string(channels) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (mlp_ratio == 0) throw ConfigError("attention: mlp_ratio must be positive");
}

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(Tensor::zeros({in, out}, true)), bias(Tensor::zeros({out}, true)) {
  ad::init_uniform(weight, std::sqrt(1.0 / static_cast<double>(in)), rng);
}

Tensor Linear::forward(const Tensor& x) const { return ops::add_bias(ops::matmul(x, weight), bias); }

void Linear::collect(ParameterList& out, const std::string& prefix, ParamGroup group) const {
  out.emplace_back(prefix + ".weight", weight, group);
  out.emplace_back(prefix + ".bias", bias, group);
}

void Linear::zero() {
  for (auto& v : weight.mutable_values()) v = 0.0;
  for (auto& v : bias.mutable_values()) v = 0.0;
}

LayerNorm::LayerNorm(std::size_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)), beta(Tensor::zeros({channels}, true)) {}

Tensor LayerNorm::forward(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }

void LayerNorm::collect(ParameterList& out, const std::string& prefix, ParamGroup group) const {
  out.emplace_back(prefix + ".gamma", gamma, group);
  out.emplace_back(prefix + ".beta", beta, group);
}

MultiHeadAttention::MultiHeadAttention(const AttentionConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg.validate();
  const std::size_t d = cfg.head_dim();
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Head head;
    head.query = Linear(cfg.channels, d, rng);
    head.key = Linear(cfg.channels, d, rng);
    head.value = Linear(cfg.channels, d, rng);
    heads.push_back(std::move(head));
  }
  output = Linear(cfg.heads * d, cfg.channels, rng);
}

Tensor MultiHeadAttention::attention(std::size_t h, const Tensor& x1, const Tensor& x2, KeyMask mask) const {
  if (x1.rank() != 2 || x2.rank() != 2 || x1.dim(1) != cfg_.channels || x2.dim(1) != cfg_.channels) {
    throw ContractError("attention: token shapes " + ad::shape_str(x1.shape()) + " and " +
                        ad::shape_str(x2.shape()) + " do not match channels " + std::to_string(cfg_.channels));
  }
  if (x1.dim(0) == 0 || x2.dim(0) == 0) throw ContractError("attention: empty token set");
  const Head& hp = heads.at(h);
  const Tensor q = hp.query.forward(x1);
  const Tensor k = hp.key.forward(x2);
  const Tensor scores = ops::scale(ops::matmul(q, ops::transpose(k)), 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim())));
  return mask.empty() ? ops::softmax(scores, 1) : ops::masked_softmax_rows(scores, mask);
}

Tensor MultiHeadAttention::head(std::size_t h, const Tensor& x1, const Tensor& x2, KeyMask mask) const {
  return ops::matmul(attention(h, x1, x2, mask), heads.at(h).value.forward(x2));
}

Tensor MultiHeadAttention::forward(const Tensor& x1, const Tensor& x2, KeyMask mask) const {
  std::vector<Tensor> outs;
  outs.reserve(heads.size());
  for (std::size_t h = 0; h < heads.size(); ++h) outs.push_back(head(h, x1, x2, mask));
  const Tensor joined = outs.size() == 1 ? outs.front() : ops::concat(outs, 1);
  return output.forward(joined);
}

void MultiHeadAttention::collect(ParameterList& out, const std::string& prefix, ParamGroup group) const {
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const std::string p = prefix + ".head" + std::to_string(h);
    heads[h].query.collect(out, p + ".query", group);
    heads[h].key.collect(out, p + ".key", group);
    heads[h].value.collect(out, p + ".value", group);
  }
  output.collect(out, prefix + ".output", group);
}

Tensor self_attention(const MultiHeadAttention& attn, std::size_t head, const Tensor& x) {
  return attn.head(head, x, x);
}

Tensor mhsa(const MultiHeadAttention& attn, const Tensor& x, KeyMask mask) { return attn.forward(x, x, mask); }

Tensor mha(const MultiHeadAttention& attn, const Tensor& x1, const Tensor& x2, KeyMask mask) {
  return attn.forward(x1, x2, mask);
}

Mlp::Mlp(const AttentionConfig& cfg, std::mt19937_64& rng)
    : fc1(cfg.channels, cfg.channels * cfg.mlp_ratio, rng), fc2(cfg.channels * cfg.mlp_ratio, cfg.channels, rng) {}

Tensor Mlp::forward(const Tensor& x) const { return fc2.forward(ops::relu(fc1.forward(x))); }

void Mlp::collect(ParameterList& out, const std::string& prefix, ParamGroup group) const {
  fc1.collect(out, prefix + ".fc1", group);
  fc2.collect(out, prefix + ".fc2", group);
}

EncoderLayer::EncoderLayer(const AttentionConfig& cfg, std::mt19937_64& rng)
    : norm1(cfg.channels), attn(cfg, rng), norm2(cfg.channels), mlp(cfg, rng) {}

Tensor EncoderLayer::forward(const Tensor& x, const Tensor& pos, KeyMask mask) const {
  const Tensor base = ops::add(x, pos);
  const Tensor normed = norm1.forward(base);
  const Tensor y = ops::add(base, mhsa(attn, normed, mask));
  return ops::add(y, mlp.forward(norm2.forward(y)));
}

void EncoderLayer::collect(ParameterList& out, const std::string& prefix, ParamGroup group) const {
  norm1.collect(out, prefix + ".norm1", group);
  attn.collect(out, prefix + ".attn", group);
  norm2.collect(out, prefix + ".norm2", group);
  mlp.collect(out, prefix + ".mlp", group);
}

void EncoderLayer::zero_output_projections() {
  attn.output.zero();
  mlp.fc2.zero();
}

DecoderLayer::DecoderLayer(const AttentionConfig& cfg, std::mt19937_64& rng)
    : norm1(cfg.channels), attn(cfg, rng), norm2(cfg.channels), mlp(cfg, rng) {}

Tensor DecoderLayer::forward(const Tensor& x_di, const Tensor& x_eo, KeyMask mask) const {
  const Tensor y = ops::add(x_di, mha(attn, norm1.forward(x_di), x_eo, mask));
  return ops::add(y, mlp.forward(norm2.forward(y)));
}

void DecoderLayer::collect(ParameterList& out, const std::string& prefix, ParamGroup group) const {
  norm1.collect(out, prefix + ".norm1", group);
  attn.collect(out, prefix + ".attn", group);
  norm2.collect(out, prefix + ".norm2", group);
  mlp.collect(out, prefix + ".mlp", group);
}

void DecoderLayer::zero_output_projections() {
  attn.output.zero();
  mlp.fc2.zero();
}

PositionalEncoding2d::PositionalEncoding2d(std::size_t channels, std::mt19937_64& rng)
    : weight(Tensor::zeros({channels, 1, 3, 3}, true)), bias(Tensor::zeros({channels}, true)) {
  ad::init_uniform(weight, std::sqrt(1.0 / 9.0), rng);
}

Tensor PositionalEncoding2d::forward(const Tensor& feature) const {
  return ops::depthwise_conv2d(feature, weight, bias, 1, 1);
}

void PositionalEncoding2d::collect(ParameterList& out, const std::string& prefix, ParamGroup group) const {
  out.emplace_back(prefix + ".weight", weight, group);
  out.emplace_back(prefix + ".bias", bias, group);
}

PositionalEncoding1d::PositionalEncoding1d(std::size_t channels, std::mt19937_64& rng)
    : weight(Tensor::zeros({channels, 1, 1, 3}, true)), bias(Tensor::zeros({channels}, true)) {
  ad::init_uniform(weight, std::sqrt(1.0 / 3.0), rng);
}

Tensor PositionalEncoding1d::forward(const Tensor& tokens) const {
  if (tokens.rank() != 2) throw ContractError("positional_encoding_1d: expected Z x C tokens");
  const std::size_t z = tokens.dim(0), c = tokens.dim(1);
  const Tensor as_map = ops::reshape(ops::transpose(tokens), {c, 1, z});
  const Tensor conv = ops::depthwise_conv2d(as_map, weight, bias, 0, 1);
  return ops::transpose(ops::reshape(conv, {c, z}));
}

void PositionalEncoding1d::collect(ParameterList& out, const std::string& prefix, ParamGroup group) const {
  out.emplace_back(prefix + ".weight", weight, group);
  out.emplace_back(prefix + ".bias", bias, group);
}

Tensor map_to_tokens(const Tensor& feature) {
  if (feature.rank() != 3) throw ContractError("map_to_tokens: expected C x H x W");
  return ops::transpose(ops::reshape(feature, {feature.dim(0), feature.dim(1) * feature.dim(2)}));
}

Tensor tokens_to_map(const Tensor& tokens, std::size_t height, std::size_t width) {
  if (tokens.rank() != 2 || tokens.dim(0) != height * width) {
    throw ContractError("tokens_to_map: token count does not match " + std::to_string(height) + "x" +
                        std::to_string(width));
  }
  return ops::reshape(ops::transpose(tokens), {tokens.dim(1), height, width});
}

}  // namespace dcnt::nn
