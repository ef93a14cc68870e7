#pragma once

// Dual context module: regional adaptive context (one shared encoder applied
// inside every homogeneous area), area descriptors, global aggregation context
// (encoder over descriptors, decoder back onto pixels) and the final channel
// concatenation.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dcnt/cluster.hpp"
#include "dcnt/nn.hpp"

namespace dcnt::dcm {

using ad::Tensor;

struct DcmConfig {
  std::size_t channels = 32;
  std::size_t areas = 16;
  std::size_t iterations = 5;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
  bool use_f = true;    // emit the input feature
  bool use_rac = true;  // run the regional encoder
  bool use_gac = true;  // run the global encoder/decoder

  nn::AttentionConfig attention() const { return {channels, heads, mlp_ratio, nn::Activation::relu}; }
  /// Number of concatenated streams: F (if use_f) plus the last context stream.
  std::size_t streams() const;
  std::size_t output_channels() const { return streams() * channels; }
  void validate() const;
};

struct DescriptorSet {
  Tensor descriptors;                // Z x C
  std::vector<std::uint8_t> active;  // area non-empty
};

/// feature: C x H1 x W1; pos: its 2-D positional encoding. Returns C x H1 x W1.
Tensor rac_encode(const Tensor& feature, const Tensor& pos, const cluster::AreaAssignment& areas,
                  const nn::EncoderLayer& encoder);
/// Same result through a single masked attention pass over all pixels.
Tensor rac_encode_batched(const Tensor& feature, const Tensor& pos, const cluster::AreaAssignment& areas,
                          const nn::EncoderLayer& encoder);

DescriptorSet build_descriptors(const Tensor& regional, const cluster::AreaAssignment& areas);

/// Z x C -> Z x C; inactive descriptors are masked out as attention keys.
Tensor gac_encode(const DescriptorSet& descriptors, const nn::PositionalEncoding1d& pos,
                  const nn::EncoderLayer& encoder);

/// Every pixel of `regional` queries the encoded descriptors. Returns C x H1 x W1.
Tensor gac_decode(const Tensor& regional, const Tensor& encoded, std::span<const std::uint8_t> active,
                  const nn::DecoderLayer& decoder);

class DualContextModule {
 public:
  struct Output {
    Tensor features;  // streams * C x H1 x W1
    cluster::AreaAssignment areas;
    Tensor positional;  // P^RAC
    Tensor regional;
    DescriptorSet descriptors;
    Tensor global;
  };

  DualContextModule() = default;
  DualContextModule(const DcmConfig& cfg, std::mt19937_64& rng);

  Output forward(const Tensor& feature) const;
  void collect(ad::ParameterList& out, const std::string& prefix, ad::ParamGroup group) const;
  /// Zeroes every attention and MLP output projection.
  void zero_output_projections();
  const DcmConfig& config() const { return cfg_; }

  nn::PositionalEncoding2d rac_pos;
  nn::EncoderLayer rac_encoder;
  nn::PositionalEncoding1d gac_pos;
  nn::EncoderLayer gac_encoder;
  nn::DecoderLayer gac_decoder;

 private:
  DcmConfig cfg_;
};

}  // namespace dcnt::dcm
