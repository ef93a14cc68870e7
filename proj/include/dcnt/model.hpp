#pragma once

// The full segmentation network: a truncated VGG-style backbone at output
// stride 4, a 3x3 reduction convolution to C channels, the dual context
// module, a 3x3 classifier with x4 bilinear upsampling, and an auxiliary
// classifier on the stage-3 feature.

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "dcnt/data_io.hpp"
#include "dcnt/dcm.hpp"
#include "dcnt/optim.hpp"

namespace dcnt::model {

using ad::Tensor;

inline constexpr double kAuxLossWeight = 0.4;
inline constexpr std::size_t kOutputStride = 4;

struct BackboneConfig {
  std::array<std::size_t, 4> widths{16, 32, 64, 64};
  std::array<std::size_t, 4> convs{2, 2, 3, 3};
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.25, 0.25, 0.25};

  /// VGG-16 widths, for checkpoints converted from pretrained weights.
  static BackboneConfig full_scale();
};

struct ModelConfig {
  BackboneConfig backbone;
  dcm::DcmConfig dcm;
  std::size_t classes = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

class Conv3x3 {
 public:
  Conv3x3() = default;
  Conv3x3(std::size_t in, std::size_t out, double bound, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  void collect(ad::ParameterList& out, const std::string& prefix, ad::ParamGroup group) const;

  Tensor weight;  // out x in x 3 x 3
  Tensor bias;
};

class DcntModel {
 public:
  struct BackboneOutput {
    Tensor stage3;  // widths[2] x H/4 x W/4
    Tensor stage4;  // widths[3] x H/4 x W/4
  };

  struct Output {
    Tensor main_logits;  // classes x H x W
    Tensor aux_logits;   // classes x H x W
    Tensor feature;      // F, C x H/4 x W/4
    dcm::DualContextModule::Output dcm;
  };

  explicit DcntModel(const ModelConfig& cfg);
  DcntModel(const DcntModel&) = delete;
  DcntModel& operator=(const DcntModel&) = delete;
  DcntModel(DcntModel&&) = default;
  DcntModel& operator=(DcntModel&&) = default;

  /// Scales 8-bit values to [0,1], standardizes per channel and reflect-pads
  /// the bottom/right edges up to a multiple of 4.
  Tensor prepare_input(const RgbImage& image) const;

  BackboneOutput backbone_forward(const Tensor& input) const;
  /// Logits cropped to out_height x out_width.
  Output forward(const Tensor& input, std::size_t out_height, std::size_t out_width) const;
  Output forward(const RgbImage& image) const;

  ad::ParameterList& parameters() { return params_; }
  const ad::ParameterList& parameters() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  dcm::DualContextModule& dcm() { return dcm_; }

 private:
  ModelConfig cfg_;
  std::vector<std::vector<Conv3x3>> stages_;
  Conv3x3 reduce_;
  dcm::DualContextModule dcm_;
  Conv3x3 head_;
  Conv3x3 aux_head_;
  ad::ParameterList params_;
};

/// Masked softmax cross entropy of both heads: main + 0.4 * aux.
Tensor composite_loss(const Tensor& main_logits, const Tensor& aux_logits, const LabelMap& labels);

}  // namespace dcnt::model
