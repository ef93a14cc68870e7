#include "dcnt/model.hpp"

#include <cmath>

#include "dcnt/errors.hpp"
#include "dcnt/ops.hpp"

namespace dcnt::model {

BackboneConfig BackboneConfig::full_scale() {
  BackboneConfig cfg;
  cfg.widths = {64, 128, 256, 512};
  return cfg;
}

void ModelConfig::validate() const {
  for (auto w : backbone.widths)
    if (w == 0) throw ConfigError("backbone.widths must be positive");
  for (auto c : backbone.convs)
    if (c == 0) throw ConfigError("every backbone stage needs at least one convolution");
  for (auto s : backbone.std)
    if (!(s > 0)) throw ConfigError("backbone.std must be positive");
  if (classes < 2) throw ConfigError("model needs at least 2 classes, got " + std::to_string(classes));
  dcm.validate();
}

Conv3x3::Conv3x3(std::size_t in, std::size_t out, double bound, std::mt19937_64& rng)
    : weight(Tensor::zeros({out, in, 3, 3}, true)), bias(Tensor::zeros({out}, true)) {
  ad::init_uniform(weight, bound, rng);
}

Tensor Conv3x3::forward(const Tensor& x) const { return ad::conv2d(x, weight, bias, {1, 1, 1, 1}); }

void Conv3x3::collect(ad::ParameterList& out, const std::string& prefix, ad::ParamGroup group) const {
  out.emplace_back(prefix + ".weight", weight, group);
  out.emplace_back(prefix + ".bias", bias, group);
}

namespace {

// Uniform bounds over fan-in = 9 * in: relu-fed layers use the He range.
double relu_bound(std::size_t in) { return std::sqrt(6.0 / (9.0 * static_cast<double>(in))); }
double linear_bound(std::size_t in) { return std::sqrt(1.0 / (9.0 * static_cast<double>(in))); }

std::size_t reflect(std::size_t i, std::size_t n) { return i < n ? i : 2 * (n - 1) - i; }

}  // namespace

DcntModel::DcntModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::size_t in = 3;
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<Conv3x3> stage;
    for (std::size_t k = 0; k < cfg.backbone.convs[s]; ++k) {
      stage.emplace_back(in, cfg.backbone.widths[s], relu_bound(in), rng);
      in = cfg.backbone.widths[s];
    }
    stages_.push_back(std::move(stage));
  }
  const std::size_t c = cfg.dcm.channels;
  reduce_ = Conv3x3(cfg.backbone.widths[3], c, relu_bound(cfg.backbone.widths[3]), rng);
  dcm_ = dcm::DualContextModule(cfg.dcm, rng);
  head_ = Conv3x3(cfg.dcm.output_channels(), cfg.classes, linear_bound(cfg.dcm.output_channels()), rng);
  aux_head_ = Conv3x3(cfg.backbone.widths[2], cfg.classes, linear_bound(cfg.backbone.widths[2]), rng);

  for (std::size_t s = 0; s < stages_.size(); ++s)
    for (std::size_t k = 0; k < stages_[s].size(); ++k)
      stages_[s][k].collect(params_, "backbone.stage" + std::to_string(s + 1) + ".conv" + std::to_string(k + 1),
                            ad::ParamGroup::backbone);
  reduce_.collect(params_, "reduce", ad::ParamGroup::head);
  dcm_.collect(params_, "dcm", ad::ParamGroup::head);
  head_.collect(params_, "head", ad::ParamGroup::head);
  aux_head_.collect(params_, "aux", ad::ParamGroup::head);
}

Tensor DcntModel::prepare_input(const RgbImage& image) const {
  if (image.height < 8 || image.width < 8) {
    throw ContractError("model input must be at least 8x8, got " + std::to_string(image.height) + "x" +
                        std::to_string(image.width));
  }
  const std::size_t h = image.height, w = image.width;
  const std::size_t ph = (h + kOutputStride - 1) / kOutputStride * kOutputStride;
  const std::size_t pw = (w + kOutputStride - 1) / kOutputStride * kOutputStride;
  std::vector<double> v(3 * ph * pw);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const double mu = cfg_.backbone.mean[ch], sd = cfg_.backbone.std[ch];
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t x = 0; x < pw; ++x)
        v[(ch * ph + y) * pw + x] = (image.at(ch, reflect(y, h), reflect(x, w)) / 255.0 - mu) / sd;
  }
  return Tensor::from({3, ph, pw}, std::move(v));
}

DcntModel::BackboneOutput DcntModel::backbone_forward(const Tensor& input) const {
  if (input.rank() != 3 || input.dim(0) != 3 || input.dim(1) % kOutputStride || input.dim(2) % kOutputStride ||
      input.dim(1) < 8 || input.dim(2) < 8) {
    throw ContractError("backbone: expected 3 x H x W with H, W >= 8 and divisible by 4, got " +
                        ad::shape_str(input.shape()));
  }
  BackboneOutput out;
  Tensor x = input;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (const auto& conv : stages_[s]) x = ad::relu(conv.forward(x));
    if (s < 2) x = ad::maxpool2d(x, 2);
    if (s == 2) out.stage3 = x;
  }
  out.stage4 = x;
  return out;
}

DcntModel::Output DcntModel::forward(const Tensor& input, std::size_t out_height, std::size_t out_width) const {
  const BackboneOutput bb = backbone_forward(input);
  Output out;
  out.feature = ad::relu(reduce_.forward(bb.stage4));
  out.dcm = dcm_.forward(out.feature);
  out.main_logits =
      ad::crop2d(ad::bilinear_upsample(head_.forward(out.dcm.features), kOutputStride), out_height, out_width);
  out.aux_logits = ad::crop2d(ad::bilinear_upsample(aux_head_.forward(bb.stage3), kOutputStride), out_height, out_width);
  return out;
}

DcntModel::Output DcntModel::forward(const RgbImage& image) const {
  return forward(prepare_input(image), image.height, image.width);
}

Tensor composite_loss(const Tensor& main_logits, const Tensor& aux_logits, const LabelMap& labels) {
  if (labels.labeled_count() == 0) throw ContractError("loss: label map has no labeled pixel");
  const Tensor main = ad::softmax_cross_entropy(main_logits, labels.labels);
  const Tensor aux = ad::softmax_cross_entropy(aux_logits, labels.labels);
  return ad::add(main, ad::scale(aux, kAuxLossWeight));
}

}  // namespace dcnt::model
