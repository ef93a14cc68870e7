#include "dcnt/dcm.hpp"

#include "dcnt/errors.hpp"
#include "dcnt/ops.hpp"

namespace dcnt::dcm {

std::size_t DcmConfig::streams() const { return (use_f ? 1u : 0u) + ((use_rac || use_gac) ? 1u : 0u); }

void DcmConfig::validate() const {
  attention().validate();
  if (areas < 4) throw ConfigError("dcm.Z must be >= 4");
  if (iterations < 1) throw ConfigError("dcm.T must be >= 1");
  if (streams() == 0) throw ConfigError("dcm: at least one of use_F, use_RAC, use_GAC must be enabled");
}

namespace {

std::vector<std::vector<std::size_t>> members_by_area(const cluster::AreaAssignment& areas) {
  std::vector<std::vector<std::size_t>> members(areas.layout.areas);
  for (std::size_t j = 0; j < areas.hard_labels.size(); ++j)
    members[static_cast<std::size_t>(areas.hard_labels[j])].push_back(j);
  return members;
}

}  // namespace

Tensor rac_encode(const Tensor& feature, const Tensor& pos, const cluster::AreaAssignment& areas,
                  const nn::EncoderLayer& encoder) {
  const std::size_t h = feature.dim(1), w = feature.dim(2);
  if (areas.hard_labels.size() != h * w) throw ContractError("rac_encode: areas do not cover the feature map");
  const Tensor x = nn::map_to_tokens(feature);
  const Tensor p = nn::map_to_tokens(pos);
  std::vector<Tensor> parts;
  std::vector<std::size_t> slot_of_pixel(h * w);
  std::size_t offset = 0;
  for (const auto& idx : members_by_area(areas)) {
    if (idx.empty()) continue;
    parts.push_back(encoder.forward(ad::gather_rows(x, idx), ad::gather_rows(p, idx)));
    for (std::size_t k = 0; k < idx.size(); ++k) slot_of_pixel[idx[k]] = offset + k;
    offset += idx.size();
  }
  const Tensor stacked = parts.size() == 1 ? parts.front() : ad::concat(parts, 0);
  return nn::tokens_to_map(ad::gather_rows(stacked, slot_of_pixel), h, w);
}

Tensor rac_encode_batched(const Tensor& feature, const Tensor& pos, const cluster::AreaAssignment& areas,
                          const nn::EncoderLayer& encoder) {
  const std::size_t h = feature.dim(1), w = feature.dim(2), n = h * w;
  std::vector<std::uint8_t> same_area(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) same_area[i * n + j] = areas.hard_labels[i] == areas.hard_labels[j];
  const Tensor y = encoder.forward(nn::map_to_tokens(feature), nn::map_to_tokens(pos), same_area);
  return nn::tokens_to_map(y, h, w);
}

DescriptorSet build_descriptors(const Tensor& regional, const cluster::AreaAssignment& areas) {
  DescriptorSet out;
  out.descriptors = ad::scatter_mean(nn::map_to_tokens(regional), areas.hard_labels, areas.layout.areas);
  out.active.resize(areas.layout.areas);
  for (std::size_t i = 0; i < out.active.size(); ++i) out.active[i] = areas.counts[i] > 0 ? 1 : 0;
  return out;
}

Tensor gac_encode(const DescriptorSet& descriptors, const nn::PositionalEncoding1d& pos,
                  const nn::EncoderLayer& encoder) {
  const Tensor& v = descriptors.descriptors;
  return encoder.forward(v, pos.forward(v), descriptors.active);
}

Tensor gac_decode(const Tensor& regional, const Tensor& encoded, std::span<const std::uint8_t> active,
                  const nn::DecoderLayer& decoder) {
  const Tensor y = decoder.forward(nn::map_to_tokens(regional), encoded, active);
  return nn::tokens_to_map(y, regional.dim(1), regional.dim(2));
}

DualContextModule::DualContextModule(const DcmConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg.validate();
  const auto att = cfg.attention();
  rac_pos = nn::PositionalEncoding2d(cfg.channels, rng);
  rac_encoder = nn::EncoderLayer(att, rng);
  gac_pos = nn::PositionalEncoding1d(cfg.channels, rng);
  gac_encoder = nn::EncoderLayer(att, rng);
  gac_decoder = nn::DecoderLayer(att, rng);
}

DualContextModule::Output DualContextModule::forward(const Tensor& feature) const {
  if (feature.rank() != 3 || feature.dim(0) != cfg_.channels) {
    throw ContractError("dcm: expected " + std::to_string(cfg_.channels) + " x H1 x W1 input, got " +
                        ad::shape_str(feature.shape()));
  }
  Output out;
  out.areas = cluster::run_clustering(feature, cfg_.areas, cfg_.iterations);
  Tensor context;
  out.regional = feature;
  if (cfg_.use_rac) {
    out.positional = rac_pos.forward(feature);
    out.regional = rac_encode(feature, out.positional, out.areas, rac_encoder);
    context = out.regional;
  }
  if (cfg_.use_gac) {
    out.descriptors = build_descriptors(out.regional, out.areas);
    const Tensor encoded = gac_encode(out.descriptors, gac_pos, gac_encoder);
    out.global = gac_decode(out.regional, encoded, out.descriptors.active, gac_decoder);
    context = out.global;
  }
  std::vector<Tensor> streams;
  if (cfg_.use_f) streams.push_back(feature);
  if (context.defined()) streams.push_back(context);
  out.features = streams.size() == 1 ? streams.front() : ad::concat(streams, 0);
  return out;
}

void DualContextModule::collect(ad::ParameterList& out, const std::string& prefix, ad::ParamGroup group) const {
  if (cfg_.use_rac) {
    rac_pos.collect(out, prefix + ".rac_pos", group);
    rac_encoder.collect(out, prefix + ".rac", group);
  }
  if (cfg_.use_gac) {
    gac_pos.collect(out, prefix + ".gac_pos", group);
    gac_encoder.collect(out, prefix + ".gac_enc", group);
    gac_decoder.collect(out, prefix + ".gac_dec", group);
  }
}

void DualContextModule::zero_output_projections() {
  rac_encoder.zero_output_projections();
  gac_encoder.zero_output_projections();
  gac_decoder.zero_output_projections();
}

}  // namespace dcnt::dcm
