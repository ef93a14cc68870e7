#include "dcnt/grad_suite.hpp"

#include <functional>
#include <random>

#include "dcnt/cluster.hpp"
#include "dcnt/dcm.hpp"
#include "dcnt/model.hpp"
#include "dcnt/nn.hpp"
#include "dcnt/ops.hpp"

namespace dcnt::ad {

namespace {

class Suite {
 public:
  Suite(std::uint64_t seed, double eps) : rng_(seed), eps_(eps) {}

  Tensor input(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = u(rng_);
    return Tensor::from(std::move(shape), std::move(v), true);
  }

  // Scalarizes body() with a fixed random weighting so every output
  // component contributes a distinct gradient.
  void check(const std::string& block, const std::function<Tensor()>& body, std::vector<Tensor> inputs,
             std::size_t max_components = 0) {
    Tensor probe;
    {
      NoGradGuard guard;
      probe = body();
    }
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> w(probe.numel());
    for (auto& x : w) x = n(rng_);
    const Tensor weight = Tensor::from(probe.shape(), std::move(w));
    GradCheckOptions opt;
    opt.eps = eps_;
    opt.max_components = max_components;
    opt.seed = rng_();
    auto report = grad_check([&] { return sum(mul(body(), weight)); }, std::move(inputs), opt);
    merge(block, report);
  }

  std::vector<BlockCheck> results;
  std::mt19937_64 rng_;

 private:
  void merge(const std::string& block, const GradCheckReport& r) {
    for (auto& b : results) {
      if (b.block != block) continue;
      b.report.max_rel_error = std::max(b.report.max_rel_error, r.max_rel_error);
      b.report.checked += r.checked;
      b.report.excluded += r.excluded;
      if (b.report.nonfinite_op.empty()) b.report.nonfinite_op = r.nonfinite_op;
      return;
    }
    results.push_back({block, r});
  }

  double eps_;
};

std::vector<Tensor> tensors_of(const ParameterList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor());
  return out;
}

void primitives(Suite& s) {
  const std::string b = "primitives";
  {
    auto x = s.input({3, 4}), y = s.input({3, 4});
    s.check(b, [=] { return add(x, y); }, {x, y});
    s.check(b, [=] { return sub(x, y); }, {x, y});
    s.check(b, [=] { return mul(x, y); }, {x, y});
    s.check(b, [=] { return scale(x, -2.5); }, {x});
    s.check(b, [=] { return transpose(x); }, {x});
    s.check(b, [=] { return reshape(x, {2, 6}); }, {x});
    s.check(b, [=] { return relu(x); }, {x});
    s.check(b, [=] { return sum(x); }, {x});
    s.check(b, [=] { return mean(x); }, {x});
    s.check(b, [=] { return concat({x, y}, 0); }, {x, y});
    s.check(b, [=] { return concat({x, y}, 1); }, {x, y});
    s.check(b, [=] { return softmax(x, 0); }, {x});
    s.check(b, [=] { return softmax(x, 1); }, {x});
  }
  {
    auto x = s.input({3, 4}), bias = s.input({4});
    s.check(b, [=] { return add_bias(x, bias); }, {x, bias});
    auto w = s.input({4, 5});
    s.check(b, [=] { return matmul(x, w); }, {x, w});
    auto gamma = s.input({4}, 0.5, 1.5), beta = s.input({4});
    s.check(b, [=] { return layer_norm(x, gamma, beta); }, {x, gamma, beta});
    static const std::vector<std::size_t> idx{0, 5, 7, 11};
    s.check(b, [=] { return mean_over_index_set(x, idx); }, {x});
    static const std::vector<std::size_t> rows{2, 0, 2};
    s.check(b, [=] { return gather_rows(x, rows); }, {x});
    static const std::vector<std::int32_t> sets{1, 0, 1};
    s.check(b, [=] { return scatter_mean(x, sets, 3); }, {x});
    static const std::vector<std::uint8_t> key_mask{1, 0, 1, 1};
    s.check(b, [=] { return masked_softmax_rows(x, key_mask); }, {x});
    static const std::vector<std::uint8_t> pair_mask{1, 0, 1, 1, 0, 1, 1, 0, 0, 0, 1, 1};
    s.check(b, [=] { return masked_softmax_rows(x, pair_mask); }, {x});
  }
  {
    auto x = s.input({4, 6, 6}), w = s.input({6, 4, 3, 3}), bias = s.input({6});
    s.check(b, [=] { return conv2d(x, w, bias, {1, 1, 1, 1}); }, {x, w, bias});
    s.check(b, [=] { return conv2d(x, w, bias, {2, 1, 0, 1}); }, {x, w, bias});
    auto wg = s.input({6, 2, 3, 1});
    s.check(b, [=] { return conv2d(x, wg, Tensor{}, {1, 1, 0, 2}); }, {x, wg});
    auto wd = s.input({4, 1, 3, 3}), bd = s.input({4});
    s.check(b, [=] { return depthwise_conv2d(x, wd, bd, 1, 1); }, {x, wd, bd});
    auto w13 = s.input({4, 1, 1, 3});
    s.check(b, [=] { return depthwise_conv2d(x, w13, bd, 0, 1); }, {x, w13, bd});
    s.check(b, [=] { return maxpool2d(x, 2); }, {x});
    s.check(b, [=] { return bilinear_upsample(x, 4); }, {x});
    s.check(b, [=] { return crop2d(x, 5, 3); }, {x});
  }
  {
    auto logits = s.input({3, 4, 4}, -2.0, 2.0);
    static const std::vector<std::uint16_t> labels{1, 0, 2, 3, 0, 0, 1, 1, 3, 2, 0, 2, 1, 3, 0, 2};
    s.check(b, [=] { return softmax_cross_entropy(logits, labels); }, {logits});
  }
}

void layers(Suite& s) {
  const nn::AttentionConfig cfg{8, 2, 2, nn::Activation::relu};
  {
    nn::Linear lin(8, 5, s.rng_);
    auto x = s.input({6, 8});
    ParameterList p;
    lin.collect(p, "lin", ParamGroup::head);
    auto in = tensors_of(p);
    in.push_back(x);
    s.check("linear", [&, x] { return lin.forward(x); }, in);
  }
  {
    nn::MultiHeadAttention attn(cfg, s.rng_);
    auto x1 = s.input({5, 8}), x2 = s.input({7, 8});
    ParameterList p;
    attn.collect(p, "attn", ParamGroup::head);
    auto in = tensors_of(p);
    in.push_back(x1);
    in.push_back(x2);
    s.check("mhsa", [&, x1] { return nn::mhsa(attn, x1); }, in);
    static const std::vector<std::uint8_t> mask{1, 1, 0, 1, 0, 1, 1};
    s.check("mha", [&, x1, x2] { return nn::mha(attn, x1, x2, mask); }, in);
  }
  {
    nn::EncoderLayer enc(cfg, s.rng_);
    auto x = s.input({6, 8}), pos = s.input({6, 8});
    ParameterList p;
    enc.collect(p, "enc", ParamGroup::head);
    auto in = tensors_of(p);
    in.push_back(x);
    in.push_back(pos);
    s.check("encoder_layer", [&, x, pos] { return enc.forward(x, pos); }, in);
  }
  {
    nn::DecoderLayer dec(cfg, s.rng_);
    auto xd = s.input({6, 8}), xe = s.input({4, 8});
    ParameterList p;
    dec.collect(p, "dec", ParamGroup::head);
    auto in = tensors_of(p);
    in.push_back(xd);
    in.push_back(xe);
    s.check("decoder_layer", [&, xd, xe] { return dec.forward(xd, xe); }, in);
  }
  {
    nn::PositionalEncoding2d pe2(4, s.rng_);
    nn::PositionalEncoding1d pe1(4, s.rng_);
    auto f = s.input({4, 5, 5}), t = s.input({6, 4});
    ParameterList p2, p1;
    pe2.collect(p2, "pe2", ParamGroup::head);
    pe1.collect(p1, "pe1", ParamGroup::head);
    auto in2 = tensors_of(p2);
    in2.push_back(f);
    auto in1 = tensors_of(p1);
    in1.push_back(t);
    s.check("positional", [&, f] { return pe2.forward(f); }, in2);
    s.check("positional", [&, t] { return pe1.forward(t); }, in1);
  }
}

void clustering(Suite& s) {
  auto f = s.input({4, 6, 6}, 0.0, 1.0);
  s.check("soft_clustering_T2", [=] {
    auto a = cluster::run_clustering(f, 4, 2);
    return concat({reshape(a.centers, {a.centers.numel()}), reshape(a.affinity, {a.affinity.numel()})}, 0);
  }, {f});
}

void dcm_block(Suite& s) {
  dcm::DcmConfig cfg;
  cfg.channels = 4;
  cfg.areas = 4;
  cfg.iterations = 2;
  cfg.heads = 2;
  dcm::DualContextModule block(cfg, s.rng_);
  auto f = s.input({4, 8, 8}, 0.0, 1.0);
  ParameterList p;
  block.collect(p, "dcm", ParamGroup::head);
  auto in = tensors_of(p);
  in.push_back(f);
  s.check("dcm", [&, f] { return block.forward(f).features; }, in);
}

void toy_model(Suite& s) {
  model::ModelConfig cfg;
  cfg.backbone.widths = {4, 4, 4, 4};
  cfg.backbone.convs = {1, 1, 1, 1};
  cfg.dcm.channels = 4;
  cfg.dcm.areas = 4;
  cfg.dcm.iterations = 2;
  cfg.dcm.heads = 2;
  cfg.classes = 3;
  cfg.seed = s.rng_();
  model::DcntModel net(cfg);
  RgbImage img{12, 12, std::vector<std::uint8_t>(3 * 144)};
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(byte(s.rng_));
  LabelMap labels{12, 12, std::vector<std::uint16_t>(144)};
  std::uniform_int_distribution<int> cls(0, 3);
  for (auto& v : labels.labels) v = static_cast<std::uint16_t>(cls(s.rng_));
  const Tensor x = net.prepare_input(img);
  s.check("toy_model_loss", [&] {
    const auto out = net.forward(x, 12, 12);
    return model::composite_loss(out.main_logits, out.aux_logits, labels);
  }, tensors_of(net.parameters()), 300);
}

}  // namespace

std::vector<BlockCheck> run_grad_suite(std::uint64_t seed, double eps) {
  Suite s(seed, eps);
  primitives(s);
  layers(s);
  clustering(s);
  dcm_block(s);
  toy_model(s);
  return std::move(s.results);
}

}  // namespace dcnt::ad
