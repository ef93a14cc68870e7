// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

#include "dcnt/cli.hpp"
#include "dcnt/cluster.hpp"
#include "dcnt/dcm.hpp"
#include "dcnt/grad_suite.hpp"
#include "dcnt/model.hpp"
#include "dcnt/pipeline.hpp"
#include "dcnt/synth.hpp"
#include "dcnt/trispec.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace dcnt;
using ad::Tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

Outcome fail(std::string why) { return {false, std::move(why)}; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome capacity_table() {
  const std::vector<std::pair<std::uint32_t, std::uint64_t>> table{
      {3, 1}, {5, 10}, {6, 20}, {9, 84}, {10, 120}, {15, 455}, {18, 816}};
  for (auto [g, m] : table) {
    if (trispec::compute_capacity(g) != m) return fail("G=" + std::to_string(g));
    if (trispec::enumerate_triplets(g).size() != m) return fail("triplets for G=" + std::to_string(g));
  }
  return {true, "7 values exact"};
}

Outcome stretch_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 24), kind(0, 3);
  std::normal_distribution<double> n(0.0, 3.0);
  std::uniform_int_distribution<int> small(0, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto h = static_cast<std::uint32_t>(dim(rng)), w = static_cast<std::uint32_t>(dim(rng));
    std::vector<double> v(3ull * h * w);
    const int k = kind(rng);
    for (auto& x : v) x = k == 0 ? n(rng) : k == 1 ? small(rng) : k == 2 ? std::exp(n(rng)) : 1.5;
    const auto s = trispec::linear_stretch(trispec::RawImage{h, w, v});
    const auto o = oracle::stretch(v);
    if (s.image.data != o.bytes) return fail("bytes differ on trial " + std::to_string(trial));
    if (s.degenerate != o.degenerate) return fail("degenerate flag on trial " + std::to_string(trial));
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    for (std::size_t i = 1; i < order.size(); ++i)
      if (s.image.data[order[i - 1]] > s.image.data[order[i]]) return fail("not monotone on trial " + std::to_string(trial));
    if (!s.degenerate) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] <= o.p && s.image.data[i] != 0) return fail("below low not 0");
        if (v[i] >= o.q && s.image.data[i] != 255) return fail("above high not 255");
      }
    }
  }
  return {true, "200 images bit-exact"};
}

Outcome gradient_suite() {
  double worst = 0.0;
  for (const auto& b : ad::run_grad_suite(5)) {
    worst = std::max(worst, b.report.max_rel_error);
    if (!b.report.ok(ad::kGradTolerance)) return fail(b.block + " error " + std::to_string(b.report.max_rel_error));
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "max error %.2e", worst);
  return {true, buf};
}

Outcome clustering_oracle() {
  std::mt19937_64 rng(99);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto f = testing::random_tensor({4, 8, 8}, rng, -1.0, 1.0);
    const std::vector<double> flat(f.values().begin(), f.values().end());
    for (std::size_t t : {1, 3, 5}) {
      const auto got = cluster::run_clustering(f, 4, t);
      const auto want = oracle::cluster(flat, 4, 8, 8, 4, t);
      for (std::size_t p = 0; p < 64; ++p)
        if (got.hard_labels[p] != want.labels[p]) return fail("labels differ, trial " + std::to_string(trial));
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 4; ++c) worst = std::max(worst, std::abs(got.centers[i * 4 + c] - want.centers[i][c]));
    }
  }
  if (!(worst <= 1e-6)) return fail("center error " + std::to_string(worst));
  char buf[64];
  std::snprintf(buf, sizeof buf, "150 runs, center error %.1e", worst);
  return {true, buf};
}

Outcome structural_identity() {
  std::mt19937_64 rng(17);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    dcm::DcmConfig cfg;
    cfg.channels = 8;
    cfg.areas = 4;
    cfg.iterations = 3;
    cfg.heads = 2;
    dcm::DualContextModule m(cfg, rng);
    m.zero_output_projections();
    const auto f = testing::random_tensor({8, 8, 8}, rng, -1.0, 1.0);
    const auto out = m.forward(f);
    const auto p = m.rac_pos.forward(f);
    if (out.features.numel() != 2 * f.numel()) return fail("output shape " + ad::shape_str(out.features.shape()));
    for (std::size_t i = 0; i < f.numel(); ++i) {
      worst = std::max(worst, std::abs(out.features[i] - f[i]));
      worst = std::max(worst, std::abs(out.features[f.numel() + i] - (f[i] + p[i])));
    }
  }
  if (!(worst <= 1e-6)) return fail("error " + std::to_string(worst));
  return {true, "5 random inputs"};
}

Outcome voting_equivalence() {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::uint32_t> kd(1, 4), md(1, 6);
  for (int draw = 0; draw < 500; ++draw) {
    const auto k = kd(rng), m = md(rng);
    std::uniform_int_distribution<std::uint32_t> cls(0, k - 1);
    std::vector<ProbMap> probs;
    std::vector<ClassMap> maps;
    for (std::uint32_t i = 0; i < m; ++i) {
      ProbMap p{k, 3, 3, std::vector<float>(9ull * k, 0.0f)};
      for (std::size_t j = 0; j < 9; ++j) p.values[cls(rng) * 9 + j] = 1.0f;
      maps.push_back(pipeline::classify(p));
      probs.push_back(std::move(p));
    }
    if (pipeline::soft_vote(probs).labels != pipeline::hard_vote(maps).labels) return fail("draw " + std::to_string(draw));
  }
  return {true, "500 draws"};
}

Outcome metrics_oracle() {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> kd(2, 6), nd(1, 60);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = kd(rng), n = nd(rng);
    std::uniform_int_distribution<int> cls(1, k), lab(0, k);
    std::vector<std::uint16_t> p(n), t(n);
    for (auto& v : p) v = static_cast<std::uint16_t>(cls(rng));
    for (auto& v : t) v = static_cast<std::uint16_t>(lab(rng));
    t[0] = static_cast<std::uint16_t>(cls(rng));
    const auto m = pipeline::evaluate(ClassMap{1, static_cast<std::uint32_t>(n), p},
                                      LabelMap{1, static_cast<std::uint32_t>(n), t}, static_cast<std::size_t>(k));
    const auto o = oracle::scores(p, t, static_cast<std::size_t>(k));
    if (m.kappa_defined != o.kappa_defined) return fail("kappa definedness, trial " + std::to_string(trial));
    worst = std::max({worst, std::abs(m.oa - o.oa), std::abs(m.aa - o.aa)});
    if (o.kappa_defined) worst = std::max(worst, std::abs(m.kappa - o.kappa));
  }
  if (!(worst <= 1e-12)) return fail("error " + std::to_string(worst));
  const auto perfect = pipeline::evaluate(ClassMap{1, 4, {1, 2, 3, 2}}, LabelMap{1, 4, {1, 2, 3, 2}});
  if (perfect.kappa != 1.0) return fail("perfect kappa " + std::to_string(perfect.kappa));
  const auto half = pipeline::evaluate(ClassMap{1, 4, {1, 2, 1, 2}}, LabelMap{1, 4, {1, 1, 2, 2}});
  if (half.kappa != 0.0) return fail("[[1,1],[1,1]] kappa " + std::to_string(half.kappa));
  return {true, "100 pairs, kappa 1 and 0 cases"};
}

Outcome desk_trainability() {
  const auto scene = synth::synth_scene(7);
  const auto set = trispec::generate_set(scene.cube, 5);
  if (set.images.size() != 10) return fail("set size " + std::to_string(set.images.size()));

  model::ModelConfig mc;
  mc.dcm.channels = 32;
  mc.dcm.areas = 16;
  mc.dcm.iterations = 3;
  mc.dcm.heads = 2;
  mc.classes = 3;
  mc.seed = 1;
  pipeline::TrainConfig tc;
  tc.epochs = 30;
  tc.val_fraction = 0.0;
  tc.seed = 1;
  model::DcntModel model(mc);
  const auto report = pipeline::train(set.images, scene.train, model, tc);
  if (report.max_iter != 300) return fail("iterations " + std::to_string(report.max_iter));

  const auto inf = pipeline::run_inference_set(model, set.images, {}, &scene.train);
  const double soft = inf.soft_metrics->oa;
  const double hard = inf.hard_metrics->oa;
  const double best = *std::max_element(inf.single_image_oa.begin(), inf.single_image_oa.end());
  char buf[160];
  std::snprintf(buf, sizeof buf, "soft OA %.4f, hard OA %.4f, best single %.4f, final loss %.4g", soft, hard, best,
                report.train_log.back().loss);
  if (!(soft >= 0.95)) return fail(buf);
  if (!(soft >= best - 0.02 && hard >= best - 0.02)) return fail(buf);
  return {true, buf};
}

Outcome loss_sanity() {
  std::mt19937_64 rng(12);
  for (std::size_t k : {2, 3, 9, 22}) {
    const auto z = Tensor::full({k, 3, 4}, 0.37);
    LabelMap labels{3, 4, std::vector<std::uint16_t>(12, 0)};
    for (std::size_t i = 0; i < 12; i += 2) labels.labels[i] = static_cast<std::uint16_t>(i % k + 1);
    const double got = model::composite_loss(z, z, labels).item();
    if (!(std::abs(got - 1.4 * std::log(static_cast<double>(k))) <= 1e-6)) return fail("C=" + std::to_string(k));
  }
  auto main = testing::random_tensor({4, 3, 3}, rng, -2, 2, true);
  auto aux = testing::random_tensor({4, 3, 3}, rng, -2, 2, true);
  const LabelMap labels{3, 3, {0, 1, 0, 4, 0, 0, 2, 0, 3}};
  ad::backward(model::composite_loss(main, aux, labels));
  for (std::size_t p = 0; p < 9; ++p) {
    if (labels.labels[p] != 0) continue;
    for (std::size_t c = 0; c < 4; ++c)
      if (main.grad()[c * 9 + p] != 0.0 || aux.grad()[c * 9 + p] != 0.0) return fail("nonzero gradient at pixel " + std::to_string(p));
  }
  return {true, "1.4 ln C exact, unlabeled gradient zero"};
}

Outcome determinism() {
  testing::TempDir dir("acceptance_det");
  const auto d = [&](const char* p) { return (dir / p).string(); };
  std::ostringstream sink;
  auto call = [&](std::vector<std::string> args) { return cli::dispatch(args, sink, sink); };
  if (call({"synth", "--out", d("scene"), "--height", "16", "--width", "16", "--bands", "12", "--per-class", "20", "--seed", "4"}) != 0 ||
      call({"generate", "--cube", d("scene/cube.hsc"), "-G", "4", "--out", d("set")}) != 0)
    return fail("setup: " + sink.str());
  std::ofstream(dir / "run.cfg") << "dcm.C = 8\ndcm.Z = 4\ndcm.T = 2\ntrain.epochs = 3\ntrain.val_fraction = 0\n";
  for (const char* out : {"a/model.ckpt", "b/model.ckpt"})
    if (call({"train", "--set", d("set"), "--labels", d("scene/train.lbl"), "--config", d("run.cfg"), "--out", d(out),
              "--seed", "11"}) != 0)
      return fail("train: " + sink.str());
  const auto log_a = slurp(dir / "a/train_log.csv");
  if (log_a.empty() || log_a != slurp(dir / "b/train_log.csv")) return fail("loss logs differ");
  const auto ck_a = slurp(dir / "a/model.ckpt");
  if (ck_a.empty() || ck_a != slurp(dir / "b/model.ckpt")) return fail("checkpoints differ");
  return {true, "logs and checkpoints byte-identical"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"capacity table", capacity_table},
      {"stretch oracle", stretch_oracle},
      {"gradient suite", gradient_suite},
      {"clustering oracle", clustering_oracle},
      {"structural identity", structural_identity},
      {"voting equivalence", voting_equivalence},
      {"metrics oracle", metrics_oracle},
      {"desk-scale trainability", desk_trainability},
      {"loss sanity", loss_sanity},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s  %2zu %-24s %7.2fs  %s\n", r.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, secs, r.detail.c_str());
    std::fflush(stdout);
    failed += !r.pass;
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
