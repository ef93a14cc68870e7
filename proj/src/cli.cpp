#include "dcnt/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>

#include <CLI11.hpp>

#include "dcnt/cluster.hpp"
#include "dcnt/config.hpp"
#include "dcnt/errors.hpp"
#include "dcnt/grad_suite.hpp"
#include "dcnt/pipeline.hpp"
#include "dcnt/synth.hpp"
#include "dcnt/trispec.hpp"

namespace dcnt::cli {

namespace fs = std::filesystem;

namespace {

fs::path sidecar(const fs::path& ckpt) { return fs::path(ckpt.string() + ".cfg"); }

model::DcntModel load_model(const fs::path& ckpt) {
  const auto cfg = config::load(sidecar(ckpt));
  model::DcntModel net(cfg.model);
  ad::load_checkpoint(net.parameters(), ckpt);
  return net;
}

// Files named <prefix><index><ext> in index order.
std::vector<fs::path> indexed_files(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  const std::regex re(prefix + "([0-9]+)" + std::regex_replace(ext, std::regex(R"(\.)"), R"(\.)"));
  std::map<std::size_t, fs::path> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, re)) found[std::stoul(m[1].str())] = e.path();
  }
  if (found.empty()) throw IoError("no " + prefix + "<i>" + ext + " files in " + dir.string());
  std::vector<fs::path> out;
  for (auto& [i, p] : found) out.push_back(p);
  return out;
}

void write_report(const fs::path& path, const std::string& json) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << json << '\n';
}

int run_synth(const fs::path& out_dir, const synth::SceneOptions& opt, std::uint64_t seed, std::ostream& out) {
  const auto scene = synth::synth_scene(seed, opt);
  fs::create_directories(out_dir);
  save_cube(scene.cube, out_dir / "cube.hsc");
  save_labels(scene.truth, out_dir / "truth.lbl");
  save_labels(scene.train, out_dir / "train.lbl");
  write_ppm(render_class_map(scene.truth), out_dir / "truth.ppm");
  out << "scene " << opt.height << "x" << opt.width << "x" << opt.bands << ", " << opt.classes << " classes, "
      << scene.train.labeled_count() << " training labels -> " << out_dir.string() << "\n";
  return 0;
}

int run_generate(const fs::path& cube_path, std::uint32_t groups, bool descending, const fs::path& out_dir,
                 std::ostream& out) {
  const auto cube = load_cube(cube_path);
  trispec::GenerateOptions opt;
  opt.wavelength_descending = descending;
  const auto set = trispec::generate_set(cube, groups, opt);
  trispec::write_set(set, out_dir);
  out << set.capacity() << " images";
  if (set.degenerate_count) out << " (" << set.degenerate_count << " with flat stretch)";
  out << " -> " << out_dir.string() << "\n";
  return 0;
}

int run_areas(const fs::path& ckpt, const fs::path& image_path, const fs::path& out_prefix, std::ostream& out) {
  const auto net = load_model(ckpt);
  const auto image = read_ppm(image_path);
  cluster::AreaAssignment areas;
  {
    ad::NoGradGuard guard;
    auto fwd = net.forward(image);
    areas = fwd.dcm.areas.layout.height ? std::move(fwd.dcm.areas)
                                        : cluster::run_clustering(fwd.feature, net.config().dcm.areas,
                                                                  net.config().dcm.iterations);
  }
  const std::size_t h1 = areas.layout.height, w1 = areas.layout.width;
  LabelMap map{static_cast<std::uint32_t>(h1), static_cast<std::uint32_t>(w1), {}};
  for (auto a : areas.hard_labels) map.labels.push_back(static_cast<std::uint16_t>(a + 1));
  save_labels(map, fs::path(out_prefix.string() + ".lbl"));

  const std::size_t stride = model::kOutputStride;
  auto area_at = [&](std::size_t y, std::size_t x) { return map.labels[(y / stride) * w1 + x / stride]; };
  RgbImage overlay = image;
  const std::size_t plane = image.plane_size();
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const auto a = area_at(y, x);
      const bool edge = (x + 1 < image.width && area_at(y, x + 1) != a) ||
                        (y + 1 < image.height && area_at(y + 1, x) != a);
      if (!edge) continue;
      const std::size_t p = y * image.width + x;
      overlay.data[p] = 255;
      overlay.data[plane + p] = 0;
      overlay.data[2 * plane + p] = 0;
    }
  }
  write_ppm(overlay, fs::path(out_prefix.string() + ".ppm"));
  std::size_t used = 0;
  for (auto c : areas.counts) used += c > 0;
  out << used << " of " << areas.counts.size() << " areas non-empty on a " << h1 << "x" << w1 << " feature map\n";
  return 0;
}

int run_train(const fs::path& set_dir, const fs::path& labels_path, const fs::path& config_path,
              const fs::path& ckpt, fs::path log_dir, const std::uint64_t* seed, std::ostream& out) {
  auto cfg = config_path.empty() ? config::RunConfig{} : config::load(config_path);
  if (seed) {
    cfg.train.seed = *seed;
    cfg.model.seed = *seed;
  }
  const auto set = trispec::read_set(set_dir);
  const auto labels = load_labels(labels_path);
  if (cfg.model.classes == 0) cfg.model.classes = labels.max_label();
  model::DcntModel net(cfg.model);
  const auto report = pipeline::train(set.images, labels, net, cfg.train);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  ad::save_checkpoint(net.parameters(), ckpt);
  {
    std::ofstream f(sidecar(ckpt));
    if (!f) throw IoError("cannot write " + sidecar(ckpt).string());
    f << config::to_text(cfg);
  }
  if (log_dir.empty()) log_dir = ckpt.has_parent_path() ? ckpt.parent_path() : fs::path(".");
  pipeline::write_train_logs(report, log_dir);
  char line[160];
  std::snprintf(line, sizeof line, "%llu iterations over %zu images, final loss %.6f\n",
                static_cast<unsigned long long>(report.max_iter), report.train_images.size(),
                report.train_log.empty() ? 0.0 : report.train_log.back().loss);
  out << line;
  return 0;
}

int run_predict(const fs::path& ckpt, const fs::path& set_dir, const fs::path& out_dir, const fs::path& truth_path,
                std::size_t jobs, std::ostream& out) {
  const auto net = load_model(ckpt);
  const auto set = trispec::read_set(set_dir);
  LabelMap truth;
  if (!truth_path.empty()) truth = load_labels(truth_path);
  pipeline::InferenceOptions opt;
  opt.jobs = jobs;
  const auto res = pipeline::run_inference_set(net, set.images, out_dir, truth_path.empty() ? nullptr : &truth, opt);
  out << set.images.size() << " maps -> " << out_dir.string() << "\n";
  if (res.hard_metrics) {
    char line[160];
    std::snprintf(line, sizeof line, "hard vote OA %.4f, soft vote OA %.4f, best single image OA %.4f\n",
                  res.hard_metrics->oa, res.soft_metrics->oa,
                  *std::max_element(res.single_image_oa.begin(), res.single_image_oa.end()));
    out << line;
  }
  return 0;
}

int run_vote(const std::string& mode, const fs::path& in_dir, const fs::path& out_path, std::ostream& out) {
  pipeline::VoteAccumulator acc;
  ClassMap fused;
  if (mode == "hard") {
    for (const auto& p : indexed_files(in_dir, "class_", ".lbl")) acc.add_hard(load_labels(p));
    fused = acc.hard();
  } else {
    for (const auto& p : indexed_files(in_dir, "prob_", ".prb")) acc.add_soft(load_probmap(p));
    fused = acc.soft();
  }
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_labels(fused, out_path);
  fs::path ppm = out_path;
  ppm.replace_extension(".ppm");
  write_ppm(render_class_map(fused), ppm);
  out << mode << " vote over " << acc.count() << " maps -> " << out_path.string() << "\n";
  return 0;
}

int run_eval(const fs::path& pred, const fs::path& truth, const fs::path& report, std::size_t classes,
             std::ostream& out) {
  const auto m = pipeline::evaluate(load_labels(pred), load_labels(truth), classes);
  const auto json = m.to_json();
  if (!report.empty()) write_report(report, json);
  out << json << "\n";
  return 0;
}

int run_gradcheck(std::uint64_t seed, double eps, std::ostream& out) {
  const auto results = ad::run_grad_suite(seed, eps);
  bool ok = true;
  for (const auto& r : results) {
    char line[200];
    std::snprintf(line, sizeof line, "%-20s max_rel_error %.3e  checked %zu  excluded %zu%s%s\n", r.block.c_str(),
                  r.report.max_rel_error, r.report.checked, r.report.excluded,
                  r.report.nonfinite_op.empty() ? "" : "  non-finite in ", r.report.nonfinite_op.c_str());
    out << line;
    ok = ok && r.report.ok(ad::kGradTolerance);
  }
  out << (ok ? "all blocks below 1e-4\n" : "gradient check FAILED\n");
  return ok ? 0 : 1;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-context network for tri-spectral hyperspectral classification", "dcnt"};
  app.footer("Config keys (train --config, flat `key = value`, '#' comments):\n" + config::describe_keys());
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  auto add_seed = [&](CLI::App* sub) { return sub->add_option("--seed", seed, "random seed"); };

  synth::SceneOptions scene;
  fs::path synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic scene (cube.hsc, truth.lbl, train.lbl)");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--height", scene.height, "rows")->capture_default_str();
  synth_cmd->add_option("--width", scene.width, "columns")->capture_default_str();
  synth_cmd->add_option("--bands", scene.bands, "spectral bands")->capture_default_str();
  synth_cmd->add_option("--classes", scene.classes, "classes")->capture_default_str();
  synth_cmd->add_option("--per-class", scene.per_class, "training labels per class")->capture_default_str();
  synth_cmd->add_option("--noise", scene.noise, "noise standard deviation")->capture_default_str();
  add_seed(synth_cmd);

  fs::path gen_cube, gen_out;
  std::uint32_t groups = config::RunConfig{}.groups;
  bool descending = false;
  auto* gen_cmd = app.add_subcommand("generate", "build the tri-spectral image set of a cube");
  gen_cmd->add_option("--cube", gen_cube, "HSC1 cube")->required();
  gen_cmd->add_option("--groups,-G", groups, "band groups")->capture_default_str();
  gen_cmd->add_flag("--descending", descending, "bands are stored long to short wavelength");
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  add_seed(gen_cmd);

  fs::path areas_ckpt, areas_image, areas_out;
  auto* areas_cmd = app.add_subcommand("areas", "homogeneous areas of one image (LBL1 + overlay PPM)");
  areas_cmd->add_option("--checkpoint,--ckpt", areas_ckpt, "trained checkpoint")->required();
  areas_cmd->add_option("--image", areas_image, "PPM image")->required();
  areas_cmd->add_option("--out", areas_out, "output prefix")->required();
  add_seed(areas_cmd);

  fs::path train_set, train_labels, train_config, train_out, train_logs;
  auto* train_cmd = app.add_subcommand("train", "train on a tri-spectral set");
  train_cmd->add_option("--set", train_set, "set directory")->required();
  train_cmd->add_option("--labels", train_labels, "LBL1 training labels")->required();
  train_cmd->add_option("--config", train_config, "config file");
  train_cmd->add_option("--out", train_out, "checkpoint path")->required();
  train_cmd->add_option("--log-dir", train_logs, "log directory (default: checkpoint directory)");
  auto* train_seed = add_seed(train_cmd)->description("overrides train.seed and model.seed");
  train_cmd->footer("Config keys:\n" + config::describe_keys());

  fs::path pred_ckpt, pred_set, pred_out, pred_truth;
  std::size_t jobs = 1;
  auto* pred_cmd = app.add_subcommand("predict", "per-image maps and both votes");
  pred_cmd->add_option("--ckpt", pred_ckpt, "trained checkpoint")->required();
  pred_cmd->add_option("--set", pred_set, "set directory")->required();
  pred_cmd->add_option("--out", pred_out, "output directory")->required();
  pred_cmd->add_option("--truth", pred_truth, "LBL1 truth; adds report.json");
  pred_cmd->add_option("--jobs", jobs, "parallel images")->capture_default_str()->check(CLI::PositiveNumber);
  add_seed(pred_cmd);

  std::string vote_mode;
  fs::path vote_in, vote_out;
  auto* vote_cmd = app.add_subcommand("vote", "fuse per-image maps written by predict");
  vote_cmd->add_option("--mode", vote_mode, "hard or soft")->required()->check(CLI::IsMember({"hard", "soft"}));
  vote_cmd->add_option("--in", vote_in, "predict output directory")->required();
  vote_cmd->add_option("--out", vote_out, "LBL1 output")->required();
  add_seed(vote_cmd);

  fs::path eval_pred, eval_truth, eval_report;
  std::size_t eval_classes = 0;
  auto* eval_cmd = app.add_subcommand("eval", "OA, AA and kappa of a class map");
  eval_cmd->add_option("--pred", eval_pred, "LBL1 prediction")->required();
  eval_cmd->add_option("--truth", eval_truth, "LBL1 truth")->required();
  eval_cmd->add_option("--report", eval_report, "JSON report path");
  eval_cmd->add_option("--classes", eval_classes, "class count (default: inferred)");
  add_seed(eval_cmd);

  double eps = 1e-6;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every differentiable block");
  grad_cmd->add_option("--eps", eps, "central difference step")->capture_default_str();
  add_seed(grad_cmd);

  std::vector<const char*> argv{"dcnt"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    if (*synth_cmd) return run_synth(synth_out, scene, seed, out);
    if (*gen_cmd) return run_generate(gen_cube, groups, descending, gen_out, out);
    if (*areas_cmd) return run_areas(areas_ckpt, areas_image, areas_out, out);
    if (*train_cmd)
      return run_train(train_set, train_labels, train_config, train_out, train_logs, *train_seed ? &seed : nullptr,
                       out);
    if (*pred_cmd) return run_predict(pred_ckpt, pred_set, pred_out, pred_truth, jobs, out);
    if (*vote_cmd) return run_vote(vote_mode, vote_in, vote_out, out);
    if (*eval_cmd) return run_eval(eval_pred, eval_truth, eval_report, eval_classes, out);
    if (*grad_cmd) return run_gradcheck(seed, eps, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace dcnt::cli
