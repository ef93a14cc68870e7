#include "dcnt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include <json.hpp>

#include "dcnt/errors.hpp"
#include "dcnt/ops.hpp"

namespace dcnt::pipeline {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (batch_size == 0) throw ConfigError("train.batch must be positive");
  if (!(initial_lr > 0)) throw ConfigError("train.lr must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("train.momentum must lie in [0, 1)");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must be non-negative");
  if (val_fraction < 0 || val_fraction >= 1) throw ConfigError("train.val_fraction must lie in [0, 1)");
}

std::uint64_t total_iterations(std::size_t images, std::size_t batch, std::size_t epochs) {
  if (batch == 0) throw ConfigError("batch size must be positive");
  return static_cast<std::uint64_t>(epochs) * ((images + batch - 1) / batch);
}

std::vector<std::size_t> validation_split(std::size_t images, double val_fraction, std::uint64_t seed) {
  auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(images)));
  if (images <= 1) n_val = 0;
  n_val = std::min(n_val, images - std::min<std::size_t>(images, 1));
  if (n_val == 0) return {};
  std::vector<std::size_t> order(images);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ 0x5bd1e995ull);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(n_val);
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

double labeled_oa(const ClassMap& pred, const LabelMap& truth) {
  std::size_t n = 0, ok = 0;
  for (std::size_t i = 0; i < truth.labels.size(); ++i) {
    if (truth.labels[i] == 0) continue;
    ++n;
    ok += pred.labels[i] == truth.labels[i];
  }
  return n ? static_cast<double>(ok) / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

TrainReport train(const std::vector<RgbImage>& images, const LabelMap& labels, model::DcntModel& model,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (images.empty()) throw ContractError("train: empty tri-spectral set");
  if (labels.labeled_count() == 0) throw ContractError("train: label map has no labeled pixel");
  for (const auto& img : images) {
    if (img.height != labels.height || img.width != labels.width)
      throw ContractError("train: image and label map sizes differ");
  }
  if (labels.max_label() > model.config().classes) {
    throw ContractError("train: label " + std::to_string(labels.max_label()) + " exceeds model class count " +
                        std::to_string(model.config().classes));
  }

  TrainReport report;
  report.val_images = validation_split(images.size(), cfg.val_fraction, cfg.seed);
  for (std::size_t i = 0; i < images.size(); ++i)
    if (!std::binary_search(report.val_images.begin(), report.val_images.end(), i)) report.train_images.push_back(i);
  report.max_iter = total_iterations(report.train_images.size(), cfg.batch_size, cfg.epochs);

  std::vector<ad::Tensor> inputs;
  inputs.reserve(images.size());
  for (const auto& img : images) inputs.push_back(model.prepare_input(img));

  auto& params = model.parameters();
  ad::SgdMomentum opt(cfg.momentum, cfg.weight_decay);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order = report.train_images;
  std::uint64_t iter = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double lr = ad::poly_lr(cfg.initial_lr, iter, report.max_iter, cfg.poly_power);
      ad::zero_grad(params);
      ad::Tensor batch_loss;
      for (std::size_t k = start; k < end; ++k) {
        const auto out = model.forward(inputs[order[k]], labels.height, labels.width);
        const auto loss = model::composite_loss(out.main_logits, out.aux_logits, labels);
        batch_loss = batch_loss.defined() ? ad::add(batch_loss, loss) : loss;
      }
      batch_loss = ad::scale(batch_loss, 1.0 / static_cast<double>(end - start));
      ad::backward(batch_loss);
      opt.step(params, lr, lr * cfg.head_lr_mult);
      report.train_log.push_back({iter, lr, batch_loss.item()});
      ++iter;
    }
    if (!report.val_images.empty()) {
      VoteAccumulator acc;
      for (auto i : report.val_images) acc.add(predict_image(model, images[i]));
      report.val_log.push_back({epoch + 1, labeled_oa(acc.hard(), labels), labeled_oa(acc.soft(), labels)});
    }
  }
  return report;
}

void write_train_logs(const TrainReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream train_log(dir / "train_log.csv", std::ios::trunc);
  std::ofstream val_log(dir / "val_log.csv", std::ios::trunc);
  if (!train_log || !val_log) throw IoError("cannot write logs in " + dir.string());
  char line[128];
  train_log << "iter,lr,loss\n";
  for (const auto& r : report.train_log) {
    std::snprintf(line, sizeof line, "%llu,%.10g,%.12g\n", static_cast<unsigned long long>(r.iter), r.lr, r.loss);
    train_log << line;
  }
  val_log << "epoch,oa_hard,oa_soft\n";
  for (const auto& r : report.val_log) {
    std::snprintf(line, sizeof line, "%zu,%.8f,%.8f\n", r.epoch, r.oa_hard, r.oa_soft);
    val_log << line;
  }
}

ProbMap predict_image(const model::DcntModel& model, const RgbImage& image) {
  ad::NoGradGuard no_grad;
  const auto out = model.forward(image);
  const ad::Tensor probs = ad::softmax(out.main_logits, 0);
  ProbMap p{static_cast<std::uint32_t>(probs.dim(0)), image.height, image.width, {}};
  p.values.assign(probs.values().begin(), probs.values().end());
  return p;
}

ClassMap classify(const ProbMap& probs) {
  const std::size_t plane = probs.plane_size();
  ClassMap out{probs.height, probs.width, std::vector<std::uint16_t>(plane, 0)};
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.classes; ++c)
      if (probs.at(c, p) > probs.at(best, p)) best = c;
    out.labels[p] = static_cast<std::uint16_t>(best + 1);
  }
  return out;
}

void VoteAccumulator::shape_check(std::uint32_t classes, std::uint32_t height, std::uint32_t width) {
  if (count_ == 0 && votes_.empty()) {
    classes_ = classes;
    height_ = height;
    width_ = width;
    votes_.assign(std::size_t{classes} * height * width, 0);
    sums_.assign(votes_.size(), 0.0);
    return;
  }
  if (height != height_ || width != width_) throw ContractError("vote: map shapes differ");
  if (classes > classes_) {
    // Hard votes discover the class count from labels; grow the tables.
    const std::size_t plane = std::size_t{height_} * width_;
    votes_.resize(std::size_t{classes} * plane, 0);
    sums_.resize(votes_.size(), 0.0);
    classes_ = classes;
  }
}

void VoteAccumulator::add(const ProbMap& probs) {
  add_soft(probs);
  add_hard(classify(probs));
  --count_;
}

void VoteAccumulator::add_hard(const ClassMap& map) {
  shape_check(std::max<std::uint32_t>(classes_, map.max_label()), map.height, map.width);
  const std::size_t plane = map.labels.size();
  for (std::size_t p = 0; p < plane; ++p) {
    if (map.labels[p] == 0) throw ContractError("vote: class map has an unlabeled pixel");
    ++votes_[(map.labels[p] - 1u) * plane + p];
  }
  has_hard_ = true;
  ++count_;
}

void VoteAccumulator::add_soft(const ProbMap& probs) {
  if (count_ > 0 && has_soft_ && probs.classes != classes_) throw ContractError("vote: class counts differ");
  shape_check(probs.classes, probs.height, probs.width);
  for (std::size_t i = 0; i < probs.values.size(); ++i) sums_[i] += probs.values[i];
  has_soft_ = true;
  ++count_;
}

namespace {

template <class T>
ClassMap argmax_planes(const std::vector<T>& table, std::uint32_t classes, std::uint32_t height, std::uint32_t width) {
  const std::size_t plane = std::size_t{height} * width;
  ClassMap out{height, width, std::vector<std::uint16_t>(plane, 0)};
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (table[c * plane + p] > table[best * plane + p]) best = c;
    out.labels[p] = static_cast<std::uint16_t>(best + 1);
  }
  return out;
}

}  // namespace

ClassMap VoteAccumulator::hard() const {
  if (!has_hard_) throw ContractError("vote: no class maps accumulated");
  return argmax_planes(votes_, classes_, height_, width_);
}

ClassMap VoteAccumulator::soft() const {
  if (!has_soft_) throw ContractError("vote: no probability maps accumulated");
  return argmax_planes(sums_, classes_, height_, width_);
}

ClassMap hard_vote(std::span<const ClassMap> maps) {
  if (maps.empty()) throw ContractError("hard_vote: no maps");
  VoteAccumulator acc;
  for (const auto& m : maps) acc.add_hard(m);
  return acc.hard();
}

ClassMap soft_vote(std::span<const ProbMap> maps) {
  if (maps.empty()) throw ContractError("soft_vote: no maps");
  VoteAccumulator acc;
  for (const auto& m : maps) acc.add_soft(m);
  return acc.soft();
}

Metrics evaluate(const ClassMap& pred, const LabelMap& truth, std::size_t classes) {
  if (pred.height != truth.height || pred.width != truth.width) throw ContractError("evaluate: map shapes differ");
  const std::size_t k = std::max<std::size_t>({classes, pred.max_label(), truth.max_label()});
  Metrics m;
  m.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < truth.labels.size(); ++i) {
    if (truth.labels[i] == 0) continue;
    if (pred.labels[i] == 0) throw ContractError("evaluate: prediction leaves a labeled pixel unclassified");
    ++m.confusion[truth.labels[i] - 1u][pred.labels[i] - 1u];
    ++m.n_labeled;
  }
  if (m.n_labeled == 0) throw ContractError("evaluate: truth has no labeled pixel");
  const double n = static_cast<double>(m.n_labeled);
  std::size_t correct = 0;
  double pe = 0.0, aa_sum = 0.0;
  std::size_t present = 0;
  m.per_class.assign(k, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += m.confusion[c][j];
      col += m.confusion[j][c];
    }
    correct += m.confusion[c][c];
    pe += (static_cast<double>(row) / n) * (static_cast<double>(col) / n);
    if (row > 0) {
      m.per_class[c] = static_cast<double>(m.confusion[c][c]) / static_cast<double>(row);
      aa_sum += m.per_class[c];
      ++present;
    }
  }
  m.oa = static_cast<double>(correct) / n;
  m.aa = aa_sum / static_cast<double>(present);
  if (pe >= 1.0) {
    m.kappa_defined = false;
    m.kappa = std::numeric_limits<double>::quiet_NaN();
  } else {
    m.kappa = (m.oa - pe) / (1.0 - pe);
  }
  return m;
}

std::string Metrics::to_json() const {
  nlohmann::json j;
  j["oa"] = oa;
  j["aa"] = aa;
  j["kappa"] = kappa_defined ? nlohmann::json(kappa) : nlohmann::json(nullptr);
  auto pc = nlohmann::json::array();
  for (double v : per_class) pc.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  j["per_class"] = pc;
  j["n_labeled"] = n_labeled;
  return j.dump(2);
}

InferenceResult run_inference_set(const model::DcntModel& model, const std::vector<RgbImage>& images,
                                  const std::filesystem::path& out_dir, const LabelMap* truth,
                                  const InferenceOptions& options) {
  if (images.empty()) throw ContractError("inference: empty tri-spectral set");
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  const std::size_t m = images.size();
  std::vector<ProbMap> probs(m);
  InferenceResult result;
  VoteAccumulator acc;
  if (truth) result.single_image_oa.resize(m);

  // Images are predicted in blocks of `jobs`; accumulation and file output
  // stay in image order.
  const std::size_t jobs = std::max<std::size_t>(1, options.jobs);
  for (std::size_t block = 0; block < m; block += jobs) {
    const std::size_t end = std::min(m, block + jobs);
    if (jobs == 1) {
      probs[block] = predict_image(model, images[block]);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t i = block; i < end; ++i)
        pool.emplace_back([&, i] { probs[i] = predict_image(model, images[i]); });
    }
    for (std::size_t i = block; i < end; ++i) {
      const ClassMap cls = classify(probs[i]);
      acc.add(probs[i]);
      if (truth) result.single_image_oa[i] = evaluate(cls, *truth, probs[i].classes).oa;
      if (!out_dir.empty()) {
        save_probmap(probs[i], out_dir / ("prob_" + std::to_string(i) + ".prb"));
        save_labels(cls, out_dir / ("class_" + std::to_string(i) + ".lbl"));
        write_ppm(render_class_map(cls), out_dir / ("class_" + std::to_string(i) + ".ppm"));
      }
      if (options.keep_maps) {
        result.probs.push_back(std::move(probs[i]));
      } else {
        probs[i] = ProbMap{};
      }
    }
  }
  result.hard = acc.hard();
  result.soft = acc.soft();
  if (truth) {
    const std::size_t classes = model.config().classes;
    result.hard_metrics = evaluate(result.hard, *truth, classes);
    result.soft_metrics = evaluate(result.soft, *truth, classes);
  }
  if (!out_dir.empty()) {
    save_labels(result.hard, out_dir / "vote_hard.lbl");
    save_labels(result.soft, out_dir / "vote_soft.lbl");
    write_ppm(render_class_map(result.hard), out_dir / "vote_hard.ppm");
    write_ppm(render_class_map(result.soft), out_dir / "vote_soft.ppm");
    if (truth) {
      nlohmann::json report;
      report["hard"] = nlohmann::json::parse(result.hard_metrics->to_json());
      report["soft"] = nlohmann::json::parse(result.soft_metrics->to_json());
      report["single_image_oa"] = result.single_image_oa;
      std::ofstream(out_dir / "report.json") << report.dump(2) << '\n';
    }
  }
  return result;
}

}  // namespace dcnt::pipeline
