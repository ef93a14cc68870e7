#pragma once

// Training over a tri-spectral set, per-image inference, hard/soft voting and
// OA/AA/kappa evaluation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcnt/data_io.hpp"
#include "dcnt/model.hpp"

namespace dcnt::pipeline {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 1;
  double initial_lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  double poly_power = 0.9;
  double head_lr_mult = 10.0;
  std::uint64_t seed = 0;
  double val_fraction = 0.05;

  void validate() const;
};

struct TrainLogRow {
  std::uint64_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct ValLogRow {
  std::size_t epoch = 0;
  double oa_hard = 0.0;
  double oa_soft = 0.0;
};

struct TrainReport {
  std::vector<TrainLogRow> train_log;
  std::vector<ValLogRow> val_log;
  std::vector<std::size_t> train_images;
  std::vector<std::size_t> val_images;
  std::uint64_t max_iter = 0;
};

/// epochs * ceil(images / batch)
std::uint64_t total_iterations(std::size_t images, std::size_t batch, std::size_t epochs);

/// Indices held out for validation: floor(val_fraction * M) images chosen by
/// a seeded shuffle, always leaving at least one training image.
std::vector<std::size_t> validation_split(std::size_t images, double val_fraction, std::uint64_t seed);

TrainReport train(const std::vector<RgbImage>& images, const LabelMap& labels, model::DcntModel& model,
                  const TrainConfig& cfg);

/// Writes train_log.csv (iter,lr,loss) and val_log.csv (epoch,oa_hard,oa_soft).
void write_train_logs(const TrainReport& report, const std::filesystem::path& dir);

/// Per-pixel softmax of the main logits.
ProbMap predict_image(const model::DcntModel& model, const RgbImage& image);

/// Per-pixel argmax (1-based); ties go to the smallest class.
ClassMap classify(const ProbMap& probs);

ClassMap hard_vote(std::span<const ClassMap> maps);
ClassMap soft_vote(std::span<const ProbMap> maps);

/// Streaming form of both votes so large ensembles need not stay in memory.
class VoteAccumulator {
 public:
  void add(const ProbMap& probs);
  void add_hard(const ClassMap& map);
  void add_soft(const ProbMap& probs);
  ClassMap hard() const;
  ClassMap soft() const;
  std::size_t count() const { return count_; }

 private:
  void shape_check(std::uint32_t classes, std::uint32_t height, std::uint32_t width);

  std::uint32_t classes_ = 0, height_ = 0, width_ = 0;
  std::size_t count_ = 0;
  std::vector<std::uint32_t> votes_;  // classes x pixels
  std::vector<double> sums_;          // classes x pixels
  bool has_hard_ = false, has_soft_ = false;
};

struct Metrics {
  std::vector<double> per_class;  // recall per class 1..K; NaN when absent from truth
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  bool kappa_defined = true;
  std::size_t n_labeled = 0;
  std::vector<std::vector<std::size_t>> confusion;  // truth x prediction, K x K

  std::string to_json() const;
};

/// Scores labeled truth pixels only. `classes` = 0 infers K from both maps.
Metrics evaluate(const ClassMap& pred, const LabelMap& truth, std::size_t classes = 0);

struct InferenceOptions {
  std::size_t jobs = 1;
  bool keep_maps = false;
};

struct InferenceResult {
  std::vector<ProbMap> probs;  // filled when keep_maps
  ClassMap hard;
  ClassMap soft;
  std::optional<Metrics> hard_metrics;
  std::optional<Metrics> soft_metrics;
  std::vector<double> single_image_oa;  // with truth
};

/// Predicts every image, persists prob_<i>.prb, class_<i>.lbl and class_<i>.ppm
/// (when out_dir is non-empty), then fuses both votes. With truth, also
/// writes report.json holding both votes' metrics.
InferenceResult run_inference_set(const model::DcntModel& model, const std::vector<RgbImage>& images,
                                  const std::filesystem::path& out_dir, const LabelMap* truth,
                                  const InferenceOptions& options = {});

}  // namespace dcnt::pipeline
