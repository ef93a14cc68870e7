#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dcnt/tensor.hpp"

namespace dcnt::ad {

/// Learning-rate group. Head parameters train at a multiple of the backbone rate.
enum class ParamGroup { backbone, head };

const char* to_string(ParamGroup group);

class Parameter {
 public:
  Parameter(std::string name, Tensor tensor, ParamGroup group)
      : name_(std::move(name)), tensor_(std::move(tensor)), group_(group) {}

  const std::string& name() const { return name_; }
  Tensor& tensor() { return tensor_; }
  const Tensor& tensor() const { return tensor_; }
  ParamGroup group() const { return group_; }

 private:
  std::string name_;
  Tensor tensor_;
  ParamGroup group_;
};

using ParameterList = std::vector<Parameter>;

void zero_grad(ParameterList& params);

/// Fills with U(-bound, bound) from the given engine, in storage order.
void init_uniform(Tensor& t, double bound, std::mt19937_64& rng);

/// SGD with momentum and L2 weight decay:
///   v <- momentum * v + grad + weight_decay * w
///   w <- w - lr(group) * v
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParameterList& params, double lr_backbone, double lr_head);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

/// initial * (1 - iter / max_iter)^power
double poly_lr(double initial, std::uint64_t iter, std::uint64_t max_iter, double power = 0.9);

// Checkpoint: "CKPT", u32 count, then per parameter u32 name length, name
// bytes, u32 rank, u32 extents, f32 payload. Little-endian.

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void save_checkpoint(const ParameterList& params, const std::filesystem::path& path);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);
/// Copies matching entries into params. Every parameter must be present with
/// an identical shape; extra entries are an error too.
void load_checkpoint(ParameterList& params, const std::filesystem::path& path);

}  // namespace dcnt::ad
