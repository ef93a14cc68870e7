#pragma once

// Flat `key = value` run configuration. Keys are grouped by dotted prefix;
// unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dcnt/model.hpp"
#include "dcnt/pipeline.hpp"

namespace dcnt::config {

struct RunConfig {
  std::uint32_t groups = 15;
  bool wavelength_descending = false;
  model::ModelConfig model;
  pipeline::TrainConfig train;
};

struct KeyInfo {
  std::string key;
  std::string default_value;
  std::string doc;
};

/// Every recognised key with its default, in documentation order.
std::vector<KeyInfo> keys();

/// Help text block: one `key = default  # doc` line per key.
std::string describe_keys();

RunConfig parse(std::string_view text, RunConfig base = {});
RunConfig load(const std::filesystem::path& path);

void set(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get(const RunConfig& cfg, std::string_view key);

/// Round-trippable text holding every key.
std::string to_text(const RunConfig& cfg);

}  // namespace dcnt::config
