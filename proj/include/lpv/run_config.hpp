#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lpv/model.hpp"

namespace lpv::inline LPV_NS {

// Everything a CLI run needs: model, data and schedule settings.
struct RunConfig {
  LpvConfig model;
  RenderConfig render;
  std::vector<std::string> vocab = default_vocabulary();
  std::size_t train_samples = 5000;
  std::size_t test_samples = 500;
  MaskMode mask_mode = MaskMode::kSchedule;
  std::size_t eval_threads = 1;

  DatasetSpec dataset_spec() const;
  void validate() const;
};

// Parses `key = value` lines; `#` starts a comment. Duplicate keys are an error.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin = "<string>");
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

// Applies values on top of cfg. Unknown keys and malformed values throw ConfigError.
void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& values);

std::vector<std::string> known_config_keys();

// Every key with its current value, in a form parse_key_values accepts.
std::string format_config(const RunConfig& cfg);

}  // namespace lpv::inline LPV_NS
