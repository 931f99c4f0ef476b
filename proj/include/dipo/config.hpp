#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dipo/difficulty.hpp"
#include "dipo/grading.hpp"
#include "dipo/optimizer.hpp"
#include "dipo/reward.hpp"
#include "dipo/synthlab.hpp"
#include "dipo/tokenizer.hpp"
#include "json.hpp"

namespace dipo::evalio {

struct SynthSection {
  std::vector<synthlab::TaskClass> classes;
  std::size_t max_tokens = 2000;
  double init_mean_length = 600.0;
  double probe_scale = 3.0;
};

/// Everything a run reads from the shared config document. Every section
/// and key is optional; missing values keep their defaults, unknown keys
/// are rejected.
struct Config {
  difficulty::DifficultyConfig difficulty;
  reward::RewardConfig reward;
  optimizer::OptimizerConfig optimizer;
  TokenizerMode tokenizer = TokenizerMode::whitespace_punct;
  grading::GradeOptions grading;
  std::string prompt_template = std::string(synthlab::kDefaultPromptTemplate);
  SynthSection synthlab = default_synth_section();

  static SynthSection default_synth_section();
  void validate() const;
};

Config config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const Config& cfg);
Config load_config(const std::string& path);

/// 16 hex digits of FNV-1a over the canonical serialization.
std::string config_digest(const Config& cfg);

synthlab::LabConfig lab_config(const Config& cfg);

}  // namespace dipo::evalio
