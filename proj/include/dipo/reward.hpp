#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dipo/grading.hpp"

namespace dipo::reward {

struct RewardConfig {
  double s = 1.0;        // correct answer score
  double f = -0.2;       // well-formed but wrong answer score
  double p = -1.0;       // format penalty when no answer can be extracted
  double c = 9000.0;     // length scaling factor
  double epsilon = 0.5;  // cap on len / c
  double phi = 0.8;      // difficulty bias
  // false forces lambda to 0 (the no-length-penalty control).
  bool length_penalty_enabled = true;

  void validate() const;
};

enum class Branch { format_fail, wrong, correct };

std::string_view to_string(Branch branch);

struct ScoredRollout {
  std::string output_text;
  std::size_t token_count = 0;
  grading::ExtractionResult extracted;
  int delta = 1;
  double difficulty = 0.0;
  double lambda = 0.0;  // 0 on format_fail, where no penalty applies
  double reward = 0.0;
  Branch branch = Branch::format_fail;
};

/// min(epsilon, token_count / c) * (difficulty + phi).
double length_penalty(std::size_t token_count, double difficulty,
                      const RewardConfig& cfg);

/// Grades `output_text` against `reference` and applies the three-branch
/// reward. The token count comes from the default tokenizer unless
/// `token_count` is supplied.
ScoredRollout score_rollout(std::string_view output_text,
                            std::string_view reference, double difficulty,
                            const RewardConfig& cfg,
                            std::optional<std::size_t> token_count = {},
                            const grading::GradeOptions& grading = {});

/// Element-wise score_rollout; an element's failure is rethrown as
/// InputError naming its index.
std::vector<ScoredRollout> score_group(std::span<const std::string> outputs,
                                       std::string_view reference,
                                       double difficulty,
                                       const RewardConfig& cfg);

}  // namespace dipo::reward
