#include "dipo/reward.hpp"

#include <algorithm>
#include <cmath>

#include "dipo/error.hpp"
#include "dipo/tokenizer.hpp"

namespace dipo::reward {

void RewardConfig::validate() const {
  if (!(c > 0.0) || !std::isfinite(c)) {
    throw InputError("reward.c must be a finite value > 0");
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw InputError("reward.epsilon must be a finite value > 0");
  }
  if (!std::isfinite(s) || !std::isfinite(f) || !std::isfinite(p) ||
      !std::isfinite(phi)) {
    throw InputError("reward scores must be finite");
  }
}

std::string_view to_string(Branch branch) {
  switch (branch) {
    case Branch::format_fail:
      return "format_fail";
    case Branch::wrong:
      return "wrong";
    case Branch::correct:
      return "correct";
  }
  return "format_fail";
}

double length_penalty(std::size_t token_count, double difficulty,
                      const RewardConfig& cfg) {
  if (!cfg.length_penalty_enabled) return 0.0;
  const double ratio = static_cast<double>(token_count) / cfg.c;
  return std::min(cfg.epsilon, ratio) * (difficulty + cfg.phi);
}

ScoredRollout score_rollout(std::string_view output_text,
                            std::string_view reference, double difficulty,
                            const RewardConfig& cfg,
                            std::optional<std::size_t> token_count,
                            const grading::GradeOptions& grading) {
  if (!std::isfinite(difficulty)) {
    throw InputError("score_rollout: difficulty is not finite");
  }
  grading::GradeOutcome outcome = grading::grade(output_text, reference, grading);

  ScoredRollout out;
  out.output_text = std::string(output_text);
  out.token_count = token_count ? *token_count : evalio::count_tokens(output_text);
  out.delta = outcome.delta;
  out.difficulty = difficulty;
  out.extracted = std::move(outcome.extracted);
  if (!out.extracted.found) {
    out.branch = Branch::format_fail;
    out.reward = cfg.p;
    return out;
  }
  out.lambda = length_penalty(out.token_count, difficulty, cfg);
  if (out.delta == 0) {
    out.branch = Branch::correct;
    out.reward = cfg.s - out.lambda;
  } else {
    out.branch = Branch::wrong;
    out.reward = cfg.f - out.lambda;
  }
  return out;
}

std::vector<ScoredRollout> score_group(std::span<const std::string> outputs,
                                       std::string_view reference,
                                       double difficulty,
                                       const RewardConfig& cfg) {
  std::vector<ScoredRollout> scored;
  scored.reserve(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    try {
      scored.push_back(score_rollout(outputs[i], reference, difficulty, cfg));
    } catch (const Error& e) {
      throw InputError("rollout " + std::to_string(i) + ": " + e.what());
    }
  }
  return scored;
}

}  // namespace dipo::reward
