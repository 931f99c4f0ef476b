#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dipo/difficulty.hpp"
#include "dipo/metrics.hpp"
#include "dipo/optimizer.hpp"
#include "dipo/reward.hpp"
#include "dipo/tokenizer.hpp"
#include "dipo/types.hpp"
#include "json.hpp"

namespace dipo::evalio {

// Line-delimited JSON. Blank lines are skipped; a malformed line raises
// ParseError naming the source and line number.
std::vector<nlohmann::json> read_jsonl(std::istream& in, const std::string& source);
std::vector<nlohmann::json> read_jsonl(const std::string& path);
void write_jsonl(std::ostream& out, const std::vector<nlohmann::json>& records);
void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& records);

/// Round-trip decimal rendering (%.17g).
std::string format_double(double v);

// Tasks: {id, question, answer, ...}. Unknown fields land in `extra` and
// are written back unchanged.
TaskExample task_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TaskExample& task);

/// Probe {id, text, tokens?, delta?}. Without `tokens` the count comes from
/// the tokenizer (an error in precomputed mode). A missing delta is left
/// empty for the caller to grade.
struct ProbeRecord {
  difficulty::ProbeResponse probe;
  bool has_delta = false;
};
ProbeRecord probe_from_json(const nlohmann::json& j, TokenizerMode mode);
nlohmann::json to_json(const difficulty::ProbeResponse& probe);

nlohmann::json to_json(const difficulty::AnnotatedExample& example);
difficulty::AnnotatedExample annotated_from_json(const nlohmann::json& j);

/// {mu, sigma, n, alpha, xi, flags}
nlohmann::json stats_to_json(const difficulty::DifficultyStats& stats,
                             const difficulty::DifficultyConfig& cfg);
struct StatsSidecar {
  difficulty::DifficultyStats stats;
  difficulty::DifficultyConfig config;
};
StatsSidecar stats_from_json(const nlohmann::json& j);

/// {id, output_text, reference?, difficulty?, tokens?}
struct RolloutRecord {
  std::string id;
  std::string output_text;
  std::optional<std::string> reference;
  std::optional<double> difficulty;
  std::optional<std::size_t> tokens;
  nlohmann::json extra = nlohmann::json::object();
};
RolloutRecord rollout_from_json(const nlohmann::json& j);

/// {reward, lambda, branch, extracted, delta, token_count}
nlohmann::json to_json(const reward::ScoredRollout& scored);

/// Reads {id, response|text, reference|answer, tokens?, delta?,
/// first_correct_index?, difficulty?}. Missing counts, deltas and first
/// correct indices are derived from the text.
EvalRecord eval_record_from_json(const nlohmann::json& j, TokenizerMode mode,
                                 const grading::GradeOptions& grading = {});
nlohmann::json to_json(const MetricsReport& report);

/// {step, mean_reward, mean_len, acc, loss, kl}
nlohmann::json to_json(const optimizer::StepRecord& record);
void write_trace(std::ostream& out, const optimizer::TrainingTrace& trace);

/// Header line {param_count, step, seed}, then one value per line.
void write_checkpoint(std::ostream& out, const Eigen::VectorXd& theta,
                      std::size_t step, std::uint64_t seed);
struct Checkpoint {
  Eigen::VectorXd parameters;
  std::size_t step = 0;
  std::uint64_t seed = 0;
};
Checkpoint read_checkpoint(std::istream& in);

}  // namespace dipo::evalio
