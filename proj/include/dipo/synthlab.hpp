#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "dipo/difficulty.hpp"
#include "dipo/optimizer.hpp"
#include "dipo/reward.hpp"

namespace dipo::synthlab {

/// A family of synthetic tasks. Solving probability grows with the number
/// of emitted tokens: p(l) = cap * (1 - exp(-l / tau)).
struct TaskClass {
  std::string class_id;
  double tau = 1.0;
  double cap = 1.0;
  std::vector<std::string> answers;  // single-token canonical answers, >= 2
  std::size_t n_examples = 0;

  void validate() const;
};

double p_correct(const TaskClass& cls, double length);

double logistic(double x);
double logit(double q);

/// Tokens taken by `\boxed{answer}` under the default tokenizer.
std::size_t answer_block_tokens(std::string_view answer);

/// One stop-logit per task class. Rollout length is Geometric(q) on
/// {1, 2, ...} with q = logistic(theta[class]); draws reaching
/// `max_tokens` are cut off there and carry no boxed answer.
///
/// Sampling consumes exactly three uniforms per rollout (length,
/// correctness, decoy) and draws the length by inverse CDF, so runs that
/// share a seed stay coupled across parameter values.
class SyntheticPolicy final : public optimizer::Policy {
 public:
  SyntheticPolicy(std::vector<TaskClass> classes, Eigen::VectorXd theta,
                  std::size_t max_tokens = 2000,
                  std::uint64_t filler_seed = 0x5eedf111e5ULL);

  void assign(const std::string& example_id, std::size_t class_index);
  std::size_t class_of(const TaskExample& task) const;

  const std::vector<TaskClass>& classes() const { return classes_; }
  std::size_t max_tokens() const { return max_tokens_; }
  double stop_probability(std::size_t cls) const;

  /// The first `n` filler tokens, space separated.
  std::string_view filler(std::size_t n) const;

  optimizer::Rollout sample(const TaskExample& task,
                            optimizer::Rng& rng) const override;
  double log_prob(const TaskExample& task,
                  const optimizer::Rollout& rollout) const override;
  Eigen::VectorXd log_prob_gradient(
      const TaskExample& task, const optimizer::Rollout& rollout) const override;
  void add_log_prob_gradient(const TaskExample& task,
                             const optimizer::Rollout& rollout, double weight,
                             Eigen::Ref<Eigen::VectorXd> out) const override;
  const Eigen::VectorXd& parameters() const override { return theta_; }
  void set_parameters(const Eigen::VectorXd& theta) override;
  std::unique_ptr<optimizer::Policy> clone() const override;

 private:
  struct Filler {
    std::string text;
    std::vector<std::size_t> ends;  // ends[i]: byte end of token i
  };

  std::vector<TaskClass> classes_;
  Eigen::VectorXd theta_;
  std::size_t max_tokens_;
  std::shared_ptr<const Filler> filler_;
  std::unordered_map<std::string, std::size_t> assignment_;
};

/// Draws a length, a correctness outcome and the emitted text for one
/// rollout of class `cls` whose true answer is `true_answer`.
optimizer::Rollout sample_rollout(const SyntheticPolicy& policy, std::size_t cls,
                                  std::string_view true_answer,
                                  optimizer::Rng& rng);

/// (length - 1) * log(1 - q) + log q.
double log_prob(const SyntheticPolicy& policy, std::size_t cls,
                std::size_t length);
/// log P(length >= max_tokens) = (max_tokens - 1) * log(1 - q).
double truncated_log_prob(const SyntheticPolicy& policy, std::size_t cls);

/// (1 - q) - (length - 1) * q on the owning parameter, zero elsewhere.
Eigen::VectorXd log_prob_gradient(const SyntheticPolicy& policy,
                                  std::size_t cls, std::size_t length);
Eigen::VectorXd truncated_log_prob_gradient(const SyntheticPolicy& policy,
                                            std::size_t cls);

/// 1 / q, the mean of the untruncated geometric law.
double expected_length(const SyntheticPolicy& policy, std::size_t cls);

/// Mean emitted token count including the context limit and the minimum
/// answer block size.
double expected_token_count(const SyntheticPolicy& policy, std::size_t cls);

/// P(emitted tokens > threshold).
double token_survival(const SyntheticPolicy& policy, std::size_t cls,
                      double threshold);

/// Probability that a rollout is graded correct.
double expected_accuracy(const SyntheticPolicy& policy, std::size_t cls);

// --- corpus generation -----------------------------------------------------

inline constexpr std::string_view kDefaultPromptTemplate =
    "{question}\nLet's think step by step and output the final answer "
    "within \\boxed{}.";

struct GeneratorConfig {
  std::uint64_t seed = 0;
  // Probe stop rate per class is 1 / (probe_scale * tau).
  double probe_scale = 3.0;
  std::string prompt_template = std::string(kDefaultPromptTemplate);
};

struct SyntheticCorpus {
  std::vector<TaskExample> tasks;
  std::vector<difficulty::ProbeResponse> probes;
  std::vector<std::size_t> class_of;  // parallel to tasks
};

SyntheticCorpus generate_corpus(std::span<const TaskClass> classes,
                                const GeneratorConfig& cfg,
                                std::size_t max_tokens = 2000);

/// Fills `{question}` in `prompt_template`.
std::string apply_prompt(std::string_view prompt_template,
                         std::string_view question);

// --- end-to-end lab --------------------------------------------------------

struct LabConfig {
  std::vector<TaskClass> classes;
  difficulty::DifficultyConfig difficulty;
  reward::RewardConfig reward;
  optimizer::OptimizerConfig optimizer;
  GeneratorConfig generator;
  std::size_t max_tokens = 2000;
  double init_mean_length = 600.0;  // initial 1/q for every class
};

struct ClassSummary {
  std::string class_id;
  std::size_t n_examples = 0;
  double mean_difficulty = 0.0;
  double initial_expected_tokens = 0.0;
  double final_expected_tokens = 0.0;
  double final_expected_accuracy = 0.0;
};

struct LabResult {
  SyntheticCorpus corpus;
  difficulty::AnnotatedDataset dataset;
  optimizer::TrainingTrace trace;
  std::vector<ClassSummary> classes;
};

/// Two classes (easy tau=5, hard tau=200, cap 0.95) sized and tuned so a
/// 60-step run settles near the reward-optimal lengths.
LabConfig default_lab_config();

/// Policy over `cfg.classes` at `theta` with the corpus's class assignment.
SyntheticPolicy make_policy(const LabConfig& cfg, const SyntheticCorpus& corpus,
                            const Eigen::VectorXd& theta);

LabResult run_lab(const LabConfig& cfg);

/// Mean of the per-step parameters over the last `window` steps; a
/// low-noise estimate of where a stochastic run has settled.
Eigen::VectorXd tail_average_parameters(const optimizer::TrainingTrace& trace,
                                        std::size_t window);

}  // namespace dipo::synthlab
