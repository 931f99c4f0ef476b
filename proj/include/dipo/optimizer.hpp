#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dipo/difficulty.hpp"
#include "dipo/error.hpp"
#include "dipo/reward.hpp"

namespace dipo::optimizer {

using Rng = std::mt19937_64;

/// Independent stream seed for (seed, a, b) via splitmix64 mixing.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a,
                          std::uint64_t b = 0);

struct Rollout {
  std::string text;
  std::size_t token_count = 0;  // under the tokenizer contract
  std::size_t length = 0;       // policy-side sequence length
  bool truncated = false;       // cut at the context limit
};

/// Sequence-level policy: samples whole rollouts and exposes
/// log pi(rollout | question) with its parameter gradient.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual Rollout sample(const TaskExample& task, Rng& rng) const = 0;
  virtual double log_prob(const TaskExample& task,
                          const Rollout& rollout) const = 0;
  virtual Eigen::VectorXd log_prob_gradient(const TaskExample& task,
                                            const Rollout& rollout) const = 0;

  /// out += weight * grad log pi. Override when gradients are sparse.
  virtual void add_log_prob_gradient(const TaskExample& task,
                                     const Rollout& rollout, double weight,
                                     Eigen::Ref<Eigen::VectorXd> out) const {
    out += weight * log_prob_gradient(task, rollout);
  }

  virtual const Eigen::VectorXd& parameters() const = 0;
  virtual void set_parameters(const Eigen::VectorXd& theta) = 0;
  virtual std::unique_ptr<Policy> clone() const = 0;

  Eigen::Index parameter_count() const { return parameters().size(); }
};

enum class SampleSource { current_policy, frozen_reference };

SampleSource parse_sample_source(std::string_view name);
std::string_view to_string(SampleSource source);

struct OptimizerConfig {
  double beta = 1.0;              // weight sharpness
  std::size_t group_size = 16;    // K
  double learning_rate = 3e-7;
  std::size_t steps = 60;
  std::size_t batch_size = 64;
  SampleSource sample_source = SampleSource::current_policy;
  std::uint64_t seed = 0;
  unsigned threads = 1;  // worker threads for sampling and scoring

  void validate() const;
};

struct RolloutGroup {
  const difficulty::AnnotatedExample* example = nullptr;
  std::vector<Rollout> rollouts;
  std::vector<reward::ScoredRollout> scored;
  double baseline = 0.0;
  Eigen::VectorXd weights;

  Eigen::VectorXd rewards() const;
};

struct StepRecord {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double mean_len = 0.0;
  double acc = 0.0;
  double loss = 0.0;
  double kl = 0.0;  // sample estimate of KL(current || reference), diagnostic
  Eigen::VectorXd parameters;  // after this step's update
};

struct TrainingTrace {
  std::vector<StepRecord> steps;
  Eigen::VectorXd initial_parameters;
  Eigen::VectorXd final_parameters;
};

/// Arithmetic mean of a group's rewards.
template <typename Derived>
typename Derived::Scalar group_baseline(const Eigen::DenseBase<Derived>& rewards) {
  if (rewards.size() == 0) {
    throw InputError("group_baseline: empty reward group");
  }
  return rewards.derived().array().mean();
}

/// Softmax of beta * (r - b) over one group, b the group mean. Any shift
/// cancels, so this evaluates beta * (r - max r): no overflow, and adding
/// a constant to every reward leaves the result bit-identical whenever the
/// shifted rewards are representable.
template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, 1> importance_weights(
    const Eigen::DenseBase<Derived>& rewards, typename Derived::Scalar beta) {
  using Scalar = typename Derived::Scalar;
  if (rewards.size() == 0) {
    throw InputError("importance_weights: empty reward group");
  }
  if (!(beta > Scalar(0))) {
    throw InputError("importance_weights: beta must be > 0");
  }
  const auto& r = rewards.derived().array();
  if (!r.isFinite().all()) {
    throw NonFiniteError("importance_weights: non-finite reward");
  }
  Eigen::Array<Scalar, Eigen::Dynamic, 1> z = (beta * (r - r.maxCoeff())).exp();
  return z / z.sum();
}

/// -sum_i sum_k w_ik * log_probs[i](k); weights are taken as constants.
double grpo_loss(std::span<const RolloutGroup> groups,
                 std::span<const Eigen::VectorXd> log_probs);

/// Current log pi for every rollout of every group.
std::vector<Eigen::VectorXd> group_log_probs(const Policy& policy,
                                             std::span<const RolloutGroup> groups);

/// Gradient of grpo_loss with respect to the policy parameters.
Eigen::VectorXd loss_gradient(const Policy& policy,
                              std::span<const RolloutGroup> groups);

/// theta - learning_rate * grad L. The policy itself is not modified.
Eigen::VectorXd gradient_step(const Policy& policy,
                              std::span<const RolloutGroup> groups,
                              const OptimizerConfig& cfg);

/// Samples K rollouts from `sampler`, scores them and fills baseline and
/// weights.
RolloutGroup make_group(const Policy& sampler,
                        const difficulty::AnnotatedExample& example,
                        const reward::RewardConfig& reward_cfg,
                        const OptimizerConfig& cfg, Rng& rng);

/// The full training loop: per step a batch in dataset order, K rollouts
/// per example, rewards, weights and one parameter update. Deterministic
/// for a given seed regardless of `threads`.
TrainingTrace train(Policy& policy,
                    std::span<const difficulty::AnnotatedExample> dataset,
                    const reward::RewardConfig& reward_cfg,
                    const OptimizerConfig& cfg);

}  // namespace dipo::optimizer
