#include "dipo/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

namespace dipo::optimizer {

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

SampleSource parse_sample_source(std::string_view name) {
  if (name == "current_policy") return SampleSource::current_policy;
  if (name == "frozen_reference") return SampleSource::frozen_reference;
  throw InputError("unknown sample_source '" + std::string(name) + "'");
}

std::string_view to_string(SampleSource source) {
  return source == SampleSource::frozen_reference ? "frozen_reference"
                                                  : "current_policy";
}

void OptimizerConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw InputError("optimizer.beta must be a finite value > 0");
  }
  if (group_size < 1) throw InputError("optimizer.group_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InputError("optimizer.learning_rate must be a finite value > 0");
  }
  if (batch_size < 1) throw InputError("optimizer.batch_size must be >= 1");
}

Eigen::VectorXd RolloutGroup::rewards() const {
  Eigen::VectorXd r(static_cast<Eigen::Index>(scored.size()));
  for (std::size_t k = 0; k < scored.size(); ++k) {
    r(static_cast<Eigen::Index>(k)) = scored[k].reward;
  }
  return r;
}

double grpo_loss(std::span<const RolloutGroup> groups,
                 std::span<const Eigen::VectorXd> log_probs) {
  if (groups.size() != log_probs.size()) {
    throw ShapeError("grpo_loss: " + std::to_string(groups.size()) +
                     " groups but " + std::to_string(log_probs.size()) +
                     " log-prob vectors");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].weights.size() != log_probs[i].size()) {
      throw ShapeError("grpo_loss: group " + std::to_string(i) + " has " +
                       std::to_string(groups[i].weights.size()) +
                       " weights but " + std::to_string(log_probs[i].size()) +
                       " log-probs");
    }
    loss -= groups[i].weights.dot(log_probs[i]);
  }
  return loss;
}

std::vector<Eigen::VectorXd> group_log_probs(const Policy& policy,
                                             std::span<const RolloutGroup> groups) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(groups.size());
  for (const auto& group : groups) {
    Eigen::VectorXd lp(static_cast<Eigen::Index>(group.rollouts.size()));
    for (std::size_t k = 0; k < group.rollouts.size(); ++k) {
      lp(static_cast<Eigen::Index>(k)) =
          policy.log_prob(group.example->example, group.rollouts[k]);
    }
    out.push_back(std::move(lp));
  }
  return out;
}

Eigen::VectorXd loss_gradient(const Policy& policy,
                              std::span<const RolloutGroup> groups) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(policy.parameter_count());
  Eigen::VectorXd group_grad(policy.parameter_count());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& group = groups[i];
    if (group.example == nullptr) {
      throw InputError("group " + std::to_string(i) + " has no example");
    }
    if (static_cast<std::size_t>(group.weights.size()) != group.rollouts.size()) {
      throw ShapeError("group " + std::to_string(i) +
                       ": weights and rollouts differ in length");
    }
    group_grad.setZero();
    for (std::size_t k = 0; k < group.rollouts.size(); ++k) {
      policy.add_log_prob_gradient(group.example->example, group.rollouts[k],
                                   -group.weights(static_cast<Eigen::Index>(k)),
                                   group_grad);
    }
    if (!group_grad.allFinite()) {
      throw NonFiniteError("non-finite gradient in group " + std::to_string(i));
    }
    grad += group_grad;
  }
  return grad;
}

Eigen::VectorXd gradient_step(const Policy& policy,
                              std::span<const RolloutGroup> groups,
                              const OptimizerConfig& cfg) {
  return policy.parameters() - cfg.learning_rate * loss_gradient(policy, groups);
}

RolloutGroup make_group(const Policy& sampler,
                        const difficulty::AnnotatedExample& example,
                        const reward::RewardConfig& reward_cfg,
                        const OptimizerConfig& cfg, Rng& rng) {
  RolloutGroup group;
  group.example = &example;
  group.rollouts.reserve(cfg.group_size);
  group.scored.reserve(cfg.group_size);
  for (std::size_t k = 0; k < cfg.group_size; ++k) {
    group.rollouts.push_back(sampler.sample(example.example, rng));
    const Rollout& rollout = group.rollouts.back();
    group.scored.push_back(reward::score_rollout(rollout.text,
                                                 example.example.answer,
                                                 example.difficulty, reward_cfg,
                                                 rollout.token_count));
  }
  const Eigen::VectorXd r = group.rewards();
  group.baseline = group_baseline(r);
  group.weights = importance_weights(r, cfg.beta).matrix();
  return group;
}

namespace {

// Batch slot j of step t visits dataset[(t * batch + j) % n].
std::vector<std::size_t> batch_indices(std::size_t step, std::size_t batch,
                                       std::size_t n) {
  std::vector<std::size_t> idx(batch);
  const std::size_t start = (step * batch) % n;
  for (std::size_t j = 0; j < batch; ++j) idx[j] = (start + j) % n;
  return idx;
}

template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (threads <= 1) {
    for (std::size_t j = 0; j < count; ++j) fn(j);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> workers;
  workers.reserve(threads);
  for (unsigned w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t j = w; j < count; j += threads) fn(j);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

TrainingTrace train(Policy& policy,
                    std::span<const difficulty::AnnotatedExample> dataset,
                    const reward::RewardConfig& reward_cfg,
                    const OptimizerConfig& cfg) {
  cfg.validate();
  reward_cfg.validate();
  if (dataset.empty()) throw InputError("train: dataset is empty");
  if (policy.parameter_count() < 1) {
    throw InputError("train: policy has no parameters");
  }

  TrainingTrace trace;
  trace.initial_parameters = policy.parameters();
  const std::unique_ptr<Policy> reference = policy.clone();
  const std::size_t batch = std::min(cfg.batch_size, dataset.size());

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Policy& sampler = cfg.sample_source == SampleSource::frozen_reference
                                ? *reference
                                : static_cast<const Policy&>(policy);
    const auto indices = batch_indices(step, batch, dataset.size());
    std::vector<RolloutGroup> groups(batch);
    try {
      parallel_for(batch, cfg.threads, [&](std::size_t j) {
        Rng rng(stream_seed(cfg.seed, step, j));
        groups[j] = make_group(sampler, dataset[indices[j]], reward_cfg, cfg, rng);
      });

      StepRecord record;
      record.step = step;
      std::size_t rollouts = 0;
      double reward_sum = 0.0;
      double len_sum = 0.0;
      double kl_sum = 0.0;
      std::size_t correct = 0;
      for (const auto& group : groups) {
        for (std::size_t k = 0; k < group.scored.size(); ++k) {
          const auto& s = group.scored[k];
          reward_sum += s.reward;
          len_sum += static_cast<double>(s.token_count);
          correct += s.branch == reward::Branch::correct ? 1 : 0;
          kl_sum += policy.log_prob(group.example->example, group.rollouts[k]) -
                    reference->log_prob(group.example->example, group.rollouts[k]);
          ++rollouts;
        }
      }
      const auto n = static_cast<double>(rollouts);
      record.mean_reward = reward_sum / n;
      record.mean_len = len_sum / n;
      record.acc = static_cast<double>(correct) / n;
      record.kl = kl_sum / n;
      const auto log_probs = group_log_probs(policy, groups);
      record.loss = grpo_loss(groups, log_probs);

      policy.set_parameters(gradient_step(policy, groups, cfg));
      record.parameters = policy.parameters();
      trace.steps.push_back(std::move(record));
    } catch (const Error& e) {
      throw Error("step " + std::to_string(step) + ": " + e.what());
    }
  }
  trace.final_parameters = policy.parameters();
  return trace;
}

}  // namespace dipo::optimizer
