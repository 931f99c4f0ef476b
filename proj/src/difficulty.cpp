#include "dipo/difficulty.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace dipo::difficulty {

void DifficultyConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw InputError("difficulty.alpha must be a finite value >= 0");
  }
  if (!(xi > 0.0 && xi <= 1.0)) {
    throw InputError("difficulty.xi must lie in (0, 1]");
  }
}

double smooth_length(std::size_t token_count, const DifficultyConfig& cfg) {
  const auto length = static_cast<double>(token_count);
  return cfg.smoothing_enabled ? std::sqrt(length) : length;
}

DifficultyStats fit_stats(std::span<const std::size_t> token_counts,
                          const DifficultyConfig& cfg) {
  if (token_counts.size() < 2) {
    throw DegenerateDistributionError(
        "fit_stats needs at least 2 probes, got " +
        std::to_string(token_counts.size()));
  }
  Eigen::ArrayXd smoothed(static_cast<Eigen::Index>(token_counts.size()));
  for (std::size_t i = 0; i < token_counts.size(); ++i) {
    smoothed(static_cast<Eigen::Index>(i)) = smooth_length(token_counts[i], cfg);
  }
  const double mu = smoothed.mean();
  const double sigma = std::sqrt((smoothed - mu).square().mean());
  if (!(sigma >= 1e-12)) {
    throw DegenerateDistributionError(
        "fit_stats: smoothed probe lengths have zero spread");
  }
  return {mu, sigma, token_counts.size()};
}

DifficultyStats fit_stats(std::span<const ProbeResponse> probes,
                          const DifficultyConfig& cfg) {
  std::vector<std::size_t> counts;
  counts.reserve(probes.size());
  for (const auto& p : probes) counts.push_back(p.token_count);
  return fit_stats(std::span<const std::size_t>(counts), cfg);
}

double difficulty_score(std::size_t token_count, int delta,
                        const DifficultyStats& stats,
                        const DifficultyConfig& cfg) {
  double z = (smooth_length(token_count, cfg) - stats.mu) / stats.sigma;
  if (cfg.error_penalty_enabled) z += cfg.alpha * delta;
  return z;
}

double clip_difficulty(double z, const DifficultyConfig& cfg) {
  if (!cfg.clipping_enabled) return z;
  return std::clamp(z, 1.0 - cfg.xi, 1.0 + cfg.xi);
}

double annotate(std::size_t token_count, int delta,
                const DifficultyStats& stats, const DifficultyConfig& cfg) {
  return clip_difficulty(difficulty_score(token_count, delta, stats, cfg), cfg);
}

AnnotatedDataset build_annotated_dataset(std::span<const TaskExample> tasks,
                                         std::span<const ProbeResponse> probes,
                                         const DifficultyConfig& cfg) {
  cfg.validate();
  std::unordered_map<std::string_view, const ProbeResponse*> by_id;
  std::unordered_map<std::string_view, int> probe_counts;
  for (const auto& p : probes) {
    by_id.emplace(p.example_id, &p);
    ++probe_counts[p.example_id];
  }
  std::vector<const ProbeResponse*> joined;
  joined.reserve(tasks.size());
  for (const auto& task : tasks) {
    const auto it = by_id.find(task.id);
    if (it == by_id.end()) {
      throw JoinError(task.id, "no probe response for example '" + task.id + "'");
    }
    if (probe_counts[task.id] > 1) {
      throw JoinError(task.id,
                      "duplicate probe responses for example '" + task.id + "'");
    }
    joined.push_back(it->second);
  }

  AnnotatedDataset out;
  out.stats = fit_stats(probes, cfg);
  out.examples.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const ProbeResponse& probe = *joined[i];
    out.examples.push_back(
        {tasks[i], annotate(probe.token_count, probe.delta, out.stats, cfg),
         probe.token_count, probe.delta});
  }
  return out;
}

}  // namespace dipo::difficulty
