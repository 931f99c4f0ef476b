#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dipo/error.hpp"
#include "dipo/types.hpp"

namespace dipo::difficulty {

struct ProbeResponse {
  std::string example_id;
  std::string text;
  std::size_t token_count = 0;
  int delta = 1;
  nlohmann::json extra = nlohmann::json::object();
};

struct DifficultyConfig {
  double alpha = 0.1;  // error penalty coefficient
  double xi = 0.8;     // clip half-width around 1
  bool smoothing_enabled = true;
  bool clipping_enabled = true;
  bool error_penalty_enabled = true;

  void validate() const;
};

struct DifficultyStats {
  double mu = 0.0;
  double sigma = 1.0;
  std::size_t n = 0;
};

struct AnnotatedExample {
  TaskExample example;
  double difficulty = 1.0;
  std::size_t probe_tokens = 0;
  int probe_delta = 1;
};

struct AnnotatedDataset {
  std::vector<AnnotatedExample> examples;
  DifficultyStats stats;
};

/// sqrt(token_count), or the raw count with smoothing disabled.
double smooth_length(std::size_t token_count, const DifficultyConfig& cfg);

/// Mean and population deviation of the smoothed lengths.
/// Throws DegenerateDistributionError for fewer than two samples or a
/// deviation below 1e-12.
DifficultyStats fit_stats(std::span<const std::size_t> token_counts,
                          const DifficultyConfig& cfg);
DifficultyStats fit_stats(std::span<const ProbeResponse> probes,
                          const DifficultyConfig& cfg);

/// Standardized smoothed length plus alpha * delta.
double difficulty_score(std::size_t token_count, int delta,
                        const DifficultyStats& stats,
                        const DifficultyConfig& cfg);

double clip_difficulty(double z, const DifficultyConfig& cfg);

/// smooth -> standardize -> clip for one probe.
double annotate(std::size_t token_count, int delta,
                const DifficultyStats& stats, const DifficultyConfig& cfg);

/// Joins probes to tasks on example id, fits stats over all probes and maps
/// every task to its difficulty. Output order follows `tasks`.
AnnotatedDataset build_annotated_dataset(std::span<const TaskExample> tasks,
                                         std::span<const ProbeResponse> probes,
                                         const DifficultyConfig& cfg);

/// Fisher-Pearson skewness m3 / m2^(3/2) with population moments.
template <typename Derived>
typename Derived::Scalar skewness(const Eigen::DenseBase<Derived>& values) {
  using Scalar = typename Derived::Scalar;
  if (values.size() < 3) {
    throw DegenerateDistributionError("skewness needs at least 3 values");
  }
  const auto& x = values.derived().array();
  const Scalar mean = x.mean();
  const auto centered = (x - mean).eval();
  const Scalar m2 = centered.square().mean();
  const Scalar m3 = (centered.square() * centered).mean();
  using std::abs;
  using std::sqrt;
  if (!(m2 > Scalar(0)) || sqrt(m2) <= Scalar(1e-12) * (Scalar(1) + abs(mean))) {
    throw DegenerateDistributionError("skewness of a constant sample");
  }
  return m3 / (m2 * sqrt(m2));
}

}  // namespace dipo::difficulty
