#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace dipo::evalio {

struct EvalRecord {
  std::string example_id;
  std::string response;
  std::string reference;
  std::size_t token_count = 0;
  int delta = 1;
  std::optional<std::size_t> first_correct_index;
  std::optional<double> difficulty;
  nlohmann::json extra = nlohmann::json::object();
};

enum class RatioMode { savings, position };

RatioMode parse_ratio_mode(std::string_view name);
std::string_view to_string(RatioMode mode);

struct MetricsReport {
  std::size_t count = 0;
  // Absent only for an empty bucket.
  std::optional<double> acc;
  std::optional<double> len;
  std::optional<double> ratio;
  std::map<double, double> tail;  // threshold -> Pr[len > threshold]
  std::optional<double> near_cap;
  std::optional<double> think_fraction;
};

struct BucketReport {
  double lower = 0.0;
  double upper = 0.0;
  MetricsReport report;
};

struct ReportOptions {
  RatioMode ratio_mode = RatioMode::savings;
  std::vector<double> tail_thresholds;
  std::optional<double> context_cap;  // enables near_cap
  bool think_fraction = false;
};

double accuracy(std::span<const EvalRecord> records);
double mean_length(std::span<const EvalRecord> records);

/// Per record with first correct token k of n tokens: savings 1 - (k+1)/n,
/// position (k+1)/n. Records never correct give 0 (savings) or 1 (position).
double token_saving_ratio(std::span<const EvalRecord> records,
                          RatioMode mode = RatioMode::savings);

/// Fraction of lengths strictly above `threshold`.
double tail_probability(std::span<const double> lengths, double threshold);

/// Fraction of lengths at or above 0.95 * cap.
double near_cap_probability(std::span<const double> lengths, double cap);

/// Share of tokens inside the first <think>...</think> span; the tag tokens
/// count toward neither side.
double think_fraction(std::string_view text);

MetricsReport report(std::span<const EvalRecord> records,
                     const ReportOptions& options = {});

/// Half-open buckets [edges[i], edges[i+1]). Throws AssignmentError for a
/// record outside every bucket or without a difficulty.
std::vector<BucketReport> bucket_report(std::span<const EvalRecord> records,
                                        std::span<const double> edges,
                                        const ReportOptions& options = {});

}  // namespace dipo::evalio
