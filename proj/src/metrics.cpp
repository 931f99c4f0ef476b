#include "dipo/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "dipo/error.hpp"
#include "dipo/grading.hpp"
#include "dipo/tokenizer.hpp"

namespace dipo::evalio {

namespace {

void require_records(std::size_t n, std::string_view what) {
  if (n == 0) throw InputError(std::string(what) + ": no records");
}

std::vector<double> lengths_of(std::span<const EvalRecord> records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(static_cast<double>(r.token_count));
  return out;
}

// Position of the first token after `<`, `think`/`/think`, `>` starting at i.
std::size_t match_tag(const std::vector<std::string>& toks, std::size_t i,
                      bool closing) {
  if (i >= toks.size() || toks[i] != "<") return 0;
  std::size_t j = i + 1;
  if (closing) {
    if (j >= toks.size() || toks[j] != "/") return 0;
    ++j;
  }
  if (j + 1 >= toks.size() || toks[j] != "think" || toks[j + 1] != ">") return 0;
  return j + 2;
}

}  // namespace

RatioMode parse_ratio_mode(std::string_view name) {
  if (name == "savings") return RatioMode::savings;
  if (name == "position") return RatioMode::position;
  throw InputError("unknown ratio mode '" + std::string(name) + "'");
}

std::string_view to_string(RatioMode mode) {
  return mode == RatioMode::position ? "position" : "savings";
}

double accuracy(std::span<const EvalRecord> records) {
  require_records(records.size(), "accuracy");
  const auto correct = std::count_if(records.begin(), records.end(),
                                     [](const EvalRecord& r) { return r.delta == 0; });
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double mean_length(std::span<const EvalRecord> records) {
  require_records(records.size(), "mean_length");
  double sum = 0.0;
  for (const auto& r : records) sum += static_cast<double>(r.token_count);
  return sum / static_cast<double>(records.size());
}

double token_saving_ratio(std::span<const EvalRecord> records, RatioMode mode) {
  require_records(records.size(), "token_saving_ratio");
  double sum = 0.0;
  for (const auto& r : records) {
    if (!r.first_correct_index) {
      sum += mode == RatioMode::savings ? 0.0 : 1.0;
      continue;
    }
    if (*r.first_correct_index >= r.token_count) {
      throw InputError("record '" + r.example_id +
                       "': first_correct_index must be below token_count");
    }
    const double position = static_cast<double>(*r.first_correct_index + 1) /
                            static_cast<double>(r.token_count);
    sum += mode == RatioMode::savings ? 1.0 - position : position;
  }
  return sum / static_cast<double>(records.size());
}

double tail_probability(std::span<const double> lengths, double threshold) {
  require_records(lengths.size(), "tail_probability");
  const auto n = std::count_if(lengths.begin(), lengths.end(),
                               [&](double l) { return l > threshold; });
  return static_cast<double>(n) / static_cast<double>(lengths.size());
}

double near_cap_probability(std::span<const double> lengths, double cap) {
  require_records(lengths.size(), "near_cap_probability");
  const double bound = 0.95 * cap;
  const auto n = std::count_if(lengths.begin(), lengths.end(),
                               [&](double l) { return l >= bound; });
  return static_cast<double>(n) / static_cast<double>(lengths.size());
}

double think_fraction(std::string_view text) {
  const auto toks = token_strings(text);
  std::size_t open_end = 0;
  std::size_t open_begin = 0;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (const auto e = match_tag(toks, i, false)) {
      open_begin = i;
      open_end = e;
      break;
    }
  }
  if (open_end == 0) return 0.0;
  std::size_t inside_end = toks.size();
  std::size_t close_end = toks.size();
  for (std::size_t i = open_end; i < toks.size(); ++i) {
    if (const auto e = match_tag(toks, i, true)) {
      inside_end = i;
      close_end = e;
      break;
    }
  }
  const std::size_t tag_tokens = (open_end - open_begin) + (close_end - inside_end);
  const std::size_t total = toks.size() - tag_tokens;
  if (total == 0) return 0.0;
  return static_cast<double>(inside_end - open_end) / static_cast<double>(total);
}

MetricsReport report(std::span<const EvalRecord> records,
                     const ReportOptions& options) {
  MetricsReport out;
  out.count = records.size();
  if (records.empty()) return out;
  out.acc = accuracy(records);
  out.len = mean_length(records);
  out.ratio = token_saving_ratio(records, options.ratio_mode);
  const auto lengths = lengths_of(records);
  for (double t : options.tail_thresholds) out.tail[t] = tail_probability(lengths, t);
  if (options.context_cap) out.near_cap = near_cap_probability(lengths, *options.context_cap);
  if (options.think_fraction) {
    double sum = 0.0;
    for (const auto& r : records) sum += think_fraction(r.response);
    out.think_fraction = sum / static_cast<double>(records.size());
  }
  return out;
}

std::vector<BucketReport> bucket_report(std::span<const EvalRecord> records,
                                        std::span<const double> edges,
                                        const ReportOptions& options) {
  if (edges.size() < 2) throw InputError("bucket_report: need at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) {
      throw InputError("bucket_report: edges must be strictly increasing");
    }
  }
  std::vector<std::vector<EvalRecord>> members(edges.size() - 1);
  for (const auto& r : records) {
    if (!r.difficulty) {
      throw AssignmentError("record '" + r.example_id + "' has no difficulty");
    }
    const double d = *r.difficulty;
    const auto it = std::upper_bound(edges.begin(), edges.end(), d);
    if (it == edges.begin() || it == edges.end()) {
      throw AssignmentError("record '" + r.example_id + "' with difficulty " +
                            std::to_string(d) + " lies outside every bucket");
    }
    members[static_cast<std::size_t>(it - edges.begin()) - 1].push_back(r);
  }
  std::vector<BucketReport> out;
  for (std::size_t b = 0; b < members.size(); ++b) {
    out.push_back({edges[b], edges[b + 1], report(members[b], options)});
  }
  return out;
}

}  // namespace dipo::evalio
