#pragma once

#include <atomic>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "dipo/config.hpp"
#include "dipo/difficulty.hpp"
#include "json.hpp"

namespace dipo::evalio {

inline constexpr int kProtocolVersion = 1;

/// Reward fields for one rollout as the service and the `score` command
/// emit them: {reward, lambda, branch, extracted, delta, token_count}.
nlohmann::json score_fields(const Config& cfg, std::string_view output_text,
                            std::string_view reference, double difficulty,
                            std::optional<std::size_t> tokens);

/// Line-delimited request/response scoring service.
///
/// Requests carry an optional `id` echoed in the response and a `kind`:
///   hello       -> {protocol, config_digest, stats_loaded}
///   score       {output_text, reference, difficulty, tokens?}
///   fit_stats   {token_counts: [...]} -> {mu, sigma, n}; becomes the
///               loaded stats
///   difficulty  {token_count, delta} -> {difficulty}
/// Any failure yields {id?, error}; the service keeps running.
class ScoringService {
 public:
  explicit ScoringService(Config cfg,
                          std::optional<difficulty::DifficultyStats> stats = {});

  nlohmann::json handle(const nlohmann::json& request);
  std::string handle_line(std::string_view line);

  /// Answers each input line until end of stream.
  void serve_stream(std::istream& in, std::ostream& out);

  /// Listens on a unix domain socket, one thread per connection, until
  /// stop() is called. Removes a stale socket file first.
  void serve_unix_socket(const std::string& path);
  void stop() { stopping_ = true; }

  const std::string& digest() const { return digest_; }

 private:
  nlohmann::json dispatch(const nlohmann::json& request);

  Config cfg_;
  std::string digest_;
  std::mutex stats_mutex_;
  std::optional<difficulty::DifficultyStats> stats_;
  std::atomic<bool> stopping_{false};
};

}  // namespace dipo::evalio
