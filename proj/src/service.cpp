#include "dipo/service.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <istream>
#include <ostream>
#include <thread>
#include <vector>

#include "dipo/error.hpp"
#include "dipo/io.hpp"
#include "dipo/reward.hpp"

namespace dipo::evalio {

using nlohmann::json;

namespace {

template <typename T>
T need(const json& request, const char* key) {
  if (!request.contains(key)) {
    throw InputError(std::string("missing field '") + key + "'");
  }
  try {
    return request.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError(std::string("bad value for '") + key + "'");
  }
}

bool write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

}  // namespace

json score_fields(const Config& cfg, std::string_view output_text,
                  std::string_view reference, double difficulty,
                  std::optional<std::size_t> tokens) {
  if (!tokens && cfg.tokenizer == TokenizerMode::precomputed) {
    throw InputError("precomputed tokenizer mode needs 'tokens'");
  }
  return to_json(reward::score_rollout(output_text, reference, difficulty,
                                       cfg.reward, tokens, cfg.grading));
}

ScoringService::ScoringService(Config cfg,
                               std::optional<difficulty::DifficultyStats> stats)
    : cfg_(std::move(cfg)), digest_(config_digest(cfg_)), stats_(stats) {
  cfg_.validate();
}

json ScoringService::dispatch(const json& request) {
  const auto kind = need<std::string>(request, "kind");
  if (kind == "hello") {
    std::lock_guard lock(stats_mutex_);
    return {{"protocol", kProtocolVersion},
            {"config_digest", digest_},
            {"stats_loaded", stats_.has_value()}};
  }
  if (kind == "score") {
    std::optional<std::size_t> tokens;
    if (request.contains("tokens") && !request["tokens"].is_null()) {
      tokens = need<std::size_t>(request, "tokens");
    }
    return score_fields(cfg_, need<std::string>(request, "output_text"),
                        need<std::string>(request, "reference"),
                        need<double>(request, "difficulty"), tokens);
  }
  if (kind == "fit_stats") {
    const auto counts = need<std::vector<std::size_t>>(request, "token_counts");
    const auto fitted = difficulty::fit_stats(counts, cfg_.difficulty);
    std::lock_guard lock(stats_mutex_);
    stats_ = fitted;
    return {{"mu", fitted.mu}, {"sigma", fitted.sigma}, {"n", fitted.n}};
  }
  if (kind == "difficulty") {
    const auto count = need<std::size_t>(request, "token_count");
    const auto delta = need<int>(request, "delta");
    if (delta != 0 && delta != 1) throw InputError("delta must be 0 or 1");
    std::optional<difficulty::DifficultyStats> stats;
    {
      std::lock_guard lock(stats_mutex_);
      stats = stats_;
    }
    if (!stats) throw InputError("no difficulty stats loaded");
    return {{"difficulty", difficulty::annotate(count, delta, *stats, cfg_.difficulty)}};
  }
  throw InputError("unknown request kind '" + kind + "'");
}

json ScoringService::handle(const json& request) {
  json response;
  try {
    if (!request.is_object()) throw InputError("request must be an object");
    response = dispatch(request);
  } catch (const std::exception& e) {
    response = {{"error", e.what()}};
  }
  if (request.is_object() && request.contains("id")) response["id"] = request["id"];
  return response;
}

std::string ScoringService::handle_line(std::string_view line) {
  json request;
  try {
    request = json::parse(line);
  } catch (const json::exception& e) {
    return json{{"error", std::string("malformed request: ") + e.what()}}.dump();
  }
  return handle(request).dump();
}

void ScoringService::serve_stream(std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out << handle_line(line) << '\n' << std::flush;
  }
}

void ScoringService::serve_unix_socket(const std::string& path) {
  sockaddr_un addr{};
  if (path.size() >= sizeof(addr.sun_path)) throw InputError("socket path too long: " + path);
  addr.sun_family = AF_UNIX;
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);

  const int listener = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (listener < 0) throw Error(std::string("socket: ") + std::strerror(errno));
  ::unlink(path.c_str());
  if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listener, 64) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listener);
    throw Error("cannot listen on '" + path + "': " + why);
  }

  std::vector<std::thread> workers;
  while (!stopping_) {
    pollfd pfd{listener, POLLIN, 0};
    if (::poll(&pfd, 1, 100) <= 0) continue;
    const int fd = ::accept(listener, nullptr, nullptr);
    if (fd < 0) continue;
    workers.emplace_back([this, fd] {
      std::string buffer;
      char chunk[4096];
      while (!stopping_) {
        pollfd cfd{fd, POLLIN, 0};
        if (::poll(&cfd, 1, 100) <= 0) continue;
        const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
        if (n <= 0) break;
        buffer.append(chunk, static_cast<std::size_t>(n));
        std::size_t start = 0;
        for (std::size_t nl; (nl = buffer.find('\n', start)) != std::string::npos;
             start = nl + 1) {
          const std::string_view line(buffer.data() + start, nl - start);
          if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
          if (!write_all(fd, handle_line(line) + "\n")) {
            ::close(fd);
            return;
          }
        }
        buffer.erase(0, start);
      }
      ::close(fd);
    });
  }
  for (auto& t : workers) t.join();
  ::close(listener);
  ::unlink(path.c_str());
}

}  // namespace dipo::evalio
