#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "dipo/reward.hpp"
#include "dipo/service.hpp"

using namespace dipo;
using namespace dipo::evalio;
using nlohmann::json;

TEST_CASE("request kinds") {
  ScoringService svc(Config{});
  auto r = svc.handle(json{{"id", 1}, {"kind", "hello"}});
  CHECK(r["protocol"] == kProtocolVersion);
  CHECK(r["config_digest"] == config_digest(Config{}));
  CHECK(r["id"] == 1);

  r = svc.handle(json{{"id", "a"}, {"kind", "score"}, {"output_text", "x \\boxed{1}"},
                      {"reference", "1"}, {"difficulty", 1.0}, {"tokens", 9000}});
  CHECK(r["id"] == "a");
  CHECK(r["branch"] == "correct");
  CHECK(r["reward"].get<double>() ==
        reward::score_rollout("x \\boxed{1}", "1", 1.0, reward::RewardConfig{}, 9000).reward);
  CHECK(r["delta"] == 0);
  CHECK(r["extracted"] == "1");
  CHECK(r["token_count"] == 9000);

  r = svc.handle(json{{"kind", "score"}, {"output_text", "none"}, {"reference", "1"}, {"difficulty", 0.3}});
  CHECK(r["reward"] == -1.0);
  CHECK(r["extracted"].is_null());
  CHECK_FALSE(r.contains("id"));

  r = svc.handle(json{{"id", 2}, {"kind", "difficulty"}, {"token_count", 4}, {"delta", 0}});
  CHECK(r.contains("error"));
  CHECK(r["id"] == 2);
  r = svc.handle(json{{"id", 3}, {"kind", "fit_stats"}, {"token_counts", {4, 16}}});
  CHECK(r["mu"] == 3.0);
  CHECK(r["sigma"] == 1.0);
  r = svc.handle(json{{"id", 4}, {"kind", "difficulty"}, {"token_count", 4}, {"delta", 0}});
  CHECK(r["difficulty"].get<double>() == doctest::Approx(0.2).epsilon(1e-15));
  r = svc.handle(json{{"id", 5}, {"kind", "difficulty"}, {"token_count", 16}, {"delta", 1}});
  CHECK(r["difficulty"].get<double>() == doctest::Approx(1.1).epsilon(1e-15));
}

TEST_CASE("malformed requests do not stop the stream") {
  ScoringService svc(Config{});
  std::istringstream in(
      "not json\n"
      "[1,2]\n"
      "{\"id\":7,\"kind\":\"nope\"}\n"
      "{\"id\":8,\"kind\":\"score\",\"reference\":\"1\"}\n"
      "{\"id\":9,\"kind\":\"fit_stats\",\"token_counts\":[9,9]}\n"
      "{\"id\":10,\"kind\":\"hello\"}\n");
  std::ostringstream out;
  svc.serve_stream(in, out);
  std::istringstream lines(out.str());
  std::vector<json> rs;
  for (std::string l; std::getline(lines, l);) rs.push_back(json::parse(l));
  REQUIRE(rs.size() == 6);
  for (int i = 0; i < 5; ++i) CHECK(rs[static_cast<std::size_t>(i)].contains("error"));
  CHECK(rs[2]["id"] == 7);
  CHECK(rs[3]["id"] == 8);
  CHECK(rs[5]["protocol"] == kProtocolVersion);
}

TEST_CASE("unix socket with concurrent clients") {
  const auto path = (std::filesystem::temp_directory_path() /
                     ("dipo_test_" + std::to_string(::getpid()) + ".sock")).string();
  ScoringService svc(Config{});
  std::thread server([&] { svc.serve_unix_socket(path); });

  auto connect_client = [&] {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
      sockaddr_un addr{};
      addr.sun_family = AF_UNIX;
      std::strncpy(addr.sun_path, path.c_str(), sizeof(addr.sun_path) - 1);
      if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) return fd;
      ::close(fd);
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    return -1;
  };

  std::vector<std::thread> clients;
  std::vector<int> ok(8, 0);
  for (int c = 0; c < 8; ++c) {
    clients.emplace_back([&, c] {
      const int fd = connect_client();
      if (fd < 0) return;
      std::string batch;
      for (int i = 0; i < 16; ++i) {
        batch += json{{"id", c * 100 + i}, {"kind", "score"}, {"output_text", "\\boxed{" + std::to_string(i) + "}"},
                      {"reference", "3"}, {"difficulty", 1.0}}
                     .dump() + "\n";
      }
      ::send(fd, batch.data(), batch.size(), 0);
      std::string got;
      char buf[4096];
      while (std::count(got.begin(), got.end(), '\n') < 16) {
        const auto n = ::recv(fd, buf, sizeof buf, 0);
        if (n <= 0) break;
        got.append(buf, static_cast<std::size_t>(n));
      }
      ::close(fd);
      std::istringstream lines(got);
      int i = 0;
      for (std::string l; std::getline(lines, l); ++i) {
        const auto r = json::parse(l);
        if (r["id"] == c * 100 + i && r["branch"] == (i == 3 ? "correct" : "wrong")) ++ok[static_cast<std::size_t>(c)];
      }
    });
  }
  for (auto& t : clients) t.join();
  svc.stop();
  server.join();
  for (int v : ok) CHECK(v == 16);
  CHECK_FALSE(std::filesystem::exists(path));
}
