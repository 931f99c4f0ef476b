#include <sstream>

#include "doctest.h"
#include "dipo/config.hpp"
#include "dipo/error.hpp"
#include "dipo/io.hpp"

using namespace dipo;
using namespace dipo::evalio;
using nlohmann::json;

TEST_CASE("jsonl round trip and errors") {
  std::istringstream in("{\"a\":1}\n\n{\"b\":[1,2]}\n");
  const auto rows = read_jsonl(in, "mem");
  REQUIRE(rows.size() == 2);
  std::ostringstream out;
  write_jsonl(out, rows);
  CHECK(out.str() == "{\"a\":1}\n{\"b\":[1,2]}\n");
  std::istringstream bad("{\"a\":1}\n{oops\n");
  try {
    read_jsonl(bad, "mem");
    FAIL("expected parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("mem:2") != std::string::npos);
  }
  CHECK_THROWS_AS(read_jsonl("/nonexistent/file.jsonl"), InputError);
}

TEST_CASE("tasks keep unknown fields") {
  const json j = {{"id", "t1"}, {"question", "q"}, {"answer", "4"}, {"source", "x"}, {"meta", {{"k", 1}}}};
  const auto t = task_from_json(j);
  CHECK(t.extra["source"] == "x");
  CHECK(to_json(t) == j);
  CHECK_THROWS_AS(task_from_json(json{{"id", "t"}}), ParseError);
}

TEST_CASE("probes") {
  const auto p = probe_from_json(json{{"id", "t"}, {"text", "a b \\boxed{1}"}}, TokenizerMode::whitespace_punct);
  CHECK(p.probe.token_count == 7);
  CHECK_FALSE(p.has_delta);
  const auto q = probe_from_json(json{{"id", "t"}, {"tokens", 30}, {"delta", 0}}, TokenizerMode::precomputed);
  CHECK(q.probe.token_count == 30);
  CHECK(q.has_delta);
  CHECK(q.probe.delta == 0);
  CHECK_THROWS_AS(probe_from_json(json{{"id", "t"}, {"text", "x"}}, TokenizerMode::precomputed), ParseError);
  CHECK_THROWS_AS(probe_from_json(json{{"id", "t"}, {"tokens", 3}, {"delta", 2}}, TokenizerMode::whitespace_punct), ParseError);
}

TEST_CASE("annotated records and stats sidecar") {
  difficulty::AnnotatedExample a;
  a.example = {"t", "q", "4", json{{"tag", "z"}}};
  a.difficulty = 0.7;
  a.probe_tokens = 12;
  a.probe_delta = 0;
  const auto j = to_json(a);
  for (const char* k : {"id", "question", "answer", "difficulty", "probe_tokens", "probe_delta", "tag"}) {
    CHECK(j.contains(k));
  }
  const auto back = annotated_from_json(j);
  CHECK(back.difficulty == 0.7);
  CHECK(back.example.extra["tag"] == "z");

  difficulty::DifficultyConfig cfg;
  cfg.clipping_enabled = false;
  const auto s = stats_to_json({3.5, 1.25, 10}, cfg);
  for (const char* k : {"mu", "sigma", "n", "alpha", "xi", "flags"}) CHECK(s.contains(k));
  const auto side = stats_from_json(s);
  CHECK(side.stats.mu == 3.5);
  CHECK(side.stats.sigma == 1.25);
  CHECK_FALSE(side.config.clipping_enabled);
}

TEST_CASE("eval records derive missing fields") {
  const auto r = eval_record_from_json(json{{"id", "e"}, {"response", "so \\boxed{7} ok"}, {"reference", "7"}},
                                       TokenizerMode::whitespace_punct);
  CHECK(r.token_count == 7);
  CHECK(r.delta == 0);
  CHECK(r.first_correct_index == std::optional<std::size_t>(5));
  const auto given = eval_record_from_json(
      json{{"id", "e"}, {"text", "x"}, {"answer", "7"}, {"tokens", 40}, {"delta", 1}, {"difficulty", 1.2}},
      TokenizerMode::precomputed);
  CHECK(given.token_count == 40);
  CHECK(given.delta == 1);
  CHECK(*given.difficulty == 1.2);
  CHECK_THROWS_AS(eval_record_from_json(json{{"id", "e"}, {"text", "x"}, {"tokens", 2}, {"delta", 1}, {"first_correct_index", 2}},
                                        TokenizerMode::whitespace_punct),
                  ParseError);
  CHECK_THROWS_AS(eval_record_from_json(json{{"id", "e"}, {"text", "x"}}, TokenizerMode::whitespace_punct),
                  ParseError);
}

TEST_CASE("trace and checkpoint") {
  optimizer::TrainingTrace trace;
  optimizer::StepRecord s;
  s.step = 0;
  s.mean_reward = 0.5;
  s.parameters = Eigen::VectorXd::Zero(1);
  trace.steps.push_back(s);
  std::ostringstream out;
  write_trace(out, trace);
  const auto row = json::parse(out.str());
  for (const char* k : {"step", "mean_reward", "mean_len", "acc", "loss", "kl"}) CHECK(row.contains(k));

  Eigen::VectorXd theta(3);
  theta << -6.385920948575583, 0.1, 1e-300;
  std::ostringstream ck;
  write_checkpoint(ck, theta, 60, 7);
  std::istringstream in(ck.str());
  const auto c = read_checkpoint(in);
  CHECK(c.parameters == theta);
  CHECK(c.step == 60);
  CHECK(c.seed == 7);
  std::istringstream shortck("{\"param_count\":2,\"step\":0,\"seed\":0}\n1.0\n");
  CHECK_THROWS_AS(read_checkpoint(shortck), ParseError);
}

TEST_CASE("config sections") {
  const auto cfg = config_from_json(json::parse(R"({
    "difficulty": {"alpha": 0.2, "flags": {"clipping": false}},
    "reward": {"c": 4000},
    "optimizer": {"beta": 0.5, "sample_source": "frozen_reference", "seed": 9},
    "tokenizer": {"mode": "precomputed"},
    "prompt_template": "{question} go"
  })"));
  CHECK(cfg.difficulty.alpha == 0.2);
  CHECK_FALSE(cfg.difficulty.clipping_enabled);
  CHECK(cfg.reward.c == 4000);
  CHECK(cfg.optimizer.sample_source == optimizer::SampleSource::frozen_reference);
  CHECK(cfg.tokenizer == TokenizerMode::precomputed);
  CHECK(config_from_json(to_json(cfg)).reward.c == 4000);
  CHECK(config_digest(cfg) == config_digest(config_from_json(to_json(cfg))));
  CHECK(config_digest(cfg) != config_digest(Config{}));
  CHECK(config_digest(Config{}).size() == 16);
  CHECK(Config{}.prompt_template.find("think step by step") != std::string::npos);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"reward": {"cc": 1}})")), ParseError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"reward": {"c": "x"}})")), ParseError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"reward": {"c": -1}})")), InputError);
  const auto lab = lab_config(cfg);
  CHECK(lab.optimizer.seed == 9);
  CHECK(lab.generator.seed == 9);
  CHECK(lab.classes.size() == 2);
}
