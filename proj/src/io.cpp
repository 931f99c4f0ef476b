#include "dipo/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dipo/error.hpp"
#include "dipo/grading.hpp"

namespace dipo::evalio {

using nlohmann::json;

namespace {

const json& field(const json& j, const char* key, const char* what) {
  if (!j.is_object() || !j.contains(key)) {
    throw ParseError(std::string(what) + ": missing field '" + key + "'");
  }
  return j.at(key);
}

template <typename T>
T get(const json& j, const char* key, const char* what) {
  try {
    return field(j, key, what).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(std::string(what) + ": bad field '" + key + "': " + e.what());
  }
}

template <typename T>
std::optional<T> get_optional(const json& j, const char* key, const char* what) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return get<T>(j, key, what);
}

json leftover(const json& j, std::initializer_list<const char*> known) {
  json extra = json::object();
  for (const auto& [key, value] : j.items()) {
    bool seen = false;
    for (const char* k : known) seen = seen || key == k;
    if (!seen) extra[key] = value;
  }
  return extra;
}

void merge_extra(json& out, const json& extra) {
  for (const auto& [key, value] : extra.items()) {
    if (!out.contains(key)) out[key] = value;
  }
}

int read_delta(const json& j, const char* what) {
  const int d = get<int>(j, "delta", what);
  if (d != 0 && d != 1) throw ParseError(std::string(what) + ": delta must be 0 or 1");
  return d;
}

std::size_t count_or_read(const json& j, std::string_view text, TokenizerMode mode,
                          const char* what) {
  if (auto tokens = get_optional<std::size_t>(j, "tokens", what)) return *tokens;
  if (mode == TokenizerMode::precomputed) {
    throw ParseError(std::string(what) + ": precomputed tokenizer mode needs 'tokens'");
  }
  return count_tokens(text);
}

}  // namespace

std::vector<json> read_jsonl(std::istream& in, const std::string& source) {
  std::vector<json> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(source + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return read_jsonl(in, path);
}

void write_jsonl(std::ostream& out, const std::vector<json>& records) {
  for (const auto& r : records) out << r.dump() << '\n';
}

void write_jsonl(const std::string& path, const std::vector<json>& records) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  write_jsonl(out, records);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

TaskExample task_from_json(const json& j) {
  TaskExample t;
  t.id = get<std::string>(j, "id", "task");
  t.question = get<std::string>(j, "question", "task");
  t.answer = get<std::string>(j, "answer", "task");
  t.extra = leftover(j, {"id", "question", "answer"});
  return t;
}

json to_json(const TaskExample& task) {
  json j = {{"id", task.id}, {"question", task.question}, {"answer", task.answer}};
  merge_extra(j, task.extra);
  return j;
}

ProbeRecord probe_from_json(const json& j, TokenizerMode mode) {
  ProbeRecord r;
  r.probe.example_id = get<std::string>(j, "id", "probe");
  r.probe.text = get_optional<std::string>(j, "text", "probe").value_or("");
  r.probe.token_count = count_or_read(j, r.probe.text, mode, "probe");
  if (j.contains("delta") && !j["delta"].is_null()) {
    r.probe.delta = read_delta(j, "probe");
    r.has_delta = true;
  }
  r.probe.extra = leftover(j, {"id", "text", "tokens", "delta"});
  return r;
}

json to_json(const difficulty::ProbeResponse& probe) {
  json j = {{"id", probe.example_id},
            {"text", probe.text},
            {"tokens", probe.token_count},
            {"delta", probe.delta}};
  merge_extra(j, probe.extra);
  return j;
}

json to_json(const difficulty::AnnotatedExample& example) {
  json j = {{"id", example.example.id},
            {"question", example.example.question},
            {"answer", example.example.answer},
            {"difficulty", example.difficulty},
            {"probe_tokens", example.probe_tokens},
            {"probe_delta", example.probe_delta}};
  merge_extra(j, example.example.extra);
  return j;
}

difficulty::AnnotatedExample annotated_from_json(const json& j) {
  difficulty::AnnotatedExample a;
  a.example.id = get<std::string>(j, "id", "annotated record");
  a.example.question = get<std::string>(j, "question", "annotated record");
  a.example.answer = get<std::string>(j, "answer", "annotated record");
  a.difficulty = get<double>(j, "difficulty", "annotated record");
  a.probe_tokens = get_optional<std::size_t>(j, "probe_tokens", "annotated record").value_or(0);
  a.probe_delta = get_optional<int>(j, "probe_delta", "annotated record").value_or(1);
  a.example.extra = leftover(
      j, {"id", "question", "answer", "difficulty", "probe_tokens", "probe_delta"});
  return a;
}

json stats_to_json(const difficulty::DifficultyStats& stats,
                   const difficulty::DifficultyConfig& cfg) {
  return {{"mu", stats.mu},
          {"sigma", stats.sigma},
          {"n", stats.n},
          {"alpha", cfg.alpha},
          {"xi", cfg.xi},
          {"flags",
           {{"smoothing", cfg.smoothing_enabled},
            {"clipping", cfg.clipping_enabled},
            {"error_penalty", cfg.error_penalty_enabled}}}};
}

StatsSidecar stats_from_json(const json& j) {
  StatsSidecar s;
  s.stats.mu = get<double>(j, "mu", "stats");
  s.stats.sigma = get<double>(j, "sigma", "stats");
  s.stats.n = get<std::size_t>(j, "n", "stats");
  s.config.alpha = get<double>(j, "alpha", "stats");
  s.config.xi = get<double>(j, "xi", "stats");
  if (j.contains("flags")) {
    const auto& f = j["flags"];
    s.config.smoothing_enabled = get_optional<bool>(f, "smoothing", "stats").value_or(true);
    s.config.clipping_enabled = get_optional<bool>(f, "clipping", "stats").value_or(true);
    s.config.error_penalty_enabled =
        get_optional<bool>(f, "error_penalty", "stats").value_or(true);
  }
  if (!(s.stats.sigma > 0.0)) throw ParseError("stats: sigma must be > 0");
  s.config.validate();
  return s;
}

RolloutRecord rollout_from_json(const json& j) {
  RolloutRecord r;
  r.id = get<std::string>(j, "id", "rollout");
  r.output_text = get<std::string>(j, "output_text", "rollout");
  r.reference = get_optional<std::string>(j, "reference", "rollout");
  r.difficulty = get_optional<double>(j, "difficulty", "rollout");
  r.tokens = get_optional<std::size_t>(j, "tokens", "rollout");
  r.extra = leftover(j, {"id", "output_text", "reference", "difficulty", "tokens"});
  return r;
}

json to_json(const reward::ScoredRollout& scored) {
  return {{"reward", scored.reward},
          {"lambda", scored.lambda},
          {"branch", std::string(reward::to_string(scored.branch))},
          {"extracted", scored.extracted.found ? json(scored.extracted.raw) : json(nullptr)},
          {"delta", scored.delta},
          {"token_count", scored.token_count}};
}

EvalRecord eval_record_from_json(const json& j, TokenizerMode mode,
                                 const grading::GradeOptions& grading) {
  EvalRecord r;
  r.example_id = get<std::string>(j, "id", "eval record");
  const char* text_key = j.contains("response") ? "response" : "text";
  const char* ref_key = j.contains("reference") ? "reference" : "answer";
  r.response = get<std::string>(j, text_key, "eval record");
  r.reference = get_optional<std::string>(j, ref_key, "eval record").value_or("");
  r.token_count = count_or_read(j, r.response, mode, "eval record");
  r.difficulty = get_optional<double>(j, "difficulty", "eval record");
  if (j.contains("delta") && !j["delta"].is_null()) {
    r.delta = read_delta(j, "eval record");
  } else if (r.reference.empty()) {
    throw ParseError("eval record '" + r.example_id + "' needs a reference or a delta");
  } else {
    r.delta = grading::grade(r.response, r.reference, grading).delta;
  }
  if (j.contains("first_correct_index")) {
    r.first_correct_index = get_optional<std::size_t>(j, "first_correct_index", "eval record");
  } else if (mode == TokenizerMode::whitespace_punct && !r.reference.empty()) {
    r.first_correct_index =
        grading::first_correct_token_index(std::string_view(r.response), r.reference, grading);
  }
  if (r.first_correct_index && *r.first_correct_index >= r.token_count) {
    throw ParseError("eval record '" + r.example_id +
                     "': first_correct_index must be below token_count");
  }
  r.extra = leftover(j, {"id", "response", "text", "reference", "answer", "tokens",
                         "delta", "first_correct_index", "difficulty"});
  return r;
}

json to_json(const MetricsReport& report) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json tail = json::object();
  for (const auto& [t, p] : report.tail) tail[format_double(t)] = p;
  json j = {{"count", report.count}, {"acc", opt(report.acc)},
            {"len", opt(report.len)},    {"ratio", opt(report.ratio)},
            {"tail", tail}};
  if (report.near_cap) j["near_cap"] = *report.near_cap;
  if (report.think_fraction) j["think_fraction"] = *report.think_fraction;
  return j;
}

json to_json(const optimizer::StepRecord& record) {
  return {{"step", record.step},   {"mean_reward", record.mean_reward},
          {"mean_len", record.mean_len}, {"acc", record.acc},
          {"loss", record.loss},   {"kl", record.kl}};
}

void write_trace(std::ostream& out, const optimizer::TrainingTrace& trace) {
  for (const auto& s : trace.steps) out << to_json(s).dump() << '\n';
}

void write_checkpoint(std::ostream& out, const Eigen::VectorXd& theta,
                      std::size_t step, std::uint64_t seed) {
  out << json{{"param_count", theta.size()}, {"step", step}, {"seed", seed}}.dump() << '\n';
  for (Eigen::Index i = 0; i < theta.size(); ++i) out << format_double(theta(i)) << '\n';
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("checkpoint: missing header");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  Checkpoint c;
  const auto n = get<std::size_t>(header, "param_count", "checkpoint");
  c.step = get<std::size_t>(header, "step", "checkpoint");
  c.seed = get<std::uint64_t>(header, "seed", "checkpoint");
  c.parameters.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) {
      throw ParseError("checkpoint: expected " + std::to_string(n) + " values, got " +
                       std::to_string(i));
    }
    std::istringstream value(line);
    double v = 0.0;
    if (!(value >> v)) throw ParseError("checkpoint: bad value on line " + std::to_string(i + 2));
    c.parameters(static_cast<Eigen::Index>(i)) = v;
  }
  return c;
}

}  // namespace dipo::evalio
