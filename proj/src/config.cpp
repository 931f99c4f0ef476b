#include "dipo/config.hpp"

#include <cstdio>
#include <fstream>
#include <algorithm>

#include "dipo/error.hpp"

namespace dipo::evalio {

using nlohmann::json;

namespace {

void check_keys(const json& section, std::string_view name,
                std::initializer_list<std::string_view> allowed) {
  if (!section.is_object()) {
    throw ParseError("config: '" + std::string(name) + "' must be an object");
  }
  for (const auto& [key, _] : section.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ParseError("config: unknown key '" + std::string(name) + "." + key + "'");
    }
  }
}

template <typename T>
void read(const json& section, const char* key, T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

json class_to_json(const synthlab::TaskClass& c) {
  return {{"class_id", c.class_id}, {"tau", c.tau},           {"cap", c.cap},
          {"answers", c.answers},   {"n_examples", c.n_examples}};
}

synthlab::TaskClass class_from_json(const json& j) {
  check_keys(j, "synthlab.classes[]", {"class_id", "tau", "cap", "answers", "n_examples"});
  synthlab::TaskClass c;
  read(j, "class_id", c.class_id);
  read(j, "tau", c.tau);
  read(j, "cap", c.cap);
  read(j, "answers", c.answers);
  read(j, "n_examples", c.n_examples);
  return c;
}

}  // namespace

SynthSection Config::default_synth_section() {
  const auto lab = synthlab::default_lab_config();
  SynthSection s;
  s.classes = lab.classes;
  s.max_tokens = lab.max_tokens;
  s.init_mean_length = lab.init_mean_length;
  s.probe_scale = lab.generator.probe_scale;
  return s;
}

void Config::validate() const {
  difficulty.validate();
  reward.validate();
  optimizer.validate();
  if (!(grading.relative_tolerance >= 0.0)) {
    throw InputError("grading.relative_tolerance must be >= 0");
  }
  for (const auto& c : synthlab.classes) c.validate();
}

Config config_from_json(const json& doc) {
  check_keys(doc, "<root>",
             {"difficulty", "reward", "optimizer", "tokenizer", "grading",
              "prompt_template", "synthlab"});
  Config cfg;
  if (doc.contains("difficulty")) {
    const auto& d = doc["difficulty"];
    check_keys(d, "difficulty", {"alpha", "xi", "flags"});
    read(d, "alpha", cfg.difficulty.alpha);
    read(d, "xi", cfg.difficulty.xi);
    if (d.contains("flags")) {
      const auto& f = d["flags"];
      check_keys(f, "difficulty.flags", {"smoothing", "clipping", "error_penalty"});
      read(f, "smoothing", cfg.difficulty.smoothing_enabled);
      read(f, "clipping", cfg.difficulty.clipping_enabled);
      read(f, "error_penalty", cfg.difficulty.error_penalty_enabled);
    }
  }
  if (doc.contains("reward")) {
    const auto& r = doc["reward"];
    check_keys(r, "reward", {"s", "f", "p", "c", "epsilon", "phi", "length_penalty"});
    read(r, "s", cfg.reward.s);
    read(r, "f", cfg.reward.f);
    read(r, "p", cfg.reward.p);
    read(r, "c", cfg.reward.c);
    read(r, "epsilon", cfg.reward.epsilon);
    read(r, "phi", cfg.reward.phi);
    read(r, "length_penalty", cfg.reward.length_penalty_enabled);
  }
  if (doc.contains("optimizer")) {
    const auto& o = doc["optimizer"];
    check_keys(o, "optimizer",
               {"beta", "group_size", "learning_rate", "steps", "batch_size",
                "sample_source", "seed", "threads"});
    read(o, "beta", cfg.optimizer.beta);
    read(o, "group_size", cfg.optimizer.group_size);
    read(o, "learning_rate", cfg.optimizer.learning_rate);
    read(o, "steps", cfg.optimizer.steps);
    read(o, "batch_size", cfg.optimizer.batch_size);
    read(o, "seed", cfg.optimizer.seed);
    read(o, "threads", cfg.optimizer.threads);
    if (o.contains("sample_source")) {
      std::string name;
      read(o, "sample_source", name);
      cfg.optimizer.sample_source = optimizer::parse_sample_source(name);
    }
  }
  if (doc.contains("tokenizer")) {
    const auto& t = doc["tokenizer"];
    check_keys(t, "tokenizer", {"mode"});
    if (t.contains("mode")) {
      std::string name;
      read(t, "mode", name);
      cfg.tokenizer = parse_tokenizer_mode(name);
    }
  }
  if (doc.contains("grading")) {
    const auto& g = doc["grading"];
    check_keys(g, "grading", {"relative_tolerance"});
    read(g, "relative_tolerance", cfg.grading.relative_tolerance);
  }
  read(doc, "prompt_template", cfg.prompt_template);
  if (doc.contains("synthlab")) {
    const auto& s = doc["synthlab"];
    check_keys(s, "synthlab", {"classes", "max_tokens", "init_mean_length", "probe_scale"});
    read(s, "max_tokens", cfg.synthlab.max_tokens);
    read(s, "init_mean_length", cfg.synthlab.init_mean_length);
    read(s, "probe_scale", cfg.synthlab.probe_scale);
    if (s.contains("classes")) {
      if (!s["classes"].is_array()) throw ParseError("config: synthlab.classes must be an array");
      cfg.synthlab.classes.clear();
      for (const auto& c : s["classes"]) cfg.synthlab.classes.push_back(class_from_json(c));
    }
  }
  cfg.validate();
  return cfg;
}

json to_json(const Config& cfg) {
  json classes = json::array();
  for (const auto& c : cfg.synthlab.classes) classes.push_back(class_to_json(c));
  return {
      {"difficulty",
       {{"alpha", cfg.difficulty.alpha},
        {"xi", cfg.difficulty.xi},
        {"flags",
         {{"smoothing", cfg.difficulty.smoothing_enabled},
          {"clipping", cfg.difficulty.clipping_enabled},
          {"error_penalty", cfg.difficulty.error_penalty_enabled}}}}},
      {"reward",
       {{"s", cfg.reward.s},
        {"f", cfg.reward.f},
        {"p", cfg.reward.p},
        {"c", cfg.reward.c},
        {"epsilon", cfg.reward.epsilon},
        {"phi", cfg.reward.phi},
        {"length_penalty", cfg.reward.length_penalty_enabled}}},
      {"optimizer",
       {{"beta", cfg.optimizer.beta},
        {"group_size", cfg.optimizer.group_size},
        {"learning_rate", cfg.optimizer.learning_rate},
        {"steps", cfg.optimizer.steps},
        {"batch_size", cfg.optimizer.batch_size},
        {"sample_source", std::string(optimizer::to_string(cfg.optimizer.sample_source))},
        {"seed", cfg.optimizer.seed},
        {"threads", cfg.optimizer.threads}}},
      {"tokenizer", {{"mode", std::string(to_string(cfg.tokenizer))}}},
      {"grading", {{"relative_tolerance", cfg.grading.relative_tolerance}}},
      {"prompt_template", cfg.prompt_template},
      {"synthlab",
       {{"classes", classes},
        {"max_tokens", cfg.synthlab.max_tokens},
        {"init_mean_length", cfg.synthlab.init_mean_length},
        {"probe_scale", cfg.synthlab.probe_scale}}},
  };
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("config '" + path + "': " + e.what());
  }
  return config_from_json(doc);
}

std::string config_digest(const Config& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(cfg).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

synthlab::LabConfig lab_config(const Config& cfg) {
  synthlab::LabConfig lab;
  lab.classes = cfg.synthlab.classes;
  lab.difficulty = cfg.difficulty;
  lab.reward = cfg.reward;
  lab.optimizer = cfg.optimizer;
  lab.generator.seed = cfg.optimizer.seed;
  lab.generator.probe_scale = cfg.synthlab.probe_scale;
  lab.generator.prompt_template = cfg.prompt_template;
  lab.max_tokens = cfg.synthlab.max_tokens;
  lab.init_mean_length = cfg.synthlab.init_mean_length;
  return lab;
}

}  // namespace dipo::evalio
