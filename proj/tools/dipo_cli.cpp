#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "dipo/config.hpp"
#include "dipo/difficulty.hpp"
#include "dipo/error.hpp"
#include "dipo/grading.hpp"
#include "dipo/io.hpp"
#include "dipo/metrics.hpp"
#include "dipo/service.hpp"
#include "dipo/synthlab.hpp"

using namespace dipo;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "-";
};

evalio::Config load(const Globals& g) {
  evalio::Config cfg = g.config_path.empty() ? evalio::Config{}
                                             : evalio::load_config(g.config_path);
  if (g.seed) cfg.optimizer.seed = *g.seed;
  return cfg;
}

// Runs `fn` with the --out stream (stdout for "-").
template <typename Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  fn(out);
}

std::string sidecar_path(const std::string& out) {
  return out == "-" ? "stats.json" : out + ".stats.json";
}

int run_annotate(const Globals& g, const std::string& tasks_path,
                 const std::string& probes_path, std::string stats_path) {
  const auto cfg = load(g);
  std::vector<TaskExample> tasks;
  std::unordered_map<std::string, std::string> answers;
  for (const auto& j : evalio::read_jsonl(tasks_path)) {
    tasks.push_back(evalio::task_from_json(j));
    answers[tasks.back().id] = tasks.back().answer;
  }
  std::vector<difficulty::ProbeResponse> probes;
  for (const auto& j : evalio::read_jsonl(probes_path)) {
    auto record = evalio::probe_from_json(j, cfg.tokenizer);
    if (!record.has_delta) {
      const auto it = answers.find(record.probe.example_id);
      if (it == answers.end()) {
        throw JoinError(record.probe.example_id,
                        "probe '" + record.probe.example_id + "' matches no task");
      }
      record.probe.delta = grading::grade(record.probe.text, it->second, cfg.grading).delta;
    }
    probes.push_back(std::move(record.probe));
  }
  const auto dataset = difficulty::build_annotated_dataset(tasks, probes, cfg.difficulty);
  with_output(g.out, [&](std::ostream& out) {
    for (const auto& e : dataset.examples) out << evalio::to_json(e).dump() << '\n';
  });
  if (stats_path.empty()) stats_path = sidecar_path(g.out);
  std::ofstream stats(stats_path);
  if (!stats) throw InputError("cannot write '" + stats_path + "'");
  stats << evalio::stats_to_json(dataset.stats, cfg.difficulty).dump() << '\n';
  return 0;
}

int run_score(const Globals& g, const std::string& dataset_path,
              const std::string& rollouts_path) {
  const auto cfg = load(g);
  std::unordered_map<std::string, difficulty::AnnotatedExample> by_id;
  if (!dataset_path.empty()) {
    for (const auto& j : evalio::read_jsonl(dataset_path)) {
      auto a = evalio::annotated_from_json(j);
      by_id[a.example.id] = std::move(a);
    }
  }
  std::vector<json> results;
  std::size_t line = 0;
  for (const auto& j : evalio::read_jsonl(rollouts_path)) {
    ++line;
    const auto r = evalio::rollout_from_json(j);
    const auto it = by_id.find(r.id);
    const std::optional<std::string> reference =
        r.reference ? r.reference
                    : (it != by_id.end() ? std::optional(it->second.example.answer)
                                         : std::nullopt);
    const std::optional<double> diff =
        r.difficulty ? r.difficulty
                     : (it != by_id.end() ? std::optional(it->second.difficulty)
                                          : std::nullopt);
    if (!reference || !diff) {
      throw JoinError(r.id, "rollout " + std::to_string(line) + " ('" + r.id +
                                "') has no reference or difficulty");
    }
    json out = {{"id", r.id}};
    out.update(evalio::score_fields(cfg, r.output_text, *reference, *diff, r.tokens));
    results.push_back(std::move(out));
  }
  with_output(g.out, [&](std::ostream& out) { evalio::write_jsonl(out, results); });
  return 0;
}

int run_simulate(const Globals& g, const std::string& checkpoint_path,
                 const std::string& summary_path) {
  const auto cfg = load(g);
  const auto lab = evalio::lab_config(cfg);
  const auto result = synthlab::run_lab(lab);
  with_output(g.out, [&](std::ostream& out) { evalio::write_trace(out, result.trace); });
  if (!checkpoint_path.empty()) {
    std::ofstream ck(checkpoint_path);
    if (!ck) throw InputError("cannot write '" + checkpoint_path + "'");
    evalio::write_checkpoint(ck, result.trace.final_parameters, result.trace.steps.size(),
                             cfg.optimizer.seed);
  }
  if (!summary_path.empty()) {
    json classes = json::array();
    for (const auto& c : result.classes) {
      classes.push_back({{"class_id", c.class_id},
                         {"n_examples", c.n_examples},
                         {"mean_difficulty", c.mean_difficulty},
                         {"initial_expected_tokens", c.initial_expected_tokens},
                         {"final_expected_tokens", c.final_expected_tokens},
                         {"final_expected_accuracy", c.final_expected_accuracy}});
    }
    std::ofstream s(summary_path);
    if (!s) throw InputError("cannot write '" + summary_path + "'");
    s << json{{"config_digest", evalio::config_digest(cfg)}, {"classes", classes}}.dump(2)
      << '\n';
  }
  return 0;
}

void table_row(std::ostream& out, const std::string& scope,
               const evalio::MetricsReport& r) {
  auto cell = [](const std::optional<double>& v) {
    return v ? evalio::format_double(*v) : std::string();
  };
  out << scope << '\t' << r.count << '\t' << cell(r.acc) << '\t' << cell(r.len) << '\t'
      << cell(r.ratio);
  for (const auto& [t, p] : r.tail) out << '\t' << evalio::format_double(p);
  out << '\n';
}

int run_eval(const Globals& g, const std::string& records_path,
             const evalio::ReportOptions& options, const std::vector<double>& edges,
             const std::string& table_path) {
  const auto cfg = load(g);
  std::vector<evalio::EvalRecord> records;
  for (const auto& j : evalio::read_jsonl(records_path)) {
    records.push_back(evalio::eval_record_from_json(j, cfg.tokenizer, cfg.grading));
  }
  if (records.empty()) throw InputError("eval: no records in '" + records_path + "'");
  const auto global = evalio::report(records, options);
  json doc = evalio::to_json(global);
  doc["ratio_mode"] = std::string(evalio::to_string(options.ratio_mode));
  std::vector<evalio::BucketReport> buckets;
  if (!edges.empty()) {
    buckets = evalio::bucket_report(records, edges, options);
    json list = json::array();
    for (const auto& b : buckets) {
      json entry = evalio::to_json(b.report);
      entry["lower"] = b.lower;
      entry["upper"] = b.upper;
      list.push_back(std::move(entry));
    }
    doc["buckets"] = std::move(list);
  }
  with_output(g.out, [&](std::ostream& out) { out << doc.dump(2) << '\n'; });
  if (!table_path.empty()) {
    std::ofstream t(table_path);
    if (!t) throw InputError("cannot write '" + table_path + "'");
    t << "scope\tcount\tacc\tlen\tratio";
    for (const auto& [th, _] : global.tail) t << "\ttail>" << evalio::format_double(th);
    t << '\n';
    table_row(t, "all", global);
    for (const auto& b : buckets) {
      table_row(t, "[" + evalio::format_double(b.lower) + "," +
                       evalio::format_double(b.upper) + ")",
                b.report);
    }
  }
  return 0;
}

int run_stats(const Globals& g, const std::string& input_path) {
  const auto cfg = load(g);
  std::vector<double> raw;
  for (const auto& j : evalio::read_jsonl(input_path)) {
    if (j.contains("tokens")) {
      raw.push_back(j["tokens"].get<double>());
    } else if (j.contains("text")) {
      raw.push_back(static_cast<double>(evalio::count_tokens(j["text"].get<std::string>())));
    } else {
      throw ParseError("stats: record needs 'tokens' or 'text'");
    }
  }
  if (raw.size() < 3) throw DegenerateDistributionError("stats: need at least 3 lengths");
  const Eigen::Map<const Eigen::ArrayXd> x(raw.data(), static_cast<Eigen::Index>(raw.size()));
  const Eigen::ArrayXd smoothed = x.sqrt();
  const double mean = x.mean();
  const double sd = std::sqrt((x - mean).square().mean());
  std::vector<double> sorted = raw;
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double p) {
    return sorted[static_cast<std::size_t>(p * static_cast<double>(sorted.size() - 1))];
  };
  json doc = {{"n", raw.size()},
              {"mean", mean},
              {"sd", sd},
              {"min", sorted.front()},
              {"median", quantile(0.5)},
              {"p90", quantile(0.9)},
              {"max", sorted.back()},
              {"skewness_raw", difficulty::skewness(x)},
              {"skewness_smoothed", difficulty::skewness(smoothed)}};
  (void)cfg;
  with_output(g.out, [&](std::ostream& out) { out << doc.dump(2) << '\n'; });
  return 0;
}

int run_serve(const Globals& g, const std::string& socket_path,
              const std::string& stats_path) {
  auto cfg = load(g);
  std::optional<difficulty::DifficultyStats> stats;
  if (!stats_path.empty()) {
    std::ifstream in(stats_path);
    if (!in) throw InputError("cannot open '" + stats_path + "'");
    const auto sidecar = evalio::stats_from_json(json::parse(in));
    stats = sidecar.stats;
    cfg.difficulty = sidecar.config;
  }
  evalio::ScoringService service(cfg, stats);
  if (socket_path.empty()) {
    service.serve_stream(std::cin, std::cout);
  } else {
    std::cerr << "listening on " << socket_path << std::endl;
    service.serve_unix_socket(socket_path);
  }
  return 0;
}

int run_generate(const Globals& g, const std::string& probes_path) {
  const auto cfg = load(g);
  const auto lab = evalio::lab_config(cfg);
  const auto corpus = synthlab::generate_corpus(lab.classes, lab.generator, lab.max_tokens);
  with_output(g.out, [&](std::ostream& out) {
    for (std::size_t i = 0; i < corpus.tasks.size(); ++i) {
      json j = evalio::to_json(corpus.tasks[i]);
      j["class_id"] = lab.classes[corpus.class_of[i]].class_id;
      out << j.dump() << '\n';
    }
  });
  std::ofstream probes(probes_path);
  if (!probes) throw InputError("cannot write '" + probes_path + "'");
  for (const auto& p : corpus.probes) probes << evalio::to_json(p).dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DiPO difficulty-aware length penalty toolkit"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "JSON config document")
      ->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "overrides optimizer.seed");
  app.add_option("--out", g.out, "output path, '-' for stdout");

  auto* annotate = app.add_subcommand("annotate", "tasks + probes -> annotated dataset + stats");
  std::string tasks_path, probes_path, stats_out;
  annotate->add_option("--tasks", tasks_path)->required()->check(CLI::ExistingFile);
  annotate->add_option("--probes", probes_path)->required()->check(CLI::ExistingFile);
  annotate->add_option("--stats-out", stats_out, "stats sidecar (default <out>.stats.json)");

  auto* score = app.add_subcommand("score", "annotated dataset + rollouts -> rewards");
  std::string dataset_path, rollouts_path;
  score->add_option("--dataset", dataset_path)->check(CLI::ExistingFile);
  score->add_option("--rollouts", rollouts_path)->required()->check(CLI::ExistingFile);

  auto* simulate = app.add_subcommand("simulate", "synthetic end-to-end training, emits trace");
  std::string checkpoint_path, summary_path;
  simulate->add_option("--checkpoint", checkpoint_path);
  simulate->add_option("--summary", summary_path);

  auto* eval = app.add_subcommand("eval", "records -> metrics report");
  std::string records_path, table_path, ratio_mode = "savings";
  std::vector<double> tails, edges;
  std::optional<double> cap;
  bool think = false;
  eval->add_option("--records", records_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--table", table_path, "tab-separated table output");
  eval->add_option("--tail", tails, "Tail@T thresholds")->expected(1, -1);
  eval->add_option("--cap", cap, "context cap for near-cap probability");
  eval->add_option("--buckets", edges, "difficulty bucket edges")->expected(2, -1);
  eval->add_option("--ratio-mode", ratio_mode)
      ->check(CLI::IsMember({"savings", "position"}));
  eval->add_flag("--think", think, "report think-token fraction");

  auto* stats = app.add_subcommand("stats", "length distribution and skewness");
  std::string lengths_path;
  stats->add_option("--input", lengths_path, "records with tokens or text")
      ->required()
      ->check(CLI::ExistingFile);

  auto* serve = app.add_subcommand("serve", "scoring service");
  std::string socket_path, serve_stats;
  serve->add_option("--socket", socket_path, "unix socket path (default stdio)");
  serve->add_option("--stats", serve_stats, "stats sidecar to load")->check(CLI::ExistingFile);

  auto* generate = app.add_subcommand("generate", "synthetic tasks and probes");
  std::string gen_probes = "probes.jsonl";
  generate->add_option("--probes-out", gen_probes);

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;

  try {
    if (*annotate) return run_annotate(g, tasks_path, probes_path, stats_out);
    if (*score) return run_score(g, dataset_path, rollouts_path);
    if (*simulate) return run_simulate(g, checkpoint_path, summary_path);
    if (*eval) {
      evalio::ReportOptions options;
      options.ratio_mode = evalio::parse_ratio_mode(ratio_mode);
      options.tail_thresholds = tails;
      options.context_cap = cap;
      options.think_fraction = think;
      return run_eval(g, records_path, options, edges, table_path);
    }
    if (*stats) return run_stats(g, lengths_path);
    if (*serve) return run_serve(g, socket_path, serve_stats);
    if (*generate) return run_generate(g, gen_probes);
  } catch (const JoinError& e) {
    std::cerr << "error: " << e.what() << " (example '" << e.example_id() << "')\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
