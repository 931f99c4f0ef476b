// Acceptance suite: one line per criterion, nonzero exit if any fails.
// Usage: acceptance <path-to-dipo-cli> <scratch-dir>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dipo/difficulty.hpp"
#include "dipo/grading.hpp"
#include "dipo/io.hpp"
#include "dipo/optimizer.hpp"
#include "dipo/reward.hpp"
#include "dipo/synthlab.hpp"
#include "dipo/tokenizer.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace dipo;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

int failures = 0;

void criterion(int id, const char* title, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(out);
  } catch (const std::exception& e) {
    out.require(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0) out.require(secs < budget_s, "runtime " + fmt("%.2fs", secs) + " over budget " + fmt("%.0fs", budget_s));
  failures += out.pass ? 0 : 1;
  std::printf("criterion %d %s: %s | %s | %.2fs\n", id, out.pass ? "PASS" : "FAIL", title,
              out.detail.c_str(), secs);
  std::fflush(stdout);
}

unsigned worker_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

// --- criterion 6 / 7 helpers -------------------------------------------------

std::vector<double> class_mean_difficulty(const synthlab::LabResult& r, std::size_t classes) {
  std::vector<double> sum(classes, 0.0), n(classes, 0.0);
  for (std::size_t i = 0; i < r.corpus.class_of.size(); ++i) {
    sum[r.corpus.class_of[i]] += r.dataset.examples[i].difficulty;
    n[r.corpus.class_of[i]] += 1;
  }
  for (std::size_t c = 0; c < classes; ++c) sum[c] /= n[c];
  return sum;
}

oracle::GeometricEnv env_for(const synthlab::LabConfig& cfg, std::size_t c) {
  oracle::GeometricEnv env;
  env.max_tokens = cfg.max_tokens;
  env.block = synthlab::answer_block_tokens(cfg.classes[c].answers.front());
  env.tau = cfg.classes[c].tau;
  env.cap = cfg.classes[c].cap;
  return env;
}

double dataset_accuracy(const synthlab::LabConfig& cfg, const synthlab::LabResult& r,
                        const Eigen::VectorXd& theta) {
  const auto policy = synthlab::make_policy(cfg, r.corpus, theta);
  double acc = 0, n = 0;
  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    acc += static_cast<double>(cfg.classes[c].n_examples) * synthlab::expected_accuracy(policy, c);
    n += static_cast<double>(cfg.classes[c].n_examples);
  }
  return acc / n;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr, "usage: acceptance <dipo-cli> <scratch-dir>\n");
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path work = argv[2];
  fs::create_directories(work);

  criterion(1, "reward exactness", 1.0, [](Outcome& o) {
    const reward::RewardConfig cfg;
    const auto fail = reward::score_rollout("no box at all", "7", 1.0, cfg);
    const auto good = reward::score_rollout("so \\boxed{7}", "7", 1.0, cfg, 9000);
    const auto wrong = reward::score_rollout("so \\boxed{8}", "7", 0.2, cfg, 900);
    o.require(fail.reward == -1.0 && fail.branch == reward::Branch::format_fail, "format fail is -1");
    o.require(std::abs(good.reward - 0.1) <= 1e-12, "correct 9000 tokens at 1.0 gives 0.1");
    o.require(std::abs(wrong.reward - -0.3) <= 1e-12, "wrong 900 tokens at 0.2 gives -0.3");
    o.note("rewards " + fmt("%.17g", fail.reward) + ", " + fmt("%.17g", good.reward) + ", " +
           fmt("%.17g", wrong.reward));
  });

  criterion(2, "difficulty standardization and clipping", 1.0, [](Outcome& o) {
    std::mt19937_64 rng(2024);
    std::lognormal_distribution<double> ln(6.0, 0.9);
    std::vector<difficulty::ProbeResponse> probes(100000);
    for (auto& p : probes) {
      p.token_count = static_cast<std::size_t>(ln(rng));
      p.delta = static_cast<int>(rng() % 2);
    }
    difficulty::DifficultyConfig plain;
    plain.error_penalty_enabled = false;
    const auto stats = difficulty::fit_stats(probes, plain);
    long double sum = 0, sq = 0;
    for (const auto& p : probes) sum += difficulty::difficulty_score(p.token_count, p.delta, stats, plain);
    const long double mean = sum / probes.size();
    for (const auto& p : probes) {
      const long double z = difficulty::difficulty_score(p.token_count, p.delta, stats, plain) - mean;
      sq += z * z;
    }
    const long double var = sq / probes.size();
    o.require(std::abs(static_cast<double>(mean)) < 1e-9, "mean of Z is 0");
    o.require(std::abs(static_cast<double>(var) - 1.0) < 1e-9, "population variance of Z is 1");

    const difficulty::DifficultyConfig clipped;
    const auto cstats = difficulty::fit_stats(probes, clipped);
    double lo = 1e9, hi = -1e9;
    for (const auto& p : probes) {
      const double d = difficulty::annotate(p.token_count, p.delta, cstats, clipped);
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
    o.require(lo >= 0.2 - 1e-15 && hi <= 1.8 + 1e-15, "difficulties within [0.2, 1.8]");
    o.note("mean " + fmt("%.2e", static_cast<double>(mean)) + ", var-1 " +
           fmt("%.2e", static_cast<double>(var - 1)) + ", range [" + fmt("%.3f", lo) + ", " +
           fmt("%.3f", hi) + "] over 1e5 probes");
  });

  criterion(3, "skewness reduction", 1.0, [](Outcome& o) {
    std::mt19937_64 rng(7);
    std::lognormal_distribution<double> ln(0.0, 1.0);
    Eigen::ArrayXd x(5000);
    for (auto& v : x) v = ln(rng);
    const double raw = difficulty::skewness(x);
    const double smooth = difficulty::skewness(x.sqrt().eval());
    o.require(raw > 2.0 * smooth, "raw skewness above twice the smoothed skewness");
    o.note("raw " + fmt("%.3f", raw) + ", smoothed " + fmt("%.3f", smooth));
  });

  criterion(4, "importance weight properties", 1.0, [](Outcome& o) {
    std::mt19937_64 rng(4);
    double worst_sum = 0;
    bool shift_exact = true, argmax_ok = true;
    for (int trial = 0; trial < 1000; ++trial) {
      const int k = 2 + static_cast<int>(rng() % 31);
      // Dyadic rewards and shifts keep every shifted reward representable.
      Eigen::VectorXd r(k);
      for (auto& v : r) v = std::ldexp(static_cast<double>(static_cast<std::int64_t>(rng() % (1 << 22)) - (1 << 21)), -20);
      const double beta = 0.25 + static_cast<double>(rng() % 16) * 0.25;
      const double shift = static_cast<double>(static_cast<std::int64_t>(rng() % 129) - 64);
      const auto w = optimizer::importance_weights(r, beta);
      const auto ws = optimizer::importance_weights((r.array() + shift).matrix(), beta);
      worst_sum = std::max(worst_sum, std::abs(w.sum() - 1.0));
      shift_exact = shift_exact && (w == ws).all();
      Eigen::Index ir, iw;
      r.maxCoeff(&ir);
      w.maxCoeff(&iw);
      argmax_ok = argmax_ok && r(ir) == r(iw);
    }
    Eigen::VectorXd two(2);
    two << 1.0, 0.0;
    const auto w = optimizer::importance_weights(two, 1.0);
    o.require(worst_sum <= 1e-12, "weights sum to 1");
    o.require(shift_exact, "baseline shift leaves weights bit-identical");
    o.require(argmax_ok, "argmax of weights is argmax of rewards");
    o.require(std::abs(w(0) - 0.7310585786300049) <= 1e-9 && std::abs(w(1) - 0.2689414213699951) <= 1e-9,
              "[1,0] at beta 1");
    o.note("max |sum-1| " + fmt("%.1e", worst_sum) + ", [1,0] -> [" + fmt("%.9f", w(0)) + ", " +
           fmt("%.9f", w(1)) + "]");
  });

  criterion(5, "loss gradient vs finite differences", 5.0, [](Outcome& o) {
    const std::vector<std::string> answers = {"3", "4", "5"};
    const std::vector<synthlab::TaskClass> classes = {{"e", 5, 0.95, answers, 4}, {"h", 200, 0.95, answers, 4}};
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> u(-7.0, 0.0);
    std::vector<difficulty::AnnotatedExample> data(8);
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i].example = {"x" + std::to_string(i), "q", answers[i % 3], {}};
      data[i].difficulty = 0.2 + 0.2 * static_cast<double>(i);
    }
    const reward::RewardConfig rcfg;
    optimizer::OptimizerConfig cfg;
    cfg.group_size = 16;
    double worst = 0;
    const int points = 25;
    for (int p = 0; p < points; ++p) {
      Eigen::VectorXd theta(2);
      theta << u(rng), u(rng);
      synthlab::SyntheticPolicy policy(classes, theta);
      for (std::size_t i = 0; i < data.size(); ++i) policy.assign(data[i].example.id, i % 2);
      std::vector<optimizer::RolloutGroup> groups;
      for (const auto& e : data) groups.push_back(optimizer::make_group(policy, e, rcfg, cfg, rng));
      const Eigen::VectorXd g = optimizer::loss_gradient(policy, groups);
      for (Eigen::Index j = 0; j < 2; ++j) {
        const double h = 1e-5;
        auto loss_at = [&](double d) {
          auto q = policy;
          Eigen::VectorXd t = theta;
          t(j) += d;
          q.set_parameters(t);
          return optimizer::grpo_loss(groups, optimizer::group_log_probs(q, groups));
        };
        const double fd = (loss_at(h) - loss_at(-h)) / (2 * h);
        worst = std::max(worst, std::abs(fd - g(j)) / std::max(std::abs(g(j)), 1e-8));
      }
    }
    o.require(worst < 1e-4, "relative error below 1e-4");
    o.note(std::to_string(points) + " points, worst relative error " + fmt("%.2e", worst));
  });

  criterion(6, "synthetic length trend and oracle fixed point", 60.0, [](Outcome& o) {
    auto cfg = synthlab::default_lab_config();
    cfg.optimizer.threads = worker_threads();
    auto control_cfg = cfg;
    control_cfg.reward.length_penalty_enabled = false;
    const auto full = synthlab::run_lab(cfg);
    const auto control = synthlab::run_lab(control_cfg);

    const auto& easy = full.classes[0];
    const auto& hard = full.classes[1];
    const double drop = 1.0 - easy.final_expected_tokens / easy.initial_expected_tokens;
    o.require(drop >= 0.30, "easy length drops at least 30%");
    o.require(hard.final_expected_tokens > easy.final_expected_tokens, "hard ends longer than easy");

    const double acc = dataset_accuracy(cfg, full, full.trace.final_parameters);
    const double acc_control = dataset_accuracy(control_cfg, control, control.trace.final_parameters);
    o.require(std::abs(acc - acc_control) <= 0.02, "accuracy within 2 points of the control");

    const auto settled = synthlab::make_policy(cfg, full.corpus, synthlab::tail_average_parameters(full.trace, 20));
    const auto diffs = class_mean_difficulty(full, cfg.classes.size());
    o.note("easy " + fmt("%.1f", easy.initial_expected_tokens) + " -> " + fmt("%.1f", easy.final_expected_tokens) +
           " (" + fmt("%.1f%%", 100 * drop) + "), hard " + fmt("%.1f", hard.final_expected_tokens) + ", acc " +
           fmt("%.4f", acc) + " vs control " + fmt("%.4f", acc_control));
    for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
      auto env = env_for(cfg, c);
      env.q = oracle::optimal_stop_rate(env, diffs[c]);
      const double best = static_cast<double>(env.expected_tokens());
      const double got = synthlab::expected_token_count(settled, c);
      const double rel = std::abs(got - best) / best;
      o.require(rel <= 0.10, cfg.classes[c].class_id + " fixed point within 10% of the oracle");
      o.note(cfg.classes[c].class_id + " fixed point " + fmt("%.1f", got) + " vs oracle " + fmt("%.1f", best) +
             " (" + fmt("%.1f%%", 100 * rel) + ")");
    }
  });

  criterion(7, "ablation tail directionality", 120.0, [](Outcome& o) {
    auto base = synthlab::default_lab_config();
    base.optimizer.threads = worker_threads();
    const std::vector<double> tau = {3, 8, 20, 60, 200};
    const std::vector<double> cap = {0.98, 0.95, 0.9, 0.8, 0.7};
    const std::vector<std::size_t> count = {1024, 768, 512, 384, 256};
    base.classes.clear();
    for (std::size_t c = 0; c < tau.size(); ++c) {
      base.classes.push_back({"mix" + std::to_string(c), tau[c], cap[c], {"7", "12", "19", "23", "31", "42"}, count[c]});
    }
    auto no_error = base;
    no_error.difficulty.error_penalty_enabled = false;
    auto no_clip = base;
    no_clip.difficulty.clipping_enabled = false;

    const auto full = synthlab::run_lab(base);
    auto env = env_for(base, 0);
    env.q = oracle::optimal_stop_rate(env, class_mean_difficulty(full, base.classes.size())[0]);
    const double threshold = 4.0 * static_cast<double>(env.expected_tokens());

    auto tail = [&](const synthlab::LabConfig& cfg, const synthlab::LabResult& r) {
      const auto policy = synthlab::make_policy(cfg, r.corpus, r.trace.final_parameters);
      double total = 0, n = 0;
      for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
        total += static_cast<double>(count[c]) * synthlab::token_survival(policy, c, threshold);
        n += static_cast<double>(count[c]);
      }
      return total / n;
    };
    const double t_full = tail(base, full);
    const double t_no_error = tail(no_error, synthlab::run_lab(no_error));
    const double t_no_clip = tail(no_clip, synthlab::run_lab(no_clip));
    o.require(t_no_error > t_full, "no error penalty raises Tail@T");
    o.require(t_no_clip > t_full, "no clipping raises Tail@T");
    o.note("T " + fmt("%.1f", threshold) + ", Tail@T full " + fmt("%.5f", t_full) + ", no error penalty " +
           fmt("%.5f", t_no_error) + ", no clipping " + fmt("%.5f", t_no_clip));
  });

  criterion(8, "grading corpus and first-correct oracle", 5.0, [](Outcome& o) {
    const auto rows = evalio::read_jsonl(DIPO_FIXTURE_DIR "/grading_corpus.jsonl");
    o.require(rows.size() >= 40, "at least 40 fixture cases");
    std::size_t ok = 0, compared = 0, agree = 0;
    for (const auto& row : rows) {
      const std::string text = row["text"], ref = row["reference"];
      const auto g = grading::grade(text, ref);
      bool good = g.extracted.found == row["found"].get<bool>() && g.delta == row["delta"].get<int>();
      if (!row["raw"].is_null()) good = good && g.extracted.raw == row["raw"].get<std::string>();
      ok += good;
      if (!good) o.note("mismatch on '" + row["name"].get<std::string>() + "'");
      const auto tokens = evalio::token_strings(text);
      if (tokens.size() <= 200) {
        ++compared;
        agree += grading::first_correct_token_index(tokens, ref) == oracle::brute_force_first_correct(tokens, ref);
      }
    }
    o.require(ok == rows.size(), "every fixture graded as expected");
    o.require(agree == compared, "first correct index agrees with the brute-force scan");
    o.note(std::to_string(ok) + "/" + std::to_string(rows.size()) + " graded, " + std::to_string(agree) + "/" +
           std::to_string(compared) + " prefix scans agree");
  });

  criterion(9, "simulate determinism", 0.0, [&](Outcome& o) {
    const fs::path config = work / "determinism.json";
    std::ofstream(config) << R"({"optimizer": {"steps": 8, "batch_size": 512, "learning_rate": 0.001,
      "beta": 0.5, "threads": 4},
      "synthlab": {"classes": [
        {"class_id": "easy", "tau": 5, "cap": 0.95, "answers": ["7", "12", "19"], "n_examples": 256},
        {"class_id": "hard", "tau": 200, "cap": 0.95, "answers": ["7", "12", "19"], "n_examples": 256}]}})";
    std::vector<std::string> traces;
    for (int run = 0; run < 2; ++run) {
      const fs::path out = work / ("trace_" + std::to_string(run) + ".jsonl");
      fs::remove(out);
      const std::string cmd = "\"" + cli + "\" --config \"" + config.string() + "\" --seed 1234 --out \"" +
                              out.string() + "\" simulate";
      o.require(std::system(cmd.c_str()) == 0, "simulate run " + std::to_string(run) + " succeeds");
      traces.push_back(slurp(out));
    }
    o.require(!traces[0].empty(), "trace is non-empty");
    o.require(traces[0] == traces[1], "traces are byte-identical");
    o.note(std::to_string(traces[0].size()) + " bytes per trace");
  });

  std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
