#include "dipo/synthlab.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "dipo/error.hpp"
#include "dipo/grading.hpp"
#include "dipo/tokenizer.hpp"

namespace dipo::synthlab {

namespace {

// No punctuation and no braces: filler can never be mistaken for an answer.
constexpr std::array<std::string_view, 16> kFillerVocabulary = {
    "so",   "we",    "check", "the",  "next", "term",  "then", "add",
    "it",   "again", "now",   "step", "wait", "thus",  "and",  "see"};

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Uniform in [0, 1) from the top 53 bits; identical on every platform.
double uniform01(optimizer::Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void check_class(const SyntheticPolicy& policy, std::size_t cls) {
  if (cls >= policy.classes().size()) {
    throw InputError("task class index " + std::to_string(cls) +
                     " out of range");
  }
}

}  // namespace

void TaskClass::validate() const {
  if (class_id.empty()) throw InputError("task class without class_id");
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw InputError("class '" + class_id + "': tau must be > 0");
  }
  if (!(cap > 0.0 && cap <= 1.0)) {
    throw InputError("class '" + class_id + "': cap must lie in (0, 1]");
  }
  if (answers.size() < 2) {
    throw InputError("class '" + class_id +
                     "': needs at least two answers (one true, one decoy)");
  }
  for (const auto& a : answers) {
    if (evalio::count_tokens(a) != 1 || evalio::is_punct(a.front())) {
      throw InputError("class '" + class_id + "': answer '" + a +
                       "' is not a single word token");
    }
  }
}

double p_correct(const TaskClass& cls, double length) {
  return cls.cap * (1.0 - std::exp(-length / cls.tau));
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double q) { return std::log(q) - std::log1p(-q); }

std::size_t answer_block_tokens(std::string_view answer) {
  return evalio::count_tokens("\\boxed{" + std::string(answer) + "}");
}

// --- SyntheticPolicy -------------------------------------------------------

SyntheticPolicy::SyntheticPolicy(std::vector<TaskClass> classes,
                                 Eigen::VectorXd theta, std::size_t max_tokens,
                                 std::uint64_t filler_seed)
    : classes_(std::move(classes)), theta_(std::move(theta)), max_tokens_(max_tokens) {
  if (classes_.empty()) throw InputError("synthetic policy needs a task class");
  if (theta_.size() != static_cast<Eigen::Index>(classes_.size())) {
    throw ShapeError("synthetic policy: one parameter per class expected");
  }
  for (const auto& c : classes_) c.validate();
  if (max_tokens_ < 8) throw InputError("max_tokens must be at least 8");

  auto filler = std::make_shared<Filler>();
  optimizer::Rng rng(filler_seed);
  filler->ends.reserve(max_tokens_);
  for (std::size_t i = 0; i < max_tokens_; ++i) {
    if (i > 0) filler->text.push_back(' ');
    filler->text += kFillerVocabulary[rng() % kFillerVocabulary.size()];
    filler->ends.push_back(filler->text.size());
  }
  filler_ = std::move(filler);
}

void SyntheticPolicy::assign(const std::string& example_id,
                             std::size_t class_index) {
  if (class_index >= classes_.size()) {
    throw InputError("assign: class index out of range for '" + example_id + "'");
  }
  assignment_[example_id] = class_index;
}

std::size_t SyntheticPolicy::class_of(const TaskExample& task) const {
  const auto it = assignment_.find(task.id);
  if (it == assignment_.end()) {
    throw InputError("example '" + task.id + "' has no task class");
  }
  return it->second;
}

double SyntheticPolicy::stop_probability(std::size_t cls) const {
  check_class(*this, cls);
  return logistic(theta_(static_cast<Eigen::Index>(cls)));
}

std::string_view SyntheticPolicy::filler(std::size_t n) const {
  if (n == 0) return {};
  n = std::min(n, filler_->ends.size());
  return std::string_view(filler_->text).substr(0, filler_->ends[n - 1]);
}

optimizer::Rollout SyntheticPolicy::sample(const TaskExample& task,
                                           optimizer::Rng& rng) const {
  return sample_rollout(*this, class_of(task), task.answer, rng);
}

double SyntheticPolicy::log_prob(const TaskExample& task,
                                 const optimizer::Rollout& rollout) const {
  const std::size_t cls = class_of(task);
  return rollout.truncated ? truncated_log_prob(*this, cls)
                           : synthlab::log_prob(*this, cls, rollout.length);
}

Eigen::VectorXd SyntheticPolicy::log_prob_gradient(
    const TaskExample& task, const optimizer::Rollout& rollout) const {
  const std::size_t cls = class_of(task);
  return rollout.truncated ? truncated_log_prob_gradient(*this, cls)
                           : synthlab::log_prob_gradient(*this, cls, rollout.length);
}

void SyntheticPolicy::add_log_prob_gradient(const TaskExample& task,
                                            const optimizer::Rollout& rollout,
                                            double weight,
                                            Eigen::Ref<Eigen::VectorXd> out) const {
  const std::size_t cls = class_of(task);
  const double q = stop_probability(cls);
  const double g = rollout.truncated
                       ? -static_cast<double>(max_tokens_ - 1) * q
                       : (1.0 - q) - static_cast<double>(rollout.length - 1) * q;
  out(static_cast<Eigen::Index>(cls)) += weight * g;
}

void SyntheticPolicy::set_parameters(const Eigen::VectorXd& theta) {
  if (theta.size() != theta_.size()) {
    throw ShapeError("set_parameters: expected " + std::to_string(theta_.size()) +
                     " parameters");
  }
  theta_ = theta;
}

std::unique_ptr<optimizer::Policy> SyntheticPolicy::clone() const {
  return std::make_unique<SyntheticPolicy>(*this);
}

// --- closed forms ----------------------------------------------------------

optimizer::Rollout sample_rollout(const SyntheticPolicy& policy, std::size_t cls,
                                  std::string_view true_answer,
                                  optimizer::Rng& rng) {
  check_class(policy, cls);
  const TaskClass& task_class = policy.classes()[cls];
  const double u_length = uniform01(rng);
  const double u_correct = uniform01(rng);
  const double u_decoy = uniform01(rng);

  const double q = policy.stop_probability(cls);
  const std::size_t limit = policy.max_tokens();
  // Inverse CDF: P(L > l) = (1 - q)^l.
  const double draw =
      1.0 + std::floor(std::log1p(-u_length) / std::log1p(-q));
  optimizer::Rollout rollout;
  if (!(draw < static_cast<double>(limit))) {
    rollout.truncated = true;
    rollout.length = limit;
    rollout.token_count = limit;
    rollout.text = std::string(policy.filler(limit));
    return rollout;
  }
  rollout.length = static_cast<std::size_t>(draw);

  std::string_view answer = true_answer;
  if (!(u_correct < p_correct(task_class, static_cast<double>(rollout.length)))) {
    // Uniform over the answers other than the true one.
    std::vector<std::string_view> decoys;
    for (const auto& a : task_class.answers)
      if (a != true_answer) decoys.push_back(a);
    const auto pick = std::min(
        decoys.size() - 1,
        static_cast<std::size_t>(u_decoy * static_cast<double>(decoys.size())));
    answer = decoys[pick];
  }
  const std::size_t block = answer_block_tokens(answer);
  const std::size_t filler_tokens =
      std::max(rollout.length, block) - block;
  rollout.text.reserve(filler_tokens * 6 + 16);
  rollout.text = policy.filler(filler_tokens);
  if (filler_tokens > 0) rollout.text.push_back(' ');
  rollout.text += "\\boxed{";
  rollout.text += answer;
  rollout.text += '}';
  rollout.token_count = filler_tokens + block;
  return rollout;
}

double log_prob(const SyntheticPolicy& policy, std::size_t cls,
                std::size_t length) {
  if (length < 1) throw InputError("log_prob: length must be >= 1");
  check_class(policy, cls);
  const double theta = policy.parameters()(static_cast<Eigen::Index>(cls));
  // log q = -softplus(-theta), log(1 - q) = -softplus(theta)
  return -static_cast<double>(length - 1) * softplus(theta) - softplus(-theta);
}

double truncated_log_prob(const SyntheticPolicy& policy, std::size_t cls) {
  check_class(policy, cls);
  const double theta = policy.parameters()(static_cast<Eigen::Index>(cls));
  return -static_cast<double>(policy.max_tokens() - 1) * softplus(theta);
}

Eigen::VectorXd log_prob_gradient(const SyntheticPolicy& policy,
                                  std::size_t cls, std::size_t length) {
  if (length < 1) throw InputError("log_prob_gradient: length must be >= 1");
  const double q = policy.stop_probability(cls);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.parameter_count());
  g(static_cast<Eigen::Index>(cls)) =
      (1.0 - q) - static_cast<double>(length - 1) * q;
  return g;
}

Eigen::VectorXd truncated_log_prob_gradient(const SyntheticPolicy& policy,
                                            std::size_t cls) {
  const double q = policy.stop_probability(cls);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.parameter_count());
  g(static_cast<Eigen::Index>(cls)) =
      -static_cast<double>(policy.max_tokens() - 1) * q;
  return g;
}

double expected_length(const SyntheticPolicy& policy, std::size_t cls) {
  return 1.0 / policy.stop_probability(cls);
}

double expected_token_count(const SyntheticPolicy& policy, std::size_t cls) {
  const double q = policy.stop_probability(cls);
  const auto limit = static_cast<double>(policy.max_tokens());
  const std::size_t block = answer_block_tokens(policy.classes()[cls].answers.front());
  // E[min(L, M)] = sum_{j<M} P(L > j), then lengths below the answer block
  // are lifted to the block size.
  double mean = -std::expm1(limit * std::log1p(-q)) / q;
  for (std::size_t l = 1; l < block; ++l) {
    const double mass = q * std::pow(1.0 - q, static_cast<double>(l - 1));
    mean += mass * static_cast<double>(block - l);
  }
  return mean;
}

double token_survival(const SyntheticPolicy& policy, std::size_t cls,
                      double threshold) {
  const double q = policy.stop_probability(cls);
  const auto limit = static_cast<double>(policy.max_tokens());
  const auto block = static_cast<double>(
      answer_block_tokens(policy.classes()[cls].answers.front()));
  if (threshold < block) return 1.0;
  if (threshold >= limit) return 0.0;
  // Emitted count exceeds t (block <= t < M) iff L > floor(t).
  return std::pow(1.0 - q, std::floor(threshold));
}

double expected_accuracy(const SyntheticPolicy& policy, std::size_t cls) {
  const TaskClass& c = policy.classes()[cls];
  const double q = policy.stop_probability(cls);
  const auto steps = static_cast<double>(policy.max_tokens() - 1);
  // sum_{l=1}^{M-1} q (1-q)^(l-1) * cap * (1 - e^(-l/tau))
  const double decay = std::exp(-1.0 / c.tau);
  const double ratio = (1.0 - q) * decay;
  const double answered = -std::expm1(steps * std::log1p(-q));
  const double discounted =
      q * decay * -std::expm1(steps * std::log(ratio)) / (1.0 - ratio);
  return c.cap * (answered - discounted);
}

// --- corpus ----------------------------------------------------------------

std::string apply_prompt(std::string_view prompt_template,
                         std::string_view question) {
  constexpr std::string_view slot = "{question}";
  std::string out(prompt_template);
  const std::size_t pos = out.find(slot);
  if (pos == std::string::npos) return std::string(question) + "\n" + out;
  out.replace(pos, slot.size(), question);
  return out;
}

SyntheticCorpus generate_corpus(std::span<const TaskClass> classes,
                                const GeneratorConfig& cfg,
                                std::size_t max_tokens) {
  if (!(cfg.probe_scale > 0.0)) throw InputError("probe_scale must be > 0");
  std::vector<TaskClass> owned(classes.begin(), classes.end());
  Eigen::VectorXd probe_theta(static_cast<Eigen::Index>(owned.size()));
  for (std::size_t c = 0; c < owned.size(); ++c) {
    const double q = std::clamp(1.0 / (cfg.probe_scale * owned[c].tau), 1e-9,
                                1.0 - 1e-9);
    probe_theta(static_cast<Eigen::Index>(c)) = logit(q);
  }
  const SyntheticPolicy probe_model(owned, probe_theta, max_tokens);

  SyntheticCorpus corpus;
  for (std::size_t c = 0; c < owned.size(); ++c) {
    const TaskClass& task_class = owned[c];
    for (std::size_t i = 0; i < task_class.n_examples; ++i) {
      optimizer::Rng rng(optimizer::stream_seed(cfg.seed, c + 1, i));
      std::string number = std::to_string(i);
      number.insert(0, number.size() < 5 ? 5 - number.size() : 0, '0');
      TaskExample task;
      task.id = task_class.class_id + "-" + number;
      task.answer = task_class.answers[rng() % task_class.answers.size()];
      task.question = apply_prompt(
          cfg.prompt_template,
          "Synthetic problem " + task.id + " of class " + task_class.class_id + ".");
      const optimizer::Rollout probe = sample_rollout(probe_model, c, task.answer, rng);
      difficulty::ProbeResponse response;
      response.example_id = task.id;
      response.token_count = probe.token_count;
      response.delta = grading::grade(probe.text, task.answer).delta;
      response.text = probe.text;
      corpus.tasks.push_back(std::move(task));
      corpus.probes.push_back(std::move(response));
      corpus.class_of.push_back(c);
    }
  }
  return corpus;
}

// --- lab -------------------------------------------------------------------

LabConfig default_lab_config() {
  LabConfig cfg;
  const std::vector<std::string> answers = {"7", "12", "19", "23", "31", "42"};
  cfg.classes = {
      {"easy", 5.0, 0.95, answers, 2048},
      {"hard", 200.0, 0.95, answers, 2048},
  };
  cfg.optimizer.group_size = 16;
  cfg.optimizer.steps = 60;
  cfg.optimizer.batch_size = 4096;
  cfg.optimizer.beta = 0.5;
  cfg.optimizer.learning_rate = 1e-3;
  cfg.optimizer.seed = 7;
  cfg.generator.seed = 7;
  return cfg;
}

SyntheticPolicy make_policy(const LabConfig& cfg, const SyntheticCorpus& corpus,
                            const Eigen::VectorXd& theta) {
  SyntheticPolicy policy(cfg.classes, theta, cfg.max_tokens);
  for (std::size_t i = 0; i < corpus.tasks.size(); ++i) {
    policy.assign(corpus.tasks[i].id, corpus.class_of[i]);
  }
  return policy;
}

LabResult run_lab(const LabConfig& cfg) {
  if (cfg.classes.empty()) throw InputError("lab needs at least one task class");
  if (!(cfg.init_mean_length > 1.0)) {
    throw InputError("init_mean_length must be > 1");
  }
  LabResult result;
  result.corpus = generate_corpus(cfg.classes, cfg.generator, cfg.max_tokens);
  result.dataset = difficulty::build_annotated_dataset(
      result.corpus.tasks, result.corpus.probes, cfg.difficulty);

  const Eigen::VectorXd theta0 = Eigen::VectorXd::Constant(
      static_cast<Eigen::Index>(cfg.classes.size()),
      logit(1.0 / cfg.init_mean_length));
  SyntheticPolicy policy = make_policy(cfg, result.corpus, theta0);
  const SyntheticPolicy initial = policy;
  result.trace = optimizer::train(policy, result.dataset.examples, cfg.reward,
                                  cfg.optimizer);

  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    ClassSummary summary;
    summary.class_id = cfg.classes[c].class_id;
    double difficulty_sum = 0.0;
    for (std::size_t i = 0; i < result.corpus.class_of.size(); ++i) {
      if (result.corpus.class_of[i] != c) continue;
      ++summary.n_examples;
      difficulty_sum += result.dataset.examples[i].difficulty;
    }
    if (summary.n_examples > 0) {
      summary.mean_difficulty = difficulty_sum / static_cast<double>(summary.n_examples);
    }
    summary.initial_expected_tokens = expected_token_count(initial, c);
    summary.final_expected_tokens = expected_token_count(policy, c);
    summary.final_expected_accuracy = expected_accuracy(policy, c);
    result.classes.push_back(std::move(summary));
  }
  return result;
}

Eigen::VectorXd tail_average_parameters(const optimizer::TrainingTrace& trace,
                                        std::size_t window) {
  if (trace.steps.empty()) return trace.final_parameters;
  window = std::clamp<std::size_t>(window, 1, trace.steps.size());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(trace.final_parameters.size());
  for (std::size_t i = trace.steps.size() - window; i < trace.steps.size(); ++i) {
    sum += trace.steps[i].parameters;
  }
  return sum / static_cast<double>(window);
}

}  // namespace dipo::synthlab
