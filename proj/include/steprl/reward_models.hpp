#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "steprl/core.hpp"
#include "steprl/env.hpp"
#include "steprl/policy.hpp"
#include "steprl/rng.hpp"

namespace steprl {

struct LabeledPrefix {
  Prefix prefix;
  int label = 0;  // 1 iff some completion from this prefix reached correctness
};

struct LabeledSolution {
  Solution solution;
  int label = 0;  // environment checker verdict
};

// Question lookup with deterministic ordering.
class QuestionSet {
 public:
  QuestionSet() = default;
  explicit QuestionSet(std::vector<Question> qs) : questions_(std::move(qs)) {
    for (std::size_t i = 0; i < questions_.size(); ++i) index_[questions_[i].id] = i;
  }
  const Question& by_id(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw RangeError("unknown question id: " + id);
    return questions_[it->second];
  }
  const std::vector<Question>& all() const { return questions_; }
  std::size_t size() const { return questions_.size(); }

 private:
  std::vector<Question> questions_;
  std::map<std::string, std::size_t> index_;
};

// Feature layout for the logistic scorers. Prefix features: bias, residual
// one-hot, step-kind one-hot, step-index bucket one-hot, tail repetition run.
// Solution features swap the kind block for answer-shape indicators.
struct FeatureSpec {
  std::string kind = "prm";  // "prm" | "orm"
  int modulus = 23;
  int index_buckets = 8;
  int index_bucket_width = 3;

  int dim() const {
    if (kind == "prm") return 1 + modulus + 3 + index_buckets + 1;
    return 1 + modulus + 2 + index_buckets + 1;
  }

  int index_bucket(std::size_t k) const {
    const int b = static_cast<int>((k - 1) / static_cast<std::size_t>(index_bucket_width));
    return std::min(b, index_buckets - 1);
  }
};

namespace detail {

// Value after replaying the compute steps before the first answer step.
inline int replay_value(const Question& q, const std::vector<Step>& steps, const EnvConfig& env) {
  int value = q.start % env.modulus;
  for (const auto& step : steps) {
    if (step.kind == StepKind::Answer) break;
    if (step.kind != StepKind::Compute) continue;
    const StepTemplate* t = find_template(env, step.template_id);
    if (t != nullptr) value = apply_op(value, *t, env.modulus);
  }
  return value;
}

inline int residual_of(const Question& q, int value, int modulus) {
  return ((q.target - value) % modulus + modulus) % modulus;
}

inline double tail_run(const std::vector<Step>& steps) {
  if (steps.empty()) return 0.0;
  std::size_t run = 0;
  const std::string& id = steps.back().template_id;
  for (auto it = steps.rbegin(); it != steps.rend() && it->template_id == id; ++it) ++run;
  return std::min<double>(static_cast<double>(run - 1), 8.0) / 8.0;
}

}  // namespace detail

inline std::vector<double> prefix_features(const FeatureSpec& spec, const Question& q,
                                           const std::vector<Step>& steps, const EnvConfig& env) {
  if (steps.empty()) throw DegenerateError("prefix_features: empty prefix");
  std::vector<double> x(static_cast<std::size_t>(spec.dim()), 0.0);
  std::size_t off = 0;
  x[off++] = 1.0;  // bias
  const int value = detail::replay_value(q, steps, env);
  const int residual = detail::residual_of(q, value, spec.modulus);
  x[off + static_cast<std::size_t>(residual)] = 1.0;
  off += static_cast<std::size_t>(spec.modulus);
  const StepKind kind = steps.back().kind;
  x[off + static_cast<std::size_t>(kind == StepKind::Filler ? 1 : (kind == StepKind::Answer ? 2 : 0))] = 1.0;
  off += 3;
  x[off + static_cast<std::size_t>(spec.index_bucket(steps.size()))] = 1.0;
  off += static_cast<std::size_t>(spec.index_buckets);
  x[off++] = detail::tail_run(steps);
  return x;
}

inline std::vector<double> solution_features(const FeatureSpec& spec, const Question& q,
                                             const Solution& s, const EnvConfig& env) {
  if (s.steps.empty()) throw DegenerateError("solution_features: empty solution");
  std::vector<double> x(static_cast<std::size_t>(spec.dim()), 0.0);
  std::size_t off = 0;
  x[off++] = 1.0;
  const int value = detail::replay_value(q, s.steps, env);
  const int residual = detail::residual_of(q, value, spec.modulus);
  x[off + static_cast<std::size_t>(residual)] = 1.0;
  off += static_cast<std::size_t>(spec.modulus);
  const Step* answer = nullptr;
  for (const auto& step : s.steps) {
    if (step.kind == StepKind::Answer) {
      answer = &step;
      break;
    }
  }
  x[off++] = answer != nullptr ? 1.0 : 0.0;
  const auto claim = answer != nullptr ? parse_answer_claim(*answer) : std::nullopt;
  x[off++] = (claim.has_value() && *claim == value) ? 1.0 : 0.0;
  x[off + static_cast<std::size_t>(spec.index_bucket(s.steps.size()))] = 1.0;
  off += static_cast<std::size_t>(spec.index_buckets);
  x[off++] = detail::tail_run(s.steps);
  return x;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct SurrogatePRM {
  FeatureSpec spec;
  std::vector<double> weights;
};

struct SurrogateORM {
  FeatureSpec spec;
  std::vector<double> weights;
};

inline double dot(const std::vector<double>& w, const std::vector<double>& x) {
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) z += w[i] * x[i];
  return z;
}

inline double prm_score(const SurrogatePRM& prm, const Question& q,
                        const std::vector<Step>& prefix_steps, const EnvConfig& env) {
  return sigmoid(dot(prm.weights, prefix_features(prm.spec, q, prefix_steps, env)));
}

inline double prm_score(const SurrogatePRM& prm, const Question& q, const Prefix& prefix,
                        const EnvConfig& env) {
  return prm_score(prm, q, prefix.steps, env);
}

inline double orm_score(const SurrogateORM& orm, const Question& q, const Solution& s,
                        const EnvConfig& env) {
  return sigmoid(dot(orm.weights, solution_features(orm.spec, q, s, env)));
}

// Per-step PRM scores for a whole solution; scores[k-1] = score of p^(k).
inline StepRewardSeq prm_scores(const SurrogatePRM& prm, const Question& q, const Solution& s,
                                const EnvConfig& env) {
  StepRewardSeq scores(s.steps.size());
  std::vector<Step> prefix;
  prefix.reserve(s.steps.size());
  for (std::size_t k = 0; k < s.steps.size(); ++k) {
    prefix.push_back(s.steps[k]);
    scores[k] = sigmoid(dot(prm.weights, prefix_features(prm.spec, q, prefix, env)));
  }
  return scores;
}

struct RmTrainConfig {
  int epochs = 200;
  double learning_rate = 2.0;
  bool class_weighting = true;  // inverse-frequency weights on the BCE loss
};

struct RmTrainStats {
  std::vector<double> epoch_loss;
  double final_loss = 0.0;
};

// Full-batch gradient descent on weighted BCE with backtracking, which keeps
// the per-epoch training loss non-increasing.
inline std::vector<double> train_logistic(const std::vector<std::vector<double>>& xs,
                                          const std::vector<int>& ys, const RmTrainConfig& cfg,
                                          RmTrainStats* stats = nullptr) {
  if (xs.empty() || xs.size() != ys.size()) {
    throw DegenerateError("train_logistic: empty or misaligned dataset");
  }
  std::size_t n_pos = 0;
  for (int y : ys) n_pos += static_cast<std::size_t>(y);
  const std::size_t n = ys.size();
  if (n_pos == 0 || n_pos == n) {
    throw DegenerateError("train_logistic: single-class dataset");
  }
  double w_pos = 1.0;
  double w_neg = 1.0;
  if (cfg.class_weighting) {
    w_pos = static_cast<double>(n) / (2.0 * static_cast<double>(n_pos));
    w_neg = static_cast<double>(n) / (2.0 * static_cast<double>(n - n_pos));
  }
  const std::size_t dim = xs[0].size();
  std::vector<double> w(dim, 0.0);

  auto loss_of = [&](const std::vector<double>& weights) {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = std::clamp(sigmoid(dot(weights, xs[i])), 1e-12, 1.0 - 1e-12);
      const double sw = ys[i] ? w_pos : w_neg;
      loss -= sw * (ys[i] ? std::log(p) : std::log(1.0 - p));
    }
    return loss / static_cast<double>(n);
  };

  double loss = loss_of(w);
  double lr = cfg.learning_rate;
  std::vector<double> grad(dim);
  std::vector<double> trial(dim);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(dot(w, xs[i]));
      const double sw = ys[i] ? w_pos : w_neg;
      const double err = sw * (p - static_cast<double>(ys[i]));
      for (std::size_t d = 0; d < dim; ++d) grad[d] += err * xs[i][d];
    }
    for (double& g : grad) g /= static_cast<double>(n);

    double trial_loss = loss;
    while (lr > 1e-12) {
      for (std::size_t d = 0; d < dim; ++d) trial[d] = w[d] - lr * grad[d];
      trial_loss = loss_of(trial);
      if (trial_loss <= loss + 1e-12) break;
      lr *= 0.5;
    }
    if (trial_loss <= loss + 1e-12) {
      w = trial;
      loss = trial_loss;
      lr = std::min(lr * 1.1, cfg.learning_rate * 4.0);
    }
    if (stats != nullptr) stats->epoch_loss.push_back(loss);
  }
  if (stats != nullptr) stats->final_loss = loss;
  return w;
}

inline SurrogatePRM train_prm(const std::vector<LabeledPrefix>& dataset, const QuestionSet& qs,
                              const RmTrainConfig& cfg, const EnvConfig& env,
                              RmTrainStats* stats = nullptr) {
  if (dataset.empty()) throw DegenerateError("train_prm: empty dataset");
  SurrogatePRM prm;
  prm.spec.kind = "prm";
  prm.spec.modulus = env.modulus;
  std::vector<std::vector<double>> xs;
  std::vector<int> ys;
  xs.reserve(dataset.size());
  ys.reserve(dataset.size());
  for (const auto& lp : dataset) {
    xs.push_back(prefix_features(prm.spec, qs.by_id(lp.prefix.question_id), lp.prefix.steps, env));
    ys.push_back(lp.label);
  }
  prm.weights = train_logistic(xs, ys, cfg, stats);
  return prm;
}

inline SurrogateORM train_orm(const std::vector<LabeledSolution>& dataset, const QuestionSet& qs,
                              const RmTrainConfig& cfg, const EnvConfig& env,
                              RmTrainStats* stats = nullptr) {
  if (dataset.empty()) throw DegenerateError("train_orm: empty dataset");
  SurrogateORM orm;
  orm.spec.kind = "orm";
  orm.spec.modulus = env.modulus;
  std::vector<std::vector<double>> xs;
  std::vector<int> ys;
  xs.reserve(dataset.size());
  ys.reserve(dataset.size());
  for (const auto& ls : dataset) {
    xs.push_back(solution_features(orm.spec, qs.by_id(ls.solution.question_id), ls.solution, env));
    ys.push_back(ls.label);
  }
  orm.weights = train_logistic(xs, ys, cfg, stats);
  return orm;
}

struct AnnotationConfig {
  int completions_per_prefix = 8;
  PolicyParams completer;  // frozen snapshot of the initial policy

  void validate() const {
    if (completions_per_prefix < 1) {
      throw ConfigError("annotation: completions_per_prefix must be >= 1");
    }
  }
};

// Monte-Carlo process annotation: prefix p^(k) is labeled 1 iff any of the
// completer's rollouts from it ends correct. A prefix that already ends in an
// answer step needs no completion; its label is the checker verdict.
inline std::vector<LabeledPrefix> annotate_process(const Solution& solution, const Question& q,
                                                   const AnnotationConfig& cfg,
                                                   const EnvConfig& env, std::uint64_t seed,
                                                   std::uint64_t solution_index = 0) {
  cfg.validate();
  if (solution.steps.empty()) throw DegenerateError("annotate_process: empty solution");
  std::vector<LabeledPrefix> out;
  out.reserve(solution.steps.size());
  for (std::size_t k = 1; k <= solution.steps.size(); ++k) {
    LabeledPrefix lp;
    lp.prefix = prefix_of(solution, k);
    if (lp.prefix.steps.back().kind == StepKind::Answer) {
      Solution head;
      head.question_id = solution.question_id;
      head.steps = lp.prefix.steps;
      lp.label = check_correct(q, head, env) ? 1 : 0;
    } else {
      int moves = 0;
      int value = q.start % env.modulus;
      for (const auto& step : lp.prefix.steps) {
        if (step.kind == StepKind::Compute) {
          const StepTemplate* t = find_template(env, step.template_id);
          if (t == nullptr) throw AnnotationError("annotate_process: unknown template at k=" +
                                                  std::to_string(k));
          value = apply_op(value, *t, env.modulus);
        }
        ++moves;
      }
      int label = 0;
      for (int c = 0; c < cfg.completions_per_prefix && label == 0; ++c) {
        Rng rng = Rng::derive(seed, {solution_index, static_cast<std::uint64_t>(k),
                                     static_cast<std::uint64_t>(c)});
        try {
          const Solution completed = complete_from(cfg.completer, q, EnvState{value, moves},
                                                   lp.prefix.steps, env, rng);
          if (completed.correct) label = 1;
        } catch (const std::exception& e) {
          throw AnnotationError("annotate_process: completer failed at prefix k=" +
                                std::to_string(k) + ": " + e.what());
        }
      }
      lp.label = label;
    }
    out.push_back(std::move(lp));
  }
  return out;
}

// Samples `samples_per_question` solutions per question and keeps only
// questions with both a correct and an incorrect sample, labels included.
inline std::vector<LabeledSolution> collect_rm_dataset(const PolicyParams& policy,
                                                       const std::vector<Question>& questions,
                                                       int samples_per_question,
                                                       const EnvConfig& env, std::uint64_t seed) {
  if (samples_per_question < 2) {
    throw ConfigError("collect_rm_dataset: samples_per_question must be >= 2");
  }
  std::vector<LabeledSolution> out;
  for (std::size_t qi = 0; qi < questions.size(); ++qi) {
    std::vector<LabeledSolution> group;
    bool any_correct = false;
    bool any_wrong = false;
    for (int s = 0; s < samples_per_question; ++s) {
      Rng rng = Rng::derive(seed, {qi, static_cast<std::uint64_t>(s)});
      Trajectory tr = rollout_episode(policy, questions[qi], env, rng, /*greedy=*/false);
      LabeledSolution ls;
      ls.label = tr.solution.correct ? 1 : 0;
      ls.solution = std::move(tr.solution);
      any_correct = any_correct || ls.label == 1;
      any_wrong = any_wrong || ls.label == 0;
      group.push_back(std::move(ls));
    }
    if (any_correct && any_wrong) {
      for (auto& ls : group) out.push_back(std::move(ls));
    }
  }
  if (out.empty()) {
    throw DegenerateError("collect_rm_dataset: no question has both correct and wrong samples");
  }
  return out;
}

// Annotates every retained solution; the per-prefix labels form the PRM
// training set. Annotation streams are keyed by (solution, k, completion),
// so the result is the same for any worker count.
inline std::vector<LabeledPrefix> build_prm_dataset(const std::vector<LabeledSolution>& solutions,
                                                    const QuestionSet& qs,
                                                    const AnnotationConfig& cfg,
                                                    const EnvConfig& env, std::uint64_t seed,
                                                    int workers = 1) {
  std::vector<std::vector<LabeledPrefix>> per_solution(solutions.size());
  auto annotate_one = [&](std::size_t i) {
    const Question& q = qs.by_id(solutions[i].solution.question_id);
    per_solution[i] = annotate_process(solutions[i].solution, q, cfg, env, seed, i);
  };
  if (workers == 1 || solutions.size() < 2) {
    for (std::size_t i = 0; i < solutions.size(); ++i) annotate_one(i);
  } else {
    if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
    const std::size_t stride = static_cast<std::size_t>(std::max(workers, 1));
    std::vector<std::thread> pool;
    pool.reserve(stride);
    for (std::size_t w = 0; w < stride; ++w) {
      pool.emplace_back([&, w]() {
        for (std::size_t i = w; i < solutions.size(); i += stride) annotate_one(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  std::vector<LabeledPrefix> out;
  for (auto& labels : per_solution) {
    for (auto& lp : labels) out.push_back(std::move(lp));
  }
  return out;
}

// Rank-based AUC; ties contribute half.
inline double binary_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double n_pos = 0.0;
  double n_neg = 0.0;
  double wins = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    n_pos += 1.0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] == 1) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  for (int l : labels) n_neg += (l == 0) ? 1.0 : 0.0;
  if (n_pos == 0.0 || n_neg == 0.0) throw DegenerateError("binary_auc: single-class labels");
  return wins / (n_pos * n_neg);
}

// Empirical PRM-score pool from a seeded rollout batch; the clip threshold is
// a quantile of this pool, computed once and then frozen.
inline std::vector<double> prm_score_pool(const SurrogatePRM& prm, const PolicyParams& policy,
                                          const std::vector<Question>& questions,
                                          int samples_per_question, const EnvConfig& env,
                                          std::uint64_t seed) {
  std::vector<double> pool;
  for (std::size_t qi = 0; qi < questions.size(); ++qi) {
    for (int s = 0; s < samples_per_question; ++s) {
      Rng rng = Rng::derive(seed, {qi, static_cast<std::uint64_t>(s)});
      Trajectory tr = rollout_episode(policy, questions[qi], env, rng, /*greedy=*/false);
      if (tr.solution.steps.empty()) continue;
      const StepRewardSeq scores = prm_scores(prm, questions[qi], tr.solution, env);
      pool.insert(pool.end(), scores.begin(), scores.end());
    }
  }
  if (pool.empty()) throw DegenerateError("prm_score_pool: no steps scored");
  return pool;
}

}  // namespace steprl
