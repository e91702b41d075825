#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "steprl/core.hpp"
#include "steprl/env.hpp"
#include "steprl/policy.hpp"
#include "steprl/rng.hpp"

namespace steprl {

struct EvalReport {
  double greedy_acc = 0.0;
  double sampling_acc = 0.0;
  double pass_at_k = 0.0;
  int k = 16;
  double mean_steps = 0.0;
  double mean_tokens = 0.0;
};

// Fraction of questions solved under argmax decoding. Deterministic.
inline double eval_greedy(const PolicyParams& policy, const std::vector<Question>& questions,
                          const EnvConfig& env) {
  if (questions.empty()) throw DegenerateError("eval_greedy: empty question set");
  Rng unused(0);
  int correct = 0;
  for (const auto& q : questions) {
    Trajectory tr = rollout_episode(policy, q, env, unused, /*greedy=*/true);
    correct += tr.solution.correct ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(questions.size());
}

// One temperature-1 rollout per question. `length_out`, when given, receives
// (mean_steps, mean_tokens) over the same rollouts.
inline double eval_sampling(const PolicyParams& policy, const std::vector<Question>& questions,
                            const EnvConfig& env, std::uint64_t seed,
                            std::pair<double, double>* length_out = nullptr) {
  if (questions.empty()) throw DegenerateError("eval_sampling: empty question set");
  int correct = 0;
  double steps = 0.0;
  double tokens = 0.0;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    Rng rng = Rng::derive(seed, {0x5a, i});
    Trajectory tr = rollout_episode(policy, questions[i], env, rng, /*greedy=*/false);
    correct += tr.solution.correct ? 1 : 0;
    steps += static_cast<double>(tr.solution.steps.size());
    tokens += static_cast<double>(tr.solution.token_count);
  }
  if (length_out != nullptr) {
    length_out->first = steps / static_cast<double>(questions.size());
    length_out->second = tokens / static_cast<double>(questions.size());
  }
  return static_cast<double>(correct) / static_cast<double>(questions.size());
}

// Fraction of questions with at least one correct answer among k independent
// temperature-1 samples. No deduplication. Trial 0 replays the eval_sampling
// draw for the same seed, so pass@1 == sampling accuracy and pass@k is
// monotone in k under the fixed seeds-per-trial protocol.
inline double eval_pass_at_k(const PolicyParams& policy, const std::vector<Question>& questions,
                             const EnvConfig& env, int k, std::uint64_t seed) {
  if (questions.empty()) throw DegenerateError("eval_pass_at_k: empty question set");
  if (k < 1) throw ConfigError("eval_pass_at_k: k must be >= 1");
  int solved = 0;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    for (int t = 0; t < k; ++t) {
      Rng rng = t == 0 ? Rng::derive(seed, {0x5a, i})
                       : Rng::derive(seed, {0xa7, i, static_cast<std::uint64_t>(t)});
      Trajectory tr = rollout_episode(policy, questions[i], env, rng, /*greedy=*/false);
      if (tr.solution.correct) {
        ++solved;
        break;
      }
    }
  }
  return static_cast<double>(solved) / static_cast<double>(questions.size());
}

inline EvalReport evaluate_policy(const PolicyParams& policy,
                                  const std::vector<Question>& questions, const EnvConfig& env,
                                  int k, std::uint64_t seed) {
  EvalReport rep;
  rep.k = k;
  rep.greedy_acc = eval_greedy(policy, questions, env);
  std::pair<double, double> lengths{0.0, 0.0};
  rep.sampling_acc = eval_sampling(policy, questions, env, seed, &lengths);
  rep.mean_steps = lengths.first;
  rep.mean_tokens = lengths.second;
  rep.pass_at_k = eval_pass_at_k(policy, questions, env, k, seed);
  return rep;
}

}  // namespace steprl
