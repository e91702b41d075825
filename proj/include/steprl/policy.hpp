#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "steprl/core.hpp"
#include "steprl/env.hpp"
#include "steprl/rng.hpp"

namespace steprl {

// Tabular softmax policy over step templates. State buckets index on
// (current value, target), so the table is exact for the modular-chain
// environment: bucket = value * modulus + target.
struct PolicyParams {
  int modulus = 0;
  int num_actions = 0;
  double temperature = 1.0;
  std::vector<double> logits;  // row-major [bucket][action]

  int num_buckets() const { return modulus * modulus; }

  int bucket_of(int value, int target) const { return value * modulus + target; }

  double* row(int bucket) {
    return logits.data() + static_cast<std::size_t>(bucket) * static_cast<std::size_t>(num_actions);
  }
  const double* row(int bucket) const {
    return logits.data() + static_cast<std::size_t>(bucket) * static_cast<std::size_t>(num_actions);
  }
};

// Near-uniform start: tiny seeded noise so greedy decoding has no ties.
inline PolicyParams init_policy(const EnvConfig& env, std::uint64_t seed,
                                double noise_scale = 0.01) {
  PolicyParams p;
  p.modulus = env.modulus;
  p.num_actions = env.num_actions();
  p.logits.resize(static_cast<std::size_t>(p.num_buckets()) *
                  static_cast<std::size_t>(p.num_actions));
  Rng rng = Rng::derive(seed, {0});
  for (double& l : p.logits) l = rng.next_double(-noise_scale, noise_scale);
  return p;
}

inline std::vector<double> action_log_probs(const PolicyParams& p, int bucket) {
  const double* r = p.row(bucket);
  const double inv_t = 1.0 / p.temperature;
  std::vector<double> lp(static_cast<std::size_t>(p.num_actions));
  double mx = -1e300;
  for (int a = 0; a < p.num_actions; ++a) mx = std::max(mx, r[a] * inv_t);
  double z = 0.0;
  for (int a = 0; a < p.num_actions; ++a) {
    lp[static_cast<std::size_t>(a)] = r[a] * inv_t - mx;
    z += std::exp(lp[static_cast<std::size_t>(a)]);
  }
  const double log_z = std::log(z);
  for (double& v : lp) v -= log_z;
  return lp;
}

inline std::vector<double> action_probs(const PolicyParams& p, int bucket) {
  std::vector<double> probs = action_log_probs(p, bucket);
  for (double& v : probs) v = std::exp(v);
  return probs;
}

inline double log_prob(const PolicyParams& p, int bucket, int action) {
  return action_log_probs(p, bucket)[static_cast<std::size_t>(action)];
}

inline int greedy_action(const PolicyParams& p, int bucket) {
  const double* r = p.row(bucket);
  int best = 0;
  for (int a = 1; a < p.num_actions; ++a) {
    if (r[a] > r[best]) best = a;
  }
  return best;
}

inline int sample_action(const PolicyParams& p, int bucket, Rng& rng) {
  const std::vector<double> probs = action_probs(p, bucket);
  const double u = rng.next_double();
  double acc = 0.0;
  for (int a = 0; a < p.num_actions; ++a) {
    acc += probs[static_cast<std::size_t>(a)];
    if (u < acc) return a;
  }
  return p.num_actions - 1;
}

// One rolled-out episode with the bookkeeping the trainer needs.
struct Trajectory {
  Solution solution;
  std::vector<int> buckets;       // state bucket at each step
  std::vector<int> actions;       // action index at each step
  std::vector<double> logp;       // log prob under the acting policy
  bool truncated = false;
};

// Plays one episode. Compute/filler actions consume the step budget; the
// answer action is always available and ends the episode. Sampling a
// non-answer action with the budget exhausted truncates the episode without
// emitting that step.
inline Trajectory rollout_episode(const PolicyParams& policy, const Question& q,
                                  const EnvConfig& env, Rng& rng, bool greedy) {
  Trajectory tr;
  tr.solution.question_id = q.id;
  EnvState state{q.start % env.modulus, 0};
  const int answer = env.answer_action();
  for (;;) {
    const int bucket = policy.bucket_of(state.value, q.target);
    const int action = greedy ? greedy_action(policy, bucket) : sample_action(policy, bucket, rng);
    if (action == answer) {
      tr.buckets.push_back(bucket);
      tr.actions.push_back(action);
      tr.logp.push_back(log_prob(policy, bucket, action));
      tr.solution.steps.push_back(make_answer_step(state.value));
      break;
    }
    if (state.steps_taken >= env.max_steps) {
      tr.truncated = true;
      break;
    }
    const StepTemplate& t = env.action_template(action);
    tr.buckets.push_back(bucket);
    tr.actions.push_back(action);
    tr.logp.push_back(log_prob(policy, bucket, action));
    tr.solution.steps.push_back(make_step(t));
    state = apply_step(state, t, env);
  }
  tr.solution.token_count = count_tokens(render_solution(tr.solution));
  tr.solution.correct = check_correct(q, tr.solution, env);
  return tr;
}

// Continues an episode from an arbitrary mid-solution state; used by the
// annotation completer.
inline Solution complete_from(const PolicyParams& policy, const Question& q, EnvState state,
                              std::vector<Step> steps_so_far, const EnvConfig& env, Rng& rng) {
  Solution s;
  s.question_id = q.id;
  s.steps = std::move(steps_so_far);
  const int answer = env.answer_action();
  for (;;) {
    const int bucket = policy.bucket_of(state.value, q.target);
    const int action = sample_action(policy, bucket, rng);
    if (action == answer) {
      s.steps.push_back(make_answer_step(state.value));
      break;
    }
    if (state.steps_taken >= env.max_steps) break;
    const StepTemplate& t = env.action_template(action);
    s.steps.push_back(make_step(t));
    state = apply_step(state, t, env);
  }
  s.token_count = count_tokens(render_solution(s));
  s.correct = check_correct(q, s, env);
  return s;
}

}  // namespace steprl
