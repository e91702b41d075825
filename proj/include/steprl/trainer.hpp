#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "steprl/core.hpp"
#include "steprl/env.hpp"
#include "steprl/metrics.hpp"
#include "steprl/policy.hpp"
#include "steprl/reward_models.hpp"
#include "steprl/rng.hpp"
#include "steprl/shaping.hpp"

namespace steprl {

enum class BaselineKind { Zero, StateMean };

struct OptimConfig {
  int questions_per_batch = 128;
  int solutions_per_question = 8;
  int minibatches_per_batch = 4;
  double learning_rate = 8.0;
  RewardCoefficients coeffs;  // alpha, success_coef, and the KL coefficient beta
  double ppo_clip_epsilon = 0.2;
  double gae_gamma = 1.0;
  double gae_lambda = 0.95;
  int epochs = 1;  // PPO epochs per batch
  int iterations = 60;
  bool whiten_advantages = true;
  BaselineKind baseline = BaselineKind::StateMean;
  int workers = 0;  // 0 = hardware concurrency

  void validate() const {
    coeffs.validate();
    if (questions_per_batch < 1) throw ConfigError("optim: questions_per_batch must be >= 1");
    if (solutions_per_question < 1) throw ConfigError("optim: solutions_per_question must be >= 1");
    if (minibatches_per_batch < 1) throw ConfigError("optim: minibatches_per_batch must be >= 1");
    if ((questions_per_batch * solutions_per_question) % minibatches_per_batch != 0) {
      throw ConfigError("optim: minibatches_per_batch must divide the batch size");
    }
    if (!(learning_rate > 0.0)) throw ConfigError("optim: learning_rate must be > 0");
    if (!(ppo_clip_epsilon >= 0.0)) throw ConfigError("optim: ppo_clip_epsilon must be >= 0");
    if (!(gae_gamma >= 0.0 && gae_gamma <= 1.0)) throw ConfigError("optim: gamma in [0,1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("optim: lambda in [0,1]");
    if (epochs < 1) throw ConfigError("optim: epochs must be >= 1");
    if (iterations < 1) throw ConfigError("optim: iterations must be >= 1");
  }
};

struct RolloutItem {
  Trajectory traj;
  std::vector<double> logp_ref;
  StepRewardSeq raw;          // dense reward source before shaping
  StepRewardSeq shaped;       // after the scheme's transform
  std::vector<double> rewards;     // alpha*shaped + success at K - beta*KL
  std::vector<double> advantages;  // filled by compute_advantages
  bool correct = false;

  std::size_t num_steps() const { return traj.solution.steps.size(); }
};

struct RolloutBatch {
  std::vector<RolloutItem> items;
  std::size_t total_steps() const {
    std::size_t n = 0;
    for (const auto& it : items) n += it.num_steps();
    return n;
  }
};

// Deterministic parallel map over [0, n): results depend only on the index,
// never on worker count or scheduling.
template <typename Fn>
inline void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t stride = static_cast<std::size_t>(workers);
  std::vector<std::thread> pool;
  pool.reserve(stride);
  for (std::size_t w = 0; w < stride; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < n; i += stride) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

// Samples questions_per_batch x solutions_per_question trajectories from the
// policy and records log-probs under both the acting and reference policies.
inline RolloutBatch rollout(const PolicyParams& policy, const PolicyParams& ref,
                            const std::vector<Question>& questions, const OptimConfig& cfg,
                            const EnvConfig& env, std::uint64_t seed, std::uint64_t iteration) {
  if (static_cast<int>(questions.size()) != cfg.questions_per_batch) {
    throw ConfigError("rollout: question count does not match questions_per_batch");
  }
  RolloutBatch batch;
  const std::size_t n = static_cast<std::size_t>(cfg.questions_per_batch) *
                        static_cast<std::size_t>(cfg.solutions_per_question);
  batch.items.resize(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    const std::size_t qi = i / static_cast<std::size_t>(cfg.solutions_per_question);
    const std::size_t si = i % static_cast<std::size_t>(cfg.solutions_per_question);
    Rng rng = Rng::derive(seed, {iteration, qi, si});
    RolloutItem item;
    item.traj = rollout_episode(policy, questions[qi], env, rng, /*greedy=*/false);
    item.logp_ref.resize(item.traj.actions.size());
    for (std::size_t k = 0; k < item.traj.actions.size(); ++k) {
      item.logp_ref[k] = log_prob(ref, item.traj.buckets[k], item.traj.actions[k]);
    }
    item.correct = item.traj.solution.correct;
    batch.items[i] = std::move(item);
  });
  return batch;
}

// Per-step KL penalty term beta * (logp_theta - logp_ref); subtracted from
// the step reward before advantage estimation.
inline double kl_term(double logp_theta, double logp_ref, double beta) {
  if (!std::isfinite(logp_theta) || !std::isfinite(logp_ref)) {
    throw DegenerateError("kl_term: non-finite log probability");
  }
  return beta * (logp_theta - logp_ref);
}

// Fills raw/shaped/rewards for every item. The PRM is required for PR-family
// schemes, the ORM for SR+OR.
inline void assign_rewards(RolloutBatch& batch, const ShapingScheme& scheme,
                           const RewardCoefficients& coeffs, const QuestionSet& questions,
                           const EnvConfig& env, const SurrogatePRM* prm,
                           const SurrogateORM* orm) {
  if (scheme.uses_prm() && prm == nullptr) throw ConfigError("scheme requires a PRM checkpoint");
  if (scheme.uses_orm() && orm == nullptr) throw ConfigError("scheme requires an ORM checkpoint");
  std::vector<StepRewardSeq> raws(batch.items.size());
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    const RolloutItem& item = batch.items[i];
    const Question& q = questions.by_id(item.traj.solution.question_id);
    const std::size_t K = item.num_steps();
    if (K == 0) throw DegenerateError("assign_rewards: empty trajectory");
    if (scheme.uses_prm()) {
      raws[i] = prm_scores(*prm, q, item.traj.solution, env);
    } else if (scheme.uses_orm()) {
      raws[i].assign(K, 0.0);
      raws[i][K - 1] = orm_score(*orm, q, item.traj.solution, env);
    } else {
      raws[i].assign(K, 0.0);
    }
  }
  std::vector<StepRewardSeq> shaped = shape_batch(scheme, raws);
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    RolloutItem& item = batch.items[i];
    const std::size_t K = item.num_steps();
    item.raw = std::move(raws[i]);
    item.shaped = std::move(shaped[i]);
    item.rewards.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      double r = coeffs.alpha * item.shaped[k];
      if (k + 1 == K && item.correct) r += coeffs.success_coef;
      r -= kl_term(item.traj.logp[k], item.logp_ref[k], coeffs.beta);
      item.rewards[k] = r;
    }
  }
}

namespace detail {

// Contiguous minibatch ranges over items; sizes differ by at most one when
// the batch is not divisible (validate() enforces divisibility for training).
inline std::vector<std::pair<std::size_t, std::size_t>> minibatch_ranges(std::size_t n_items,
                                                                         int minibatches) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t mb = static_cast<std::size_t>(minibatches);
  std::size_t begin = 0;
  for (std::size_t m = 0; m < mb; ++m) {
    const std::size_t count = n_items / mb + (m < n_items % mb ? 1 : 0);
    out.emplace_back(begin, begin + count);
    begin += count;
  }
  return out;
}

}  // namespace detail

// GAE over the step-level MDP with an empirical state-bucket value baseline,
// then optional per-minibatch whitening.
inline void compute_advantages(RolloutBatch& batch, const OptimConfig& cfg,
                               const PolicyParams& policy) {
  const double gamma = cfg.gae_gamma;
  const double lambda = cfg.gae_lambda;

  std::vector<double> value_table;
  std::vector<double> value_count;
  if (cfg.baseline == BaselineKind::StateMean) {
    value_table.assign(static_cast<std::size_t>(policy.num_buckets()), 0.0);
    value_count.assign(static_cast<std::size_t>(policy.num_buckets()), 0.0);
    for (const auto& item : batch.items) {
      double suffix = 0.0;
      std::vector<double> returns(item.num_steps());
      for (std::size_t k = item.num_steps(); k-- > 0;) {
        suffix = item.rewards[k] + gamma * suffix;
        returns[k] = suffix;
      }
      for (std::size_t k = 0; k < item.num_steps(); ++k) {
        value_table[static_cast<std::size_t>(item.traj.buckets[k])] += returns[k];
        value_count[static_cast<std::size_t>(item.traj.buckets[k])] += 1.0;
      }
    }
    for (std::size_t b = 0; b < value_table.size(); ++b) {
      if (value_count[b] > 0.0) value_table[b] /= value_count[b];
    }
  }

  auto value_of = [&](int bucket) {
    if (cfg.baseline == BaselineKind::Zero) return 0.0;
    return value_table[static_cast<std::size_t>(bucket)];
  };

  for (auto& item : batch.items) {
    const std::size_t K = item.num_steps();
    item.advantages.assign(K, 0.0);
    double gae = 0.0;
    for (std::size_t k = K; k-- > 0;) {
      const double v = value_of(item.traj.buckets[k]);
      const double v_next = (k + 1 < K) ? value_of(item.traj.buckets[k + 1]) : 0.0;
      const double delta = item.rewards[k] + gamma * v_next - v;
      gae = delta + gamma * lambda * gae;
      item.advantages[k] = gae;
    }
  }

  if (cfg.whiten_advantages) {
    for (const auto& [begin, end] : detail::minibatch_ranges(batch.items.size(),
                                                             cfg.minibatches_per_batch)) {
      double sum = 0.0;
      double n = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        for (double a : batch.items[i].advantages) {
          sum += a;
          n += 1.0;
        }
      }
      if (n < 1.0) continue;
      const double mean = sum / n;
      double ss = 0.0;
      for (std::size_t i = begin; i < end; ++i) {
        for (double a : batch.items[i].advantages) ss += (a - mean) * (a - mean);
      }
      const double sd = std::sqrt(ss / std::max(n - 1.0, 1.0));
      const double inv = 1.0 / std::max(sd, 1e-8);
      for (std::size_t i = begin; i < end; ++i) {
        for (double& a : batch.items[i].advantages) a = (a - mean) * inv;
      }
    }
  }
}

// Clipped-surrogate objective over items [begin, end). With `clipped` false
// this is the plain importance-weighted objective used by the gradient check.
inline double surrogate_objective(const PolicyParams& policy, const RolloutBatch& batch,
                                  std::size_t begin, std::size_t end, double clip_epsilon,
                                  bool clipped) {
  double total = 0.0;
  double n = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const RolloutItem& item = batch.items[i];
    for (std::size_t k = 0; k < item.num_steps(); ++k) {
      const double lp_new = log_prob(policy, item.traj.buckets[k], item.traj.actions[k]);
      const double ratio = std::exp(lp_new - item.traj.logp[k]);
      const double a = item.advantages[k];
      if (clipped) {
        const double lo = 1.0 - clip_epsilon;
        const double hi = 1.0 + clip_epsilon;
        total += std::min(ratio * a, std::clamp(ratio, lo, hi) * a);
      } else {
        total += ratio * a;
      }
      n += 1.0;
    }
  }
  return n > 0.0 ? total / n : 0.0;
}

// Analytic gradient of the surrogate objective with respect to the logits.
// For the clipped form, a step contributes gradient only while the unclipped
// branch is strictly active: (A > 0 and ratio < 1+eps) or (A < 0 and
// ratio > 1-eps). At epsilon = 0 every step is clipped and the gradient is 0.
inline void surrogate_gradient(const PolicyParams& policy, const RolloutBatch& batch,
                               std::size_t begin, std::size_t end, double clip_epsilon,
                               bool clipped, std::vector<double>& grad) {
  grad.assign(policy.logits.size(), 0.0);
  double n = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    n += static_cast<double>(batch.items[i].num_steps());
  }
  if (n == 0.0) return;
  const double inv_n = 1.0 / n;
  const double inv_t = 1.0 / policy.temperature;
  for (std::size_t i = begin; i < end; ++i) {
    const RolloutItem& item = batch.items[i];
    for (std::size_t k = 0; k < item.num_steps(); ++k) {
      const int bucket = item.traj.buckets[k];
      const int action = item.traj.actions[k];
      const std::vector<double> probs = action_probs(policy, bucket);
      const double lp_new = std::log(probs[static_cast<std::size_t>(action)]);
      const double ratio = std::exp(lp_new - item.traj.logp[k]);
      const double a = item.advantages[k];
      if (clipped) {
        const bool active = (a > 0.0 && ratio < 1.0 + clip_epsilon) ||
                            (a < 0.0 && ratio > 1.0 - clip_epsilon);
        if (!active) continue;
      }
      const double scale = ratio * a * inv_n * inv_t;
      double* row = grad.data() +
                    static_cast<std::size_t>(bucket) * static_cast<std::size_t>(policy.num_actions);
      for (int b = 0; b < policy.num_actions; ++b) {
        row[b] += scale * ((b == action ? 1.0 : 0.0) - probs[static_cast<std::size_t>(b)]);
      }
    }
  }
}

struct PpoStats {
  double loss = 0.0;        // negative surrogate objective, averaged over updates
  double mean_ratio = 1.0;  // importance ratio after the final update
  double mean_kl_ref = 0.0; // sampled mean of logp_theta - logp_ref after updates
  int updates = 0;
};

// Clipped-surrogate ascent, one pass per epoch over contiguous minibatches.
inline PpoStats ppo_update(PolicyParams& policy, const RolloutBatch& batch,
                           const OptimConfig& cfg) {
  PpoStats stats;
  std::vector<double> grad;
  const auto ranges = detail::minibatch_ranges(batch.items.size(), cfg.minibatches_per_batch);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& [begin, end] : ranges) {
      surrogate_gradient(policy, batch, begin, end, cfg.ppo_clip_epsilon, /*clipped=*/true, grad);
      for (double g : grad) {
        if (!std::isfinite(g)) {
          throw DegenerateError("ppo_update: non-finite gradient (minibatch " +
                                std::to_string(begin) + ".." + std::to_string(end) + ")");
        }
      }
      for (std::size_t j = 0; j < grad.size(); ++j) {
        policy.logits[j] += cfg.learning_rate * grad[j];
      }
      stats.loss += -surrogate_objective(policy, batch, begin, end, cfg.ppo_clip_epsilon, true);
      ++stats.updates;
    }
  }
  if (stats.updates > 0) stats.loss /= static_cast<double>(stats.updates);

  double ratio_sum = 0.0;
  double kl_sum = 0.0;
  double n = 0.0;
  for (const auto& item : batch.items) {
    for (std::size_t k = 0; k < item.num_steps(); ++k) {
      const double lp_new = log_prob(policy, item.traj.buckets[k], item.traj.actions[k]);
      ratio_sum += std::exp(lp_new - item.traj.logp[k]);
      kl_sum += lp_new - item.logp_ref[k];
      n += 1.0;
    }
  }
  if (n > 0.0) {
    stats.mean_ratio = ratio_sum / n;
    stats.mean_kl_ref = kl_sum / n;
  }
  return stats;
}

struct Seeds {
  std::uint64_t policy = 1;
  std::uint64_t env = 2;
  std::uint64_t annotation = 3;
  std::uint64_t eval = 4;
};

struct TrainRow {
  int iter = 0;
  double greedy_acc = 0.0;
  double sample_acc = 0.0;
  double pass16 = 0.0;
  double mean_steps = 0.0;
  double mean_tokens = 0.0;
  double mean_return = 0.0;
  double mean_kl = 0.0;
};

struct TrainingLog {
  std::vector<TrainRow> rows;
};

// Full training run. A row is logged whenever iter is a multiple of
// eval_cadence, plus a final row; row i reports the policy after i updates.
// The final row's batch statistics come from a fresh (unused) rollout batch
// so the columns stay comparable.
inline TrainingLog train(const EnvConfig& env, const ShapingScheme& scheme,
                         const OptimConfig& cfg, const Seeds& seeds,
                         const std::vector<Question>& train_questions,
                         const std::vector<Question>& eval_questions, int pass_k,
                         const SurrogatePRM* prm, const SurrogateORM* orm,
                         PolicyParams* final_policy = nullptr,
                         const PolicyParams* initial_policy = nullptr, int eval_cadence = 1,
                         RolloutBatch* final_batch = nullptr) {
  cfg.validate();
  env.validate();
  if (eval_cadence < 1) throw ConfigError("train: eval_cadence must be >= 1");
  if (static_cast<int>(train_questions.size()) < cfg.questions_per_batch) {
    throw ConfigError("train: not enough training questions for one batch");
  }
  QuestionSet qset(train_questions);
  PolicyParams policy =
      initial_policy != nullptr ? *initial_policy : init_policy(env, seeds.policy);
  const PolicyParams ref = policy;  // frozen reference

  TrainingLog log;
  for (int iter = 0; iter <= cfg.iterations; ++iter) {
    const bool log_row = iter % eval_cadence == 0 || iter == cfg.iterations;

    // Deterministic per-iteration question subset.
    std::vector<Question> batch_questions(static_cast<std::size_t>(cfg.questions_per_batch));
    for (int i = 0; i < cfg.questions_per_batch; ++i) {
      Rng rng = Rng::derive(seeds.env, {0x71, static_cast<std::uint64_t>(iter),
                                        static_cast<std::uint64_t>(i)});
      batch_questions[static_cast<std::size_t>(i)] =
          train_questions[rng.next_below(train_questions.size())];
    }
    RolloutBatch batch = rollout(policy, ref, batch_questions, cfg, env, seeds.env,
                                 static_cast<std::uint64_t>(iter));
    QuestionSet batch_qset(batch_questions);
    assign_rewards(batch, scheme, cfg.coeffs, batch_qset, env, prm, orm);

    if (log_row) {
      TrainRow row;
      row.iter = iter;
      const EvalReport rep =
          evaluate_policy(policy, eval_questions, env, pass_k,
                          Rng::mix(seeds.eval ^ static_cast<std::uint64_t>(iter)));
      row.greedy_acc = rep.greedy_acc;
      row.sample_acc = rep.sampling_acc;
      row.pass16 = rep.pass_at_k;
      row.mean_steps = rep.mean_steps;
      row.mean_tokens = rep.mean_tokens;
      double ret_sum = 0.0;
      double kl_sum = 0.0;
      double kl_n = 0.0;
      for (const auto& item : batch.items) {
        ret_sum += trajectory_return(item.shaped, item.correct, cfg.coeffs);
        for (std::size_t k = 0; k < item.num_steps(); ++k) {
          kl_sum += item.traj.logp[k] - item.logp_ref[k];
          kl_n += 1.0;
        }
      }
      row.mean_return = ret_sum / static_cast<double>(batch.items.size());
      row.mean_kl = kl_n > 0.0 ? kl_sum / kl_n : 0.0;
      log.rows.push_back(row);
    }

    if (iter == cfg.iterations) {
      if (final_batch != nullptr) *final_batch = std::move(batch);
      break;
    }
    compute_advantages(batch, cfg, policy);
    ppo_update(policy, batch, cfg);
  }
  if (final_policy != nullptr) *final_policy = policy;
  return log;
}

}  // namespace steprl
