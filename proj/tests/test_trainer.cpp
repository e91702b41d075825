#include <doctest.h>

#include <cmath>

#include "steprl/env.hpp"
#include "steprl/policy.hpp"
#include "steprl/reward_models.hpp"
#include "steprl/trainer.hpp"
#include "support/oracle.hpp"

using namespace steprl;

namespace {

OptimConfig small_optim() {
  OptimConfig cfg;
  cfg.questions_per_batch = 4;
  cfg.solutions_per_question = 8;
  cfg.minibatches_per_batch = 4;
  cfg.iterations = 2;
  return cfg;
}

RolloutBatch make_batch(const EnvConfig& env, const PolicyParams& policy, const OptimConfig& cfg,
                        std::uint64_t qseed = 700, std::uint64_t rseed = 701) {
  const auto questions = sample_questions(env, cfg.questions_per_batch, qseed);
  return rollout(policy, policy, questions, cfg, env, rseed, 0);
}

}  // namespace

TEST_CASE("rollout produces the configured trajectory count") {
  const EnvConfig env = default_env_config();
  const PolicyParams policy = init_policy(env, 30);
  OptimConfig cfg = small_optim();
  cfg.questions_per_batch = 2;
  const auto questions = sample_questions(env, 2, 702);
  const RolloutBatch batch = rollout(policy, policy, questions, cfg, env, 703, 0);
  CHECK(batch.items.size() == 16);
  for (const auto& item : batch.items) {
    CHECK(item.traj.actions.size() == item.traj.solution.steps.size());
    CHECK(item.logp_ref.size() == item.traj.logp.size());
    for (std::size_t k = 0; k < item.traj.logp.size(); ++k) {
      CHECK(std::isfinite(item.traj.logp[k]));
      // Acting policy equals reference here.
      CHECK(item.traj.logp[k] == doctest::Approx(item.logp_ref[k]));
    }
  }

  // Worker count must not change the batch.
  OptimConfig cfg1 = cfg;
  cfg1.workers = 1;
  OptimConfig cfg4 = cfg;
  cfg4.workers = 4;
  const RolloutBatch b1 = rollout(policy, policy, questions, cfg1, env, 703, 0);
  const RolloutBatch b4 = rollout(policy, policy, questions, cfg4, env, 703, 0);
  REQUIRE(b1.items.size() == b4.items.size());
  for (std::size_t i = 0; i < b1.items.size(); ++i) {
    CHECK(render_solution(b1.items[i].traj.solution) ==
          render_solution(b4.items[i].traj.solution));
  }
}

TEST_CASE("kl_term signs and zero cases") {
  CHECK(kl_term(-1.3, -1.3, 0.1) == doctest::Approx(0.0));
  CHECK(kl_term(-0.5, -1.5, 0.0) == doctest::Approx(0.0));
  CHECK(kl_term(-0.5, -1.5, 0.1) > 0.0);
  CHECK(kl_term(-1.5, -0.5, 0.1) < 0.0);
  CHECK_THROWS_AS(kl_term(std::nan(""), 0.0, 0.1), DegenerateError);
}

TEST_CASE("advantages reduce to suffix returns with gamma=lambda=1 and zero baseline") {
  const EnvConfig env = default_env_config();
  const PolicyParams policy = init_policy(env, 31);
  OptimConfig cfg = small_optim();
  cfg.gae_gamma = 1.0;
  cfg.gae_lambda = 1.0;
  cfg.baseline = BaselineKind::Zero;
  cfg.whiten_advantages = false;

  RolloutBatch batch = make_batch(env, policy, cfg);
  ShapingScheme scheme;
  scheme.variant = SchemeVariant::SuccessOnly;
  QuestionSet qset(sample_questions(env, cfg.questions_per_batch, 700));
  assign_rewards(batch, scheme, cfg.coeffs, qset, env, nullptr, nullptr);
  compute_advantages(batch, cfg, policy);

  for (const auto& item : batch.items) {
    double suffix = 0.0;
    for (std::size_t k = item.num_steps(); k-- > 0;) {
      suffix += item.rewards[k];
      CHECK(item.advantages[k] == doctest::Approx(suffix).epsilon(1e-12));
    }
  }
}

TEST_CASE("exact state-mean baseline cancels identical trajectories") {
  const EnvConfig env = default_env_config();
  // Deterministic policy: all rollouts of a question are identical, so the
  // per-bucket mean suffix return equals the suffix return and advantages
  // vanish.
  PolicyParams policy = init_policy(env, 1, 0.0);
  for (int b = 0; b < policy.num_buckets(); ++b) policy.row(b)[0] = 50.0;
  OptimConfig cfg = small_optim();
  cfg.questions_per_batch = 1;
  cfg.minibatches_per_batch = 1;
  cfg.baseline = BaselineKind::StateMean;
  cfg.whiten_advantages = false;

  const auto questions = sample_questions(env, 1, 705);
  RolloutBatch batch = rollout(policy, policy, questions, cfg, env, 706, 0);
  ShapingScheme scheme;
  scheme.variant = SchemeVariant::SuccessOnly;
  QuestionSet qset(questions);
  assign_rewards(batch, scheme, cfg.coeffs, qset, env, nullptr, nullptr);
  compute_advantages(batch, cfg, policy);
  for (const auto& item : batch.items) {
    for (double a : item.advantages) CHECK(a == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("whitened advantages have zero mean per minibatch") {
  const EnvConfig env = default_env_config();
  const PolicyParams policy = init_policy(env, 32);
  OptimConfig cfg = small_optim();
  cfg.whiten_advantages = true;

  RolloutBatch batch = make_batch(env, policy, cfg, 707, 708);
  ShapingScheme scheme;
  scheme.variant = SchemeVariant::SuccessOnly;
  QuestionSet qset(sample_questions(env, cfg.questions_per_batch, 707));
  assign_rewards(batch, scheme, cfg.coeffs, qset, env, nullptr, nullptr);
  compute_advantages(batch, cfg, policy);

  const std::size_t per_mb = batch.items.size() / 4;
  for (std::size_t m = 0; m < 4; ++m) {
    double sum = 0.0;
    double n = 0.0;
    for (std::size_t i = m * per_mb; i < (m + 1) * per_mb; ++i) {
      for (double a : batch.items[i].advantages) {
        sum += a;
        n += 1.0;
      }
    }
    CHECK(std::abs(sum / n) < 1e-9);
  }
}

TEST_CASE("ppo_update: zero advantages and zero clip range leave parameters unchanged") {
  const EnvConfig env = default_env_config();
  const PolicyParams policy = init_policy(env, 33);
  OptimConfig cfg = small_optim();

  RolloutBatch batch = make_batch(env, policy, cfg, 709, 710);
  for (auto& item : batch.items) item.advantages.assign(item.num_steps(), 0.0);
  PolicyParams updated = policy;
  ppo_update(updated, batch, cfg);
  CHECK(updated.logits == policy.logits);

  // Nonzero advantages but epsilon = 0: every step is clipped at the start.
  ShapingScheme scheme;
  scheme.variant = SchemeVariant::SuccessOnly;
  QuestionSet qset(sample_questions(env, cfg.questions_per_batch, 709));
  assign_rewards(batch, scheme, cfg.coeffs, qset, env, nullptr, nullptr);
  compute_advantages(batch, cfg, policy);
  OptimConfig frozen = cfg;
  frozen.ppo_clip_epsilon = 0.0;
  PolicyParams clipped = policy;
  ppo_update(clipped, batch, frozen);
  CHECK(clipped.logits == policy.logits);
}

TEST_CASE("one-step positive advantage raises the chosen template's logit") {
  EnvConfig env;
  env.modulus = 5;
  env.op_templates = {make_op_template("+1"), make_op_template("+2")};
  env.max_steps = 2;
  PolicyParams policy = init_policy(env, 34, 0.0);

  OptimConfig cfg;
  cfg.questions_per_batch = 1;
  cfg.solutions_per_question = 1;
  cfg.minibatches_per_batch = 1;
  cfg.learning_rate = 1.0;
  cfg.whiten_advantages = false;

  RolloutBatch batch;
  RolloutItem item;
  item.traj.solution.question_id = "q0";
  item.traj.solution.steps = {make_answer_step(2)};
  item.traj.buckets = {policy.bucket_of(2, 2)};
  const int chosen = env.answer_action();
  item.traj.actions = {chosen};
  item.traj.logp = {log_prob(policy, item.traj.buckets[0], chosen)};
  item.logp_ref = item.traj.logp;
  item.advantages = {1.0};
  batch.items.push_back(item);

  const double before = policy.row(item.traj.buckets[0])[chosen];
  const double other_before = policy.row(item.traj.buckets[0])[0];
  ppo_update(policy, batch, cfg);
  CHECK(policy.row(item.traj.buckets[0])[chosen] > before);
  CHECK(policy.row(item.traj.buckets[0])[0] < other_before);
}

TEST_CASE("analytic gradient matches central finite differences") {
  const EnvConfig env = default_env_config();
  PolicyParams policy = init_policy(env, 35);
  OptimConfig cfg = small_optim();

  RolloutBatch batch = make_batch(env, policy, cfg, 711, 712);
  ShapingScheme scheme;
  scheme.variant = SchemeVariant::SuccessOnly;
  QuestionSet qset(sample_questions(env, cfg.questions_per_batch, 711));
  assign_rewards(batch, scheme, cfg.coeffs, qset, env, nullptr, nullptr);
  compute_advantages(batch, cfg, policy);

  std::vector<double> grad;
  surrogate_gradient(policy, batch, 0, batch.items.size(), cfg.ppo_clip_epsilon,
                     /*clipped=*/false, grad);

  // Probe 20 random visited parameters with central differences.
  Rng rng(713);
  const double h = 1e-5;
  int probed = 0;
  while (probed < 20) {
    const auto& item = batch.items[rng.next_below(batch.items.size())];
    if (item.num_steps() == 0) continue;
    const std::size_t k = rng.next_below(item.num_steps());
    const int bucket = item.traj.buckets[k];
    const int action = static_cast<int>(rng.next_below(policy.num_actions));
    const std::size_t idx = static_cast<std::size_t>(bucket) *
                                static_cast<std::size_t>(policy.num_actions) +
                            static_cast<std::size_t>(action);
    PolicyParams plus = policy;
    plus.logits[idx] += h;
    PolicyParams minus = policy;
    minus.logits[idx] -= h;
    const double j_plus =
        surrogate_objective(plus, batch, 0, batch.items.size(), cfg.ppo_clip_epsilon, false);
    const double j_minus =
        surrogate_objective(minus, batch, 0, batch.items.size(), cfg.ppo_clip_epsilon, false);
    const double fd = (j_plus - j_minus) / (2.0 * h);
    const double scale = std::max({std::abs(fd), std::abs(grad[idx]), 1e-8});
    CHECK(std::abs(fd - grad[idx]) / scale < 1e-4);
    ++probed;
  }
}

TEST_CASE("delta scheme gradient equals the telescoped per-step form") {
  const EnvConfig env = default_env_config();
  PolicyParams policy = init_policy(env, 36);
  OptimConfig cfg = small_optim();
  cfg.gae_gamma = 1.0;
  cfg.gae_lambda = 1.0;
  cfg.baseline = BaselineKind::Zero;
  cfg.whiten_advantages = false;
  cfg.coeffs.beta = 0.0;  // reward carries no KL term here

  // A PRM with nonzero weights so raw scores vary by state.
  SurrogatePRM prm;
  prm.spec.kind = "prm";
  prm.spec.modulus = env.modulus;
  prm.weights.assign(static_cast<std::size_t>(prm.spec.dim()), 0.0);
  Rng wrng(714);
  for (double& w : prm.weights) w = wrng.next_double(-1.0, 1.0);

  const auto questions = sample_questions(env, cfg.questions_per_batch, 715);
  RolloutBatch batch = rollout(policy, policy, questions, cfg, env, 716, 0);
  ShapingScheme scheme;
  scheme.variant = SchemeVariant::PR_Delta;
  QuestionSet qset(questions);
  assign_rewards(batch, scheme, cfg.coeffs, qset, env, &prm, nullptr);
  compute_advantages(batch, cfg, policy);

  std::vector<double> grad;
  surrogate_gradient(policy, batch, 0, batch.items.size(), cfg.ppo_clip_epsilon,
                     /*clipped=*/false, grad);

  // Direct form from the telescoped return: sum_k grad log pi(s_k) *
  // (alpha * raw_k + success_coef * correct), averaged over steps.
  std::vector<double> direct(policy.logits.size(), 0.0);
  double n = 0.0;
  for (const auto& item : batch.items) n += static_cast<double>(item.num_steps());
  for (const auto& item : batch.items) {
    const std::size_t K = item.num_steps();
    for (std::size_t k = 0; k < K; ++k) {
      const double weight =
          k + 1 < K ? cfg.coeffs.alpha * item.raw[k] +
                          cfg.coeffs.success_coef * (item.correct ? 1.0 : 0.0)
                    : cfg.coeffs.success_coef * (item.correct ? 1.0 : 0.0);
      const int bucket = item.traj.buckets[k];
      const int action = item.traj.actions[k];
      const std::vector<double> probs = action_probs(policy, bucket);
      double* row = direct.data() + static_cast<std::size_t>(bucket) *
                                        static_cast<std::size_t>(policy.num_actions);
      for (int b = 0; b < policy.num_actions; ++b) {
        row[b] += weight * ((b == action ? 1.0 : 0.0) - probs[static_cast<std::size_t>(b)]) / n;
      }
    }
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    CHECK(std::abs(grad[i] - direct[i]) <= 1e-9);
  }
}

TEST_CASE("PR-Clip-Delta keeps every realized trajectory return bounded") {
  const EnvConfig env = default_env_config();
  const PolicyParams policy = init_policy(env, 37);
  OptimConfig cfg = small_optim();

  SurrogatePRM prm;
  prm.spec.kind = "prm";
  prm.spec.modulus = env.modulus;
  prm.weights.assign(static_cast<std::size_t>(prm.spec.dim()), 0.0);
  Rng wrng(717);
  for (double& w : prm.weights) w = wrng.next_double(-1.0, 1.0);

  const auto questions = sample_questions(env, cfg.questions_per_batch, 718);
  RolloutBatch batch = rollout(policy, policy, questions, cfg, env, 719, 0);
  ShapingScheme scheme;
  scheme.variant = SchemeVariant::PR_Clip_Delta;
  scheme.eta = 0.55;
  QuestionSet qset(questions);
  assign_rewards(batch, scheme, cfg.coeffs, qset, env, &prm, nullptr);
  for (const auto& item : batch.items) {
    const double ret = trajectory_return(item.shaped, item.correct, cfg.coeffs);
    CHECK(ret <= cfg.coeffs.alpha * 1.0 + cfg.coeffs.success_coef);
  }
}

TEST_CASE("train is reproducible and rejects bad configs") {
  const EnvConfig env = default_env_config();
  OptimConfig cfg = small_optim();
  cfg.questions_per_batch = 8;
  cfg.solutions_per_question = 4;
  cfg.minibatches_per_batch = 4;
  cfg.iterations = 3;
  cfg.epochs = 2;  // exercise the multi-epoch PPO path
  Seeds seeds;

  const auto train_qs = sample_questions(env, 8, 720);
  const auto eval_qs = sample_questions(env, 20, 721);
  const TrainingLog a = train(env, ShapingScheme{}, cfg, seeds, train_qs, eval_qs, 4, nullptr,
                              nullptr);
  const TrainingLog b = train(env, ShapingScheme{}, cfg, seeds, train_qs, eval_qs, 4, nullptr,
                              nullptr);
  REQUIRE(a.rows.size() == b.rows.size());
  REQUIRE(a.rows.size() == 4);  // iterations + final row
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].greedy_acc == b.rows[i].greedy_acc);
    CHECK(a.rows[i].sample_acc == b.rows[i].sample_acc);
    CHECK(a.rows[i].mean_return == b.rows[i].mean_return);
    CHECK(a.rows[i].mean_steps == b.rows[i].mean_steps);
    CHECK(a.rows[i].mean_kl == b.rows[i].mean_kl);
  }

  OptimConfig bad = cfg;
  bad.minibatches_per_batch = 7;  // does not divide 8 * 4
  CHECK_THROWS_AS(train(env, ShapingScheme{}, bad, seeds, train_qs, eval_qs, 4, nullptr, nullptr),
                  ConfigError);

  ShapingScheme needs_prm;
  needs_prm.variant = SchemeVariant::PR;
  CHECK_THROWS_AS(
      train(env, needs_prm, cfg, seeds, train_qs, eval_qs, 4, nullptr, nullptr), ConfigError);
}

TEST_CASE("every reward scheme trains end to end") {
  const EnvConfig env = default_env_config();
  const PolicyParams init_pol = init_policy(env, 38);
  const auto rm_qs = sample_questions(env, 24, 730);
  const auto sols = collect_rm_dataset(init_pol, rm_qs, 8, env, 731);
  QuestionSet qset(rm_qs);
  AnnotationConfig ann;
  ann.completions_per_prefix = 4;
  ann.completer = init_pol;
  const auto prefs = build_prm_dataset(sols, qset, ann, env, 732);
  RmTrainConfig rmcfg;
  rmcfg.epochs = 60;
  const SurrogatePRM prm = train_prm(prefs, qset, rmcfg, env);
  const SurrogateORM orm = train_orm(sols, qset, rmcfg, env);

  OptimConfig cfg = small_optim();
  cfg.questions_per_batch = 8;
  cfg.solutions_per_question = 4;
  cfg.iterations = 2;
  Seeds seeds;
  const auto train_qs = sample_questions(env, 8, 733);
  const auto eval_qs = sample_questions(env, 10, 734);

  for (SchemeVariant v : {SchemeVariant::SuccessOnly, SchemeVariant::OR, SchemeVariant::PR,
                          SchemeVariant::PR_Clip, SchemeVariant::PR_Delta,
                          SchemeVariant::PR_Clip_Delta, SchemeVariant::PR_Normed,
                          SchemeVariant::LengthNorm, SchemeVariant::LengthPenalty}) {
    CAPTURE(scheme_name(v));
    ShapingScheme scheme;
    scheme.variant = v;
    scheme.eta = 0.5;
    scheme.c_penalty = 0.1;
    const TrainingLog log = train(env, scheme, cfg, seeds, train_qs, eval_qs, 4,
                                  scheme.uses_prm() ? &prm : nullptr,
                                  scheme.uses_orm() ? &orm : nullptr);
    REQUIRE(log.rows.size() == 3);
    for (const auto& row : log.rows) {
      CHECK(std::isfinite(row.mean_return));
      CHECK(std::isfinite(row.mean_kl));
      CHECK(row.greedy_acc >= 0.0);
      CHECK(row.greedy_acc <= 1.0);
    }
  }
}
