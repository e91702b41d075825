#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "steprl/audit.hpp"
#include "steprl/config.hpp"
#include "steprl/core.hpp"
#include "steprl/env.hpp"
#include "steprl/io.hpp"
#include "steprl/metrics.hpp"
#include "steprl/policy.hpp"
#include "steprl/reward_models.hpp"
#include "steprl/shaping.hpp"
#include "steprl/trainer.hpp"

namespace steprl {

namespace fs = std::filesystem;

namespace pipedetail {

// Disjoint question pools per purpose, all derived from the named seeds.
inline std::uint64_t subseed(std::uint64_t seed, std::uint64_t tag) {
  return Rng::mix(seed ^ Rng::mix(tag));
}

inline std::string ensure_dir(const std::string& base, const std::string& sub) {
  const fs::path dir = fs::path(base) / sub;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir.string());
  return dir.string();
}

inline void check_policy_env(const PolicyParams& policy, const EnvConfig& env,
                             const std::string& what) {
  if (policy.modulus != env.modulus || policy.num_actions != env.num_actions()) {
    throw ConfigError(what + ": checkpoint was trained for a different environment (modulus " +
                      std::to_string(policy.modulus) + ", " +
                      std::to_string(policy.num_actions) + " actions)");
  }
}

inline void check_rm_env(const FeatureSpec& spec, const EnvConfig& env, const std::string& what) {
  if (spec.modulus != env.modulus) {
    throw ConfigError(what + ": checkpoint was trained for modulus " +
                      std::to_string(spec.modulus) + ", env has " +
                      std::to_string(env.modulus));
  }
}

}  // namespace pipedetail

inline std::vector<Question> rm_question_pool(const ExperimentConfig& c) {
  return sample_questions(c.env, c.rm_questions, pipedetail::subseed(c.seeds.env, 1));
}
inline std::vector<Question> train_question_pool(const ExperimentConfig& c) {
  return sample_questions(c.env, c.train_questions, pipedetail::subseed(c.seeds.env, 2));
}
inline std::vector<Question> eval_question_pool(const ExperimentConfig& c) {
  return sample_questions(c.env, c.eval_questions, pipedetail::subseed(c.seeds.eval, 1));
}

struct CollectResult {
  std::string dir;
  std::size_t solutions = 0;
  std::size_t prefixes = 0;
};

// Rollout dataset for reward-model training: solutions labeled by the
// checker, per-step prefixes labeled by Monte-Carlo completion.
inline CollectResult cmd_collect(const ExperimentConfig& c) {
  c.validate();
  const std::string dir = pipedetail::ensure_dir(c.output_dir, "collect");
  const PolicyParams policy = init_policy(c.env, c.seeds.policy);
  const std::vector<Question> questions = rm_question_pool(c);

  const std::vector<LabeledSolution> solutions = collect_rm_dataset(
      policy, questions, c.samples_per_question, c.env, pipedetail::subseed(c.seeds.env, 3));

  AnnotationConfig ann;
  ann.completions_per_prefix = c.completions_per_prefix;
  ann.completer = policy;
  QuestionSet qset(questions);
  const std::vector<LabeledPrefix> prefixes =
      build_prm_dataset(solutions, qset, ann, c.env, c.seeds.annotation, c.optim.workers);

  write_questions_jsonl((fs::path(dir) / "questions_rm.jsonl").string(), questions);
  write_solutions_jsonl((fs::path(dir) / "rm_solutions.jsonl").string(), solutions);
  write_prefixes_jsonl((fs::path(dir) / "rm_prefixes.jsonl").string(), prefixes);
  write_manifest(dir, c.hash(), c.seeds,
                 {"questions_rm.jsonl", "rm_solutions.jsonl", "rm_prefixes.jsonl"},
                 json{{"solutions", solutions.size()}, {"prefixes", prefixes.size()}});
  return CollectResult{dir, solutions.size(), prefixes.size()};
}

struct TrainRmResult {
  std::string dir;
  double prm_final_loss = 0.0;
  double orm_final_loss = 0.0;
};

inline TrainRmResult cmd_train_rm(const ExperimentConfig& c, const std::string& collect_dir = "") {
  c.validate();
  const std::string src =
      collect_dir.empty() ? (fs::path(c.output_dir) / "collect").string() : collect_dir;
  const std::string dir = pipedetail::ensure_dir(c.output_dir, "rm");

  const auto questions = read_questions_jsonl((fs::path(src) / "questions_rm.jsonl").string());
  const auto solutions = read_solutions_jsonl((fs::path(src) / "rm_solutions.jsonl").string());
  const auto prefixes = read_prefixes_jsonl((fs::path(src) / "rm_prefixes.jsonl").string());
  QuestionSet qset(questions);

  RmTrainStats prm_stats;
  const SurrogatePRM prm = train_prm(prefixes, qset, c.rm_train, c.env, &prm_stats);
  RmTrainStats orm_stats;
  const SurrogateORM orm = train_orm(solutions, qset, c.rm_train, c.env, &orm_stats);

  save_reward_model((fs::path(dir) / "prm.json").string(), prm.spec, prm.weights);
  save_reward_model((fs::path(dir) / "orm.json").string(), orm.spec, orm.weights);
  write_loss_csv((fs::path(dir) / "prm_loss.csv").string(), prm_stats);
  write_loss_csv((fs::path(dir) / "orm_loss.csv").string(), orm_stats);
  write_manifest(dir, c.hash(), c.seeds, {"prm.json", "orm.json", "prm_loss.csv", "orm_loss.csv"},
                 json{{"prm_final_loss", prm_stats.final_loss},
                      {"orm_final_loss", orm_stats.final_loss}});
  return TrainRmResult{dir, prm_stats.final_loss, orm_stats.final_loss};
}

// Clip threshold from the configured quantile of PRM scores on a held-out
// rollout batch played by the initial policy.
inline double calibrate_eta(const ExperimentConfig& c, const SurrogatePRM& prm) {
  const PolicyParams policy = init_policy(c.env, c.seeds.policy);
  const std::vector<Question> questions =
      sample_questions(c.env, std::min(c.rm_questions, 64), pipedetail::subseed(c.seeds.env, 4));
  const std::vector<double> pool =
      prm_score_pool(prm, policy, questions, 4, c.env, pipedetail::subseed(c.seeds.env, 5));
  return empirical_quantile(pool, c.eta_quantile);
}

inline ShapingScheme resolved_scheme(const ExperimentConfig& c, const SurrogatePRM* prm) {
  ShapingScheme scheme = c.scheme();
  if (scheme.uses_clip() && c.eta_auto) {
    if (prm == nullptr) throw ConfigError("clip scheme with eta=auto needs a PRM checkpoint");
    scheme.eta = calibrate_eta(c, *prm);
  }
  return scheme;
}

struct TrainRlResult {
  std::string dir;
  TrainingLog log;
  double eta_used = 0.0;
};

inline TrainRlResult cmd_train_rl(const ExperimentConfig& c, const std::string& rm_dir = "",
                                  const std::string& init_policy_path = "") {
  c.validate();
  const std::string src = rm_dir.empty() ? (fs::path(c.output_dir) / "rm").string() : rm_dir;
  const std::string dir = pipedetail::ensure_dir(c.output_dir, "rl");

  const ShapingScheme base_scheme = c.scheme();
  std::optional<SurrogatePRM> prm;
  std::optional<SurrogateORM> orm;
  if (base_scheme.uses_prm()) {
    prm = load_prm((fs::path(src) / "prm.json").string());
    pipedetail::check_rm_env(prm->spec, c.env, "train-rl PRM");
  }
  if (base_scheme.uses_orm()) {
    orm = load_orm((fs::path(src) / "orm.json").string());
    pipedetail::check_rm_env(orm->spec, c.env, "train-rl ORM");
  }
  const ShapingScheme scheme = resolved_scheme(c, prm ? &*prm : nullptr);

  OptimConfig optim = c.optim;
  optim.coeffs = c.coeffs;

  std::optional<PolicyParams> init;
  if (!init_policy_path.empty()) {
    init = load_policy(init_policy_path);
    pipedetail::check_policy_env(*init, c.env, "train-rl init policy");
  }

  const std::vector<Question> train_qs = train_question_pool(c);
  const std::vector<Question> eval_qs = eval_question_pool(c);
  PolicyParams final_policy;
  RolloutBatch final_batch;
  const TrainingLog log =
      train(c.env, scheme, optim, c.seeds, train_qs, eval_qs, c.pass_k, prm ? &*prm : nullptr,
            orm ? &*orm : nullptr, &final_policy, init ? &*init : nullptr, c.eval_cadence,
            c.dump_trajectories ? &final_batch : nullptr);

  write_training_csv((fs::path(dir) / "train_log.csv").string(), log);
  save_policy((fs::path(dir) / "policy.json").string(), final_policy);
  if (c.dump_trajectories) {
    std::vector<LabeledSolution> dump;
    dump.reserve(final_batch.items.size());
    for (const auto& item : final_batch.items) {
      dump.push_back(LabeledSolution{item.traj.solution, item.correct ? 1 : 0});
    }
    write_solutions_jsonl((fs::path(dir) / "trajectories.jsonl").string(), dump);
  }
  {
    const TrainRow& last = log.rows.back();
    EvalReport rep;
    rep.greedy_acc = last.greedy_acc;
    rep.sampling_acc = last.sample_acc;
    rep.pass_at_k = last.pass16;
    rep.k = c.pass_k;
    rep.mean_steps = last.mean_steps;
    rep.mean_tokens = last.mean_tokens;
    write_file((fs::path(dir) / "eval_report.json").string(), to_json(rep).dump(2) + "\n");
  }
  std::vector<std::string> artifacts = {"train_log.csv", "policy.json", "eval_report.json"};
  if (c.dump_trajectories) artifacts.push_back("trajectories.jsonl");
  write_manifest(dir, c.hash(), c.seeds, artifacts,
                 json{{"scheme", scheme_name(scheme.variant)}, {"eta", scheme.eta}});
  return TrainRlResult{dir, log, scheme.eta};
}

struct AuditResult {
  std::string dir;
  std::vector<AuditRow> rows;
  double eta_used = 0.0;
};

// Reconstructs the synthetic reward-hacking probes: six schemes swept over
// repetition counts against a frozen PRM.
inline AuditResult cmd_audit(const ExperimentConfig& c, const std::string& prm_path = "") {
  c.validate();
  const std::string path =
      prm_path.empty() ? (fs::path(c.output_dir) / "rm" / "prm.json").string() : prm_path;
  const std::string dir = pipedetail::ensure_dir(c.output_dir, "audit");
  const SurrogatePRM prm = load_prm(path);
  pipedetail::check_rm_env(prm.spec, c.env, "audit PRM");

  double eta = c.eta;
  if (c.eta_auto) eta = calibrate_eta(c, prm);

  std::vector<ShapingScheme> schemes;
  for (SchemeVariant v : {SchemeVariant::PR, SchemeVariant::PR_Clip, SchemeVariant::PR_Delta,
                          SchemeVariant::PR_Clip_Delta, SchemeVariant::LengthNorm,
                          SchemeVariant::LengthPenalty}) {
    ShapingScheme s;
    s.variant = v;
    s.eta = eta;
    s.c_penalty = c.c_penalty;
    schemes.push_back(s);
  }
  std::vector<int> n_values;
  for (int n = 0; n <= c.audit_n_max; ++n) n_values.push_back(n);
  const std::vector<GroundTruthCase> gts =
      build_ground_truth_set(c.env, c.audit_ground_truths, pipedetail::subseed(c.seeds.eval, 7));
  const std::vector<AuditRow> rows = sweep_probe(schemes, n_values, prm, gts, c.coeffs, c.env);

  write_audit_csv((fs::path(dir) / "audit.csv").string(), rows);
  write_manifest(dir, c.hash(), c.seeds, {"audit.csv"},
                 json{{"eta", eta}, {"ground_truths", gts.size()}});
  return AuditResult{dir, rows, eta};
}

struct EvalResult {
  std::string dir;
  EvalReport report;
};

inline EvalResult cmd_eval(const ExperimentConfig& c, const std::string& policy_path) {
  c.validate();
  const std::string dir = pipedetail::ensure_dir(c.output_dir, "eval");
  const PolicyParams policy =
      policy_path.empty() ? init_policy(c.env, c.seeds.policy) : load_policy(policy_path);
  if (!policy_path.empty()) pipedetail::check_policy_env(policy, c.env, "eval policy");
  const std::vector<Question> eval_qs = eval_question_pool(c);
  const EvalReport rep =
      evaluate_policy(policy, eval_qs, c.env, c.pass_k, pipedetail::subseed(c.seeds.eval, 2));
  write_file((fs::path(dir) / "eval_report.json").string(), to_json(rep).dump(2) + "\n");
  write_manifest(dir, c.hash(), c.seeds, {"eval_report.json"}, json::object());
  return EvalResult{dir, rep};
}

}  // namespace steprl
