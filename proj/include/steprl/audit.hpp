#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "steprl/core.hpp"
#include "steprl/env.hpp"
#include "steprl/reward_models.hpp"
#include "steprl/shaping.hpp"

namespace steprl {

enum class ProbeVariant { RepeatNonsense, RepeatMidStep, RepeatLastSentence };

inline const char* probe_name(ProbeVariant v) {
  switch (v) {
    case ProbeVariant::RepeatNonsense: return "repeat_nonsense";
    case ProbeVariant::RepeatMidStep: return "repeat_mid_step";
    case ProbeVariant::RepeatLastSentence: return "repeat_last_sentence";
  }
  return "?";
}

struct ProbeKind {
  ProbeVariant variant = ProbeVariant::RepeatNonsense;
  int repeat_count = 0;    // n
  int mid_step_index = 1;  // 1-based, RepeatMidStep only
};

// Builds a repetition-corrupted variant of a correct solution.
//  - RepeatNonsense: n filler steps (cycling the env's fillers) inserted
//    before the answer step.
//  - RepeatMidStep: n copies of step mid_step_index inserted after itself.
//  - RepeatLastSentence: n copies of the answer sentence appended after the
//    solution ends; the checker still reads the first answer step.
// Correctness of the probe is re-derived from the environment checker.
inline Solution make_probe(const Solution& ground_truth, const Question& q, const ProbeKind& probe,
                           const EnvConfig& env) {
  if (!ground_truth.correct) throw DegenerateError("make_probe: ground truth must be correct");
  if (probe.repeat_count < 0) throw RangeError("make_probe: repeat count must be >= 0");
  Solution out = ground_truth;
  if (probe.repeat_count == 0) return out;
  const int n = probe.repeat_count;
  switch (probe.variant) {
    case ProbeVariant::RepeatNonsense: {
      if (env.filler_templates.empty()) throw ConfigError("make_probe: env has no fillers");
      std::size_t insert_at = out.steps.size();
      for (std::size_t i = 0; i < out.steps.size(); ++i) {
        if (out.steps[i].kind == StepKind::Answer) {
          insert_at = i;
          break;
        }
      }
      std::vector<Step> fillers;
      fillers.reserve(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        fillers.push_back(make_step(
            env.filler_templates[static_cast<std::size_t>(i) % env.filler_templates.size()]));
      }
      out.steps.insert(out.steps.begin() + static_cast<std::ptrdiff_t>(insert_at),
                       fillers.begin(), fillers.end());
      break;
    }
    case ProbeVariant::RepeatMidStep: {
      if (probe.mid_step_index < 1 ||
          probe.mid_step_index > static_cast<int>(ground_truth.steps.size())) {
        throw RangeError("make_probe: mid_step_index out of range");
      }
      const Step dup = ground_truth.steps[static_cast<std::size_t>(probe.mid_step_index - 1)];
      out.steps.insert(out.steps.begin() + probe.mid_step_index,
                       static_cast<std::size_t>(n), dup);
      break;
    }
    case ProbeVariant::RepeatLastSentence: {
      const Step last = ground_truth.steps.back();
      for (int i = 0; i < n; ++i) out.steps.push_back(last);
      break;
    }
  }
  out.token_count = count_tokens(render_solution(out));
  out.correct = check_correct(q, out, env);
  return out;
}

// Default mid step for sweeps: repeating it must leave the final answer
// intact. Prefers the first filler step; falls back to the middle.
inline int default_mid_step_index(const Solution& s) {
  for (std::size_t i = 0; i < s.steps.size(); ++i) {
    if (s.steps[i].kind == StepKind::Filler) return static_cast<int>(i + 1);
  }
  return static_cast<int>((s.steps.size() + 1) / 2);
}

// trajectory_return(probe) - trajectory_return(ground_truth), KL excluded.
// PR-Normed has no per-solution return and SR+OR scores with an ORM, so both
// are rejected here.
inline double return_difference(const ShapingScheme& scheme, const RewardCoefficients& coeffs,
                                const SurrogatePRM& prm, const Question& q,
                                const Solution& ground_truth, const Solution& probe_solution,
                                const EnvConfig& env) {
  if (scheme.variant == SchemeVariant::PR_Normed) {
    throw ConfigError("return_difference: PR-Normed is batch-relative");
  }
  if (scheme.variant == SchemeVariant::OR) {
    throw ConfigError("return_difference: SR+OR is not PRM-scored");
  }
  auto shaped_of = [&](const Solution& s) {
    StepRewardSeq raw;
    if (scheme.uses_prm()) {
      raw = prm_scores(prm, q, s, env);
    } else {
      raw.assign(s.steps.size(), 0.0);
    }
    return shape_sequence(scheme, raw);
  };
  const double gt_return = trajectory_return(shaped_of(ground_truth), ground_truth.correct, coeffs);
  const double pr_return =
      trajectory_return(shaped_of(probe_solution), probe_solution.correct, coeffs);
  return pr_return - gt_return;
}

struct AuditRow {
  std::string scheme;
  std::string probe;
  int n = 0;
  double mean_diff = 0.0;
  double std_diff = 0.0;
};

struct GroundTruthCase {
  Question question;
  Solution solution;
};

// Shortest op path from start to target via BFS parent pointers.
inline std::vector<const StepTemplate*> shortest_op_path(const Question& q, const EnvConfig& cfg) {
  const int m = cfg.modulus;
  std::vector<int> parent_value(static_cast<std::size_t>(m), -1);
  std::vector<const StepTemplate*> parent_op(static_cast<std::size_t>(m), nullptr);
  std::vector<char> seen(static_cast<std::size_t>(m), 0);
  std::deque<int> frontier;
  const int start = q.start % m;
  seen[static_cast<std::size_t>(start)] = 1;
  frontier.push_back(start);
  while (!frontier.empty()) {
    const int v = frontier.front();
    frontier.pop_front();
    if (v == q.target && v != start) break;
    for (const auto& t : cfg.op_templates) {
      const int next = apply_op(v, t, m);
      if (seen[static_cast<std::size_t>(next)]) continue;
      seen[static_cast<std::size_t>(next)] = 1;
      parent_value[static_cast<std::size_t>(next)] = v;
      parent_op[static_cast<std::size_t>(next)] = &t;
      frontier.push_back(next);
    }
  }
  if (!seen[static_cast<std::size_t>(q.target)] || q.target == start) {
    throw DegenerateError("shortest_op_path: target unreachable or trivial");
  }
  std::vector<const StepTemplate*> path;
  for (int v = q.target; v != start; v = parent_value[static_cast<std::size_t>(v)]) {
    path.push_back(parent_op[static_cast<std::size_t>(v)]);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

// Reference solution for a question: shortest compute path, one filler step
// in the middle, then the answer. Correct by construction (filler invariance)
// and guaranteed to offer a repetition-safe mid step.
inline GroundTruthCase make_ground_truth(const Question& q, const EnvConfig& env) {
  const auto path = shortest_op_path(q, env);
  Solution s;
  s.question_id = q.id;
  for (const StepTemplate* t : path) s.steps.push_back(make_step(*t));
  if (!env.filler_templates.empty() &&
      static_cast<int>(path.size()) + 1 <= env.max_steps) {
    s.steps.insert(s.steps.begin() + static_cast<std::ptrdiff_t>(path.size() / 2),
                   make_step(env.filler_templates[0]));
  }
  s.steps.push_back(make_answer_step(q.target));
  s.token_count = count_tokens(render_solution(s));
  s.correct = check_correct(q, s, env);
  if (!s.correct) throw DegenerateError("make_ground_truth: constructed solution is incorrect");
  return GroundTruthCase{q, s};
}

inline std::vector<GroundTruthCase> build_ground_truth_set(const EnvConfig& env, int count,
                                                           std::uint64_t seed) {
  std::vector<GroundTruthCase> out;
  out.reserve(static_cast<std::size_t>(count));
  const std::vector<Question> questions = sample_questions(env, count, seed);
  for (const auto& q : questions) out.push_back(make_ground_truth(q, env));
  return out;
}

inline std::vector<ProbeVariant> all_probe_variants() {
  return {ProbeVariant::RepeatNonsense, ProbeVariant::RepeatMidStep,
          ProbeVariant::RepeatLastSentence};
}

// Full sweep: (scheme x probe kind x n) -> mean/std of the return difference
// over the ground-truth set.
inline std::vector<AuditRow> sweep_probe(const std::vector<ShapingScheme>& schemes,
                                         const std::vector<int>& n_values, const SurrogatePRM& prm,
                                         const std::vector<GroundTruthCase>& ground_truths,
                                         const RewardCoefficients& coeffs, const EnvConfig& env,
                                         const std::vector<ProbeVariant>& probes =
                                             all_probe_variants()) {
  if (schemes.empty() || n_values.empty() || ground_truths.empty() || probes.empty()) {
    throw ConfigError("sweep_probe: empty inputs");
  }
  std::vector<AuditRow> rows;
  for (const auto& scheme : schemes) {
    for (ProbeVariant variant : probes) {
      for (int n : n_values) {
        AuditRow row;
        row.scheme = scheme_name(scheme.variant);
        row.probe = probe_name(variant);
        row.n = n;
        std::vector<double> diffs;
        diffs.reserve(ground_truths.size());
        for (const auto& gt : ground_truths) {
          ProbeKind probe;
          probe.variant = variant;
          probe.repeat_count = n;
          probe.mid_step_index = default_mid_step_index(gt.solution);
          const Solution probe_solution = make_probe(gt.solution, gt.question, probe, env);
          diffs.push_back(return_difference(scheme, coeffs, prm, gt.question, gt.solution,
                                            probe_solution, env));
        }
        double sum = 0.0;
        for (double d : diffs) sum += d;
        row.mean_diff = sum / static_cast<double>(diffs.size());
        double ss = 0.0;
        for (double d : diffs) ss += (d - row.mean_diff) * (d - row.mean_diff);
        row.std_diff =
            diffs.size() > 1 ? std::sqrt(ss / static_cast<double>(diffs.size() - 1)) : 0.0;
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

}  // namespace steprl
