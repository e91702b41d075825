#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "steprl/core.hpp"
#include "steprl/rng.hpp"

namespace steprl {

enum class OpType { Add, Double, Square, Noop };

// One action template. Compute templates transform the value, fillers leave
// it unchanged, the answer template ends the episode claiming the current
// value.
struct StepTemplate {
  std::string id;
  StepKind kind = StepKind::Compute;
  OpType op = OpType::Noop;
  int operand = 0;
  std::string rendered;  // fixed line for compute/filler; answer renders dynamically
};

struct EnvConfig {
  int modulus = 23;
  std::vector<StepTemplate> op_templates;
  std::vector<StepTemplate> filler_templates;
  int max_steps = 24;  // bound on compute+filler steps; the answer line is free

  int num_actions() const {
    return static_cast<int>(op_templates.size() + filler_templates.size()) + 1;
  }
  int answer_action() const { return num_actions() - 1; }

  const StepTemplate& action_template(int a) const {
    const int n_ops = static_cast<int>(op_templates.size());
    const int n_fill = static_cast<int>(filler_templates.size());
    if (a < 0 || a >= num_actions()) throw RangeError("action index out of range");
    if (a < n_ops) return op_templates[static_cast<std::size_t>(a)];
    if (a < n_ops + n_fill) return filler_templates[static_cast<std::size_t>(a - n_ops)];
    static const StepTemplate answer{"answer", StepKind::Answer, OpType::Noop, 0, ""};
    return answer;
  }

  void validate() const {
    if (modulus < 2) throw ConfigError("env: modulus must be >= 2");
    if (op_templates.empty()) throw ConfigError("env: op_templates must be non-empty");
    if (max_steps < 2) throw ConfigError("env: max_steps must be >= 2");
    for (const auto& t : op_templates) {
      if (t.kind != StepKind::Compute) throw ConfigError("env: op template must be compute kind");
    }
    for (const auto& t : filler_templates) {
      if (t.kind != StepKind::Filler) throw ConfigError("env: filler template must be filler kind");
    }
  }
};

struct EnvState {
  int value = 0;
  int steps_taken = 0;  // compute+filler steps so far
};

inline StepTemplate make_op_template(const std::string& name) {
  StepTemplate t;
  t.id = name;
  t.kind = StepKind::Compute;
  t.rendered = "Step: " + name;
  if (!name.empty() && name[0] == '+') {
    t.op = OpType::Add;
    t.operand = std::stoi(name.substr(1));
    if (t.operand <= 0) throw ConfigError("env: additive op must have positive operand: " + name);
  } else if (name == "double") {
    t.op = OpType::Double;
  } else if (name == "square") {
    t.op = OpType::Square;
  } else {
    throw ConfigError("env: unknown op template: " + name);
  }
  return t;
}

inline StepTemplate make_filler_template(const std::string& id, const std::string& body) {
  StepTemplate t;
  t.id = "filler:" + id;
  t.kind = StepKind::Filler;
  t.op = OpType::Noop;
  t.rendered = "Step: " + body;
  return t;
}

inline std::vector<StepTemplate> default_filler_templates() {
  return {
      make_filler_template("recheck", "recheck the previous step"),
      make_filler_template("restate", "restate the current value"),
      make_filler_template("hold", "the value is kept as is"),
  };
}

inline EnvConfig default_env_config() {
  EnvConfig cfg;
  cfg.modulus = 23;
  cfg.op_templates = {make_op_template("+1"), make_op_template("+5"),
                      make_op_template("double"), make_op_template("square")};
  cfg.filler_templates = default_filler_templates();
  cfg.max_steps = 24;
  return cfg;
}

inline int apply_op(int value, const StepTemplate& t, int modulus) {
  const std::int64_t v = value;
  switch (t.op) {
    case OpType::Add: return static_cast<int>((v + t.operand) % modulus);
    case OpType::Double: return static_cast<int>((2 * v) % modulus);
    case OpType::Square: return static_cast<int>((v * v) % modulus);
    case OpType::Noop: return value;
  }
  return value;
}

inline EnvState apply_step(const EnvState& state, const StepTemplate& t, const EnvConfig& cfg) {
  if (t.kind == StepKind::Answer) {
    throw ConfigError("apply_step: answer step has no state transition");
  }
  if (state.steps_taken >= cfg.max_steps) {
    throw BudgetError("apply_step: step budget exceeded");
  }
  EnvState next = state;
  if (t.kind == StepKind::Compute) next.value = apply_op(state.value, t, cfg.modulus);
  next.steps_taken = state.steps_taken + 1;
  return next;
}

inline std::string render_answer(int value) { return "Answer: " + std::to_string(value); }

inline Step make_answer_step(int value) {
  return Step{"answer", render_answer(value), StepKind::Answer};
}

inline Step make_step(const StepTemplate& t) { return Step{t.id, t.rendered, t.kind}; }

inline std::optional<int> parse_answer_claim(const Step& step) {
  const std::string prefix = "Answer: ";
  if (step.rendered.rfind(prefix, 0) != 0) return std::nullopt;
  try {
    return std::stoi(step.rendered.substr(prefix.size()));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline const StepTemplate* find_template(const EnvConfig& cfg, const std::string& id) {
  for (const auto& t : cfg.op_templates)
    if (t.id == id) return &t;
  for (const auto& t : cfg.filler_templates)
    if (t.id == id) return &t;
  return nullptr;
}

inline DetectorConfig detector_config(const EnvConfig& cfg) {
  DetectorConfig d;
  for (const auto& t : cfg.op_templates) d.entries.push_back({t.rendered, t.id, t.kind});
  for (const auto& t : cfg.filler_templates) d.entries.push_back({t.rendered, t.id, t.kind});
  return d;
}

// Replays the compute steps preceding the first answer step. Verdict: the
// answer's claimed value matches the replayed value and equals the target.
// Malformed solutions (no answer step, unknown template) are simply false.
inline bool check_correct(const Question& q, const Solution& s, const EnvConfig& cfg) {
  int value = q.start % cfg.modulus;
  for (const auto& step : s.steps) {
    if (step.kind == StepKind::Answer) {
      const auto claim = parse_answer_claim(step);
      return claim.has_value() && *claim == value && value == q.target;
    }
    if (step.kind == StepKind::Compute) {
      const StepTemplate* t = find_template(cfg, step.template_id);
      if (t == nullptr) return false;
      value = apply_op(value, *t, cfg.modulus);
    }
  }
  return false;
}

// Exact enumeration of values reachable in exactly d compute/filler steps,
// for d = 0..budget. result[d] is sorted.
inline std::vector<std::vector<int>> reachable_set(int start, const EnvConfig& cfg, int budget) {
  if (cfg.modulus > 1000 || budget > 30) {
    throw BudgetError("reachable_set: size guard exceeded (m <= 1000, budget <= 30)");
  }
  std::vector<std::vector<int>> result;
  std::vector<char> cur(static_cast<std::size_t>(cfg.modulus), 0);
  cur[static_cast<std::size_t>(start % cfg.modulus)] = 1;
  auto snapshot = [&](const std::vector<char>& mask) {
    std::vector<int> vals;
    for (int v = 0; v < cfg.modulus; ++v)
      if (mask[static_cast<std::size_t>(v)]) vals.push_back(v);
    return vals;
  };
  result.push_back(snapshot(cur));
  for (int d = 0; d < budget; ++d) {
    std::vector<char> next(static_cast<std::size_t>(cfg.modulus), 0);
    for (int v = 0; v < cfg.modulus; ++v) {
      if (!cur[static_cast<std::size_t>(v)]) continue;
      for (const auto& t : cfg.op_templates) {
        next[static_cast<std::size_t>(apply_op(v, t, cfg.modulus))] = 1;
      }
      if (!cfg.filler_templates.empty()) next[static_cast<std::size_t>(v)] = 1;
    }
    cur = std::move(next);
    result.push_back(snapshot(cur));
  }
  return result;
}

inline std::vector<std::vector<int>> reachable_set(const Question& q, const EnvConfig& cfg) {
  return reachable_set(q.start, cfg, cfg.max_steps);
}

// True when `target` is reachable from `value` within `moves_budget` steps
// (an answer step afterwards is free).
inline bool reachable_within(int value, int target, int moves_budget, const EnvConfig& cfg) {
  if (moves_budget < 0) return false;
  const auto depths = reachable_set(value, cfg, std::min(moves_budget, cfg.max_steps));
  for (const auto& vals : depths) {
    if (std::binary_search(vals.begin(), vals.end(), target)) return true;
  }
  return false;
}

// Samples a (start, target) pair with target reachable in 1..max_steps moves.
// Targets reachable only in zero moves (target == start) are excluded, so any
// sampled question requires at least one compute step.
inline Question sample_question(const EnvConfig& cfg, Rng& rng) {
  cfg.validate();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const int start = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg.modulus)));
    const auto depths = reachable_set(start, cfg, cfg.max_steps);
    std::vector<char> ok(static_cast<std::size_t>(cfg.modulus), 0);
    for (std::size_t d = 1; d < depths.size(); ++d) {
      for (int v : depths[d]) ok[static_cast<std::size_t>(v)] = 1;
    }
    ok[static_cast<std::size_t>(start)] = 0;
    std::vector<int> targets;
    for (int v = 0; v < cfg.modulus; ++v)
      if (ok[static_cast<std::size_t>(v)]) targets.push_back(v);
    if (targets.empty()) continue;
    Question q;
    q.start = start;
    q.target = targets[rng.next_below(targets.size())];
    q.modulus = cfg.modulus;
    return q;
  }
  throw ConfigError("sample_question: no reachable non-trivial target in this environment");
}

// Deterministic dataset of uniquely-id'd questions; question i depends only
// on (seed, i), never on iteration order.
inline std::vector<Question> sample_questions(const EnvConfig& cfg, int count, std::uint64_t seed) {
  std::vector<Question> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(i)});
    Question q = sample_question(cfg, rng);
    q.id = "q" + std::to_string(i);
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace steprl
