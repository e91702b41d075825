#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "steprl/core.hpp"
#include "steprl/env.hpp"
#include "steprl/io.hpp"
#include "steprl/reward_models.hpp"
#include "steprl/shaping.hpp"
#include "steprl/trainer.hpp"

namespace steprl {

// Full experiment description. One config file drives every subcommand; all
// randomness flows from the named seeds.
struct ExperimentConfig {
  EnvConfig env = default_env_config();

  int train_questions = 512;
  int eval_questions = 200;
  int rm_questions = 200;

  std::string scheme_name = "SR";
  RewardCoefficients coeffs;       // alpha=1, success_coef=5, beta=0.1
  bool eta_auto = true;
  double eta = 0.5;                // used when eta_auto = false
  double eta_quantile = 0.2;       // calibration level for auto eta
  double c_penalty = 0.1;
  std::string norm_granularity = "batch";

  int completions_per_prefix = 8;
  int samples_per_question = 16;

  OptimConfig optim;
  RmTrainConfig rm_train;
  Seeds seeds;

  int pass_k = 16;
  int eval_cadence = 1;

  int audit_n_max = 50;
  int audit_ground_truths = 50;

  std::string output_dir = "out";
  bool dump_trajectories = false;  // write the final rollout batch as JSONL

  ShapingScheme scheme() const {
    ShapingScheme s;
    s.variant = parse_scheme(scheme_name);
    s.eta = eta;
    s.c_penalty = c_penalty;
    if (norm_granularity == "batch") s.norm_granularity = NormGranularity::Batch;
    else if (norm_granularity == "per_solution") s.norm_granularity = NormGranularity::PerSolution;
    else throw ConfigError("unknown norm_granularity: " + norm_granularity);
    return s;
  }

  void validate() const {
    env.validate();
    coeffs.validate();
    optim.validate();
    scheme();
    if (train_questions < optim.questions_per_batch) {
      throw ConfigError("questions.train must cover at least one batch");
    }
    if (eval_questions < 1) throw ConfigError("questions.eval must be >= 1");
    if (rm_questions < 1) throw ConfigError("questions.rm must be >= 1");
    if (completions_per_prefix < 1) throw ConfigError("annotation.completions_per_prefix >= 1");
    if (samples_per_question < 2) throw ConfigError("annotation.samples_per_question >= 2");
    if (!(eta_quantile >= 0.0 && eta_quantile <= 1.0)) {
      throw ConfigError("rewards.eta_quantile must be in [0,1]");
    }
    if (!(c_penalty >= 0.0)) throw ConfigError("rewards.c_penalty must be >= 0");
    if (!std::isfinite(eta)) throw ConfigError("rewards.eta must be finite");
    if (pass_k < 1) throw ConfigError("eval.pass_k must be >= 1");
    if (eval_cadence < 1) throw ConfigError("eval.cadence must be >= 1");
    if (audit_n_max < 0) throw ConfigError("audit.n_max must be >= 0");
    if (audit_ground_truths < 1) throw ConfigError("audit.ground_truths must be >= 1");
    if (output_dir.empty()) throw ConfigError("output.dir must be non-empty");
  }

  // Canonical text form; its hash identifies the run in manifests.
  std::string canonical() const;
  std::string hash() const { return hex64(fnv1a64(canonical())); }
};

namespace cfgdetail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Raw key/value view of a TOML-style file: [section] headers, key = value
// lines, # comments.
inline std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool in_quotes = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quotes = !in_quotes;
      if (line[i] == '#' && !in_quotes) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) +
                                                ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    kv[section.empty() ? key : section + "." + key] = value;
  }
  return kv;
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

struct KvReader {
  std::map<std::string, std::string> kv;
  std::set<std::string> consumed;

  bool has(const std::string& key) const { return kv.count(key) > 0; }

  std::string str(const std::string& key, const std::string& fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    consumed.insert(key);
    return it->second;
  }
  long integer(const std::string& key, long fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    consumed.insert(key);
    try {
      std::size_t pos = 0;
      const long v = std::stol(it->second, &pos);
      if (pos != it->second.size()) throw ConfigError("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: " + key + " expects an integer, got '" + it->second + "'");
    }
  }
  double number(const std::string& key, double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    consumed.insert(key);
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw ConfigError("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: " + key + " expects a number, got '" + it->second + "'");
    }
  }
  bool boolean(const std::string& key, bool fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    consumed.insert(key);
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw ConfigError("config: " + key + " expects true/false, got '" + it->second + "'");
  }
};

}  // namespace cfgdetail

inline ExperimentConfig config_from_kv(std::map<std::string, std::string> kv) {
  cfgdetail::KvReader r{std::move(kv), {}};
  ExperimentConfig c;

  c.env.modulus = static_cast<int>(r.integer("env.modulus", c.env.modulus));
  if (r.has("env.ops")) {
    c.env.op_templates.clear();
    for (const auto& name : cfgdetail::split_csv(r.str("env.ops", ""))) {
      c.env.op_templates.push_back(make_op_template(name));
    }
  }
  {
    const long fillers = r.integer("env.fillers", 3);
    if (fillers < 0 || fillers > 3) throw ConfigError("env.fillers must be in [0,3]");
    auto all = default_filler_templates();
    c.env.filler_templates.assign(all.begin(), all.begin() + fillers);
  }
  c.env.max_steps = static_cast<int>(r.integer("env.max_steps", c.env.max_steps));

  c.train_questions = static_cast<int>(r.integer("questions.train", c.train_questions));
  c.eval_questions = static_cast<int>(r.integer("questions.eval", c.eval_questions));
  c.rm_questions = static_cast<int>(r.integer("questions.rm", c.rm_questions));

  c.scheme_name = r.str("rewards.scheme", c.scheme_name);
  c.coeffs.alpha = r.number("rewards.alpha", c.coeffs.alpha);
  c.coeffs.success_coef = r.number("rewards.success_coef", c.coeffs.success_coef);
  c.coeffs.beta = r.number("rewards.beta", c.coeffs.beta);
  {
    const std::string eta = r.str("rewards.eta", "auto");
    if (eta == "auto") {
      c.eta_auto = true;
    } else {
      c.eta_auto = false;
      try {
        c.eta = std::stod(eta);
      } catch (const std::exception&) {
        throw ConfigError("rewards.eta expects a number or 'auto', got '" + eta + "'");
      }
    }
  }
  c.eta_quantile = r.number("rewards.eta_quantile", c.eta_quantile);
  c.c_penalty = r.number("rewards.c_penalty", c.c_penalty);
  c.norm_granularity = r.str("rewards.norm_granularity", c.norm_granularity);

  c.completions_per_prefix =
      static_cast<int>(r.integer("annotation.completions_per_prefix", c.completions_per_prefix));
  c.samples_per_question =
      static_cast<int>(r.integer("annotation.samples_per_question", c.samples_per_question));

  c.optim.questions_per_batch =
      static_cast<int>(r.integer("optim.questions_per_batch", c.optim.questions_per_batch));
  c.optim.solutions_per_question =
      static_cast<int>(r.integer("optim.solutions_per_question", c.optim.solutions_per_question));
  c.optim.minibatches_per_batch =
      static_cast<int>(r.integer("optim.minibatches", c.optim.minibatches_per_batch));
  c.optim.learning_rate = r.number("optim.learning_rate", c.optim.learning_rate);
  c.optim.ppo_clip_epsilon = r.number("optim.ppo_clip", c.optim.ppo_clip_epsilon);
  c.optim.gae_gamma = r.number("optim.gae_gamma", c.optim.gae_gamma);
  c.optim.gae_lambda = r.number("optim.gae_lambda", c.optim.gae_lambda);
  c.optim.epochs = static_cast<int>(r.integer("optim.epochs", c.optim.epochs));
  c.optim.iterations = static_cast<int>(r.integer("optim.iterations", c.optim.iterations));
  c.optim.whiten_advantages = r.boolean("optim.whiten", c.optim.whiten_advantages);
  {
    const std::string b = r.str("optim.baseline", "state_mean");
    if (b == "state_mean") c.optim.baseline = BaselineKind::StateMean;
    else if (b == "zero") c.optim.baseline = BaselineKind::Zero;
    else throw ConfigError("optim.baseline must be state_mean or zero");
  }
  c.optim.workers = static_cast<int>(r.integer("optim.workers", c.optim.workers));
  c.optim.coeffs = c.coeffs;

  c.rm_train.epochs = static_cast<int>(r.integer("rm_train.epochs", c.rm_train.epochs));
  c.rm_train.learning_rate = r.number("rm_train.learning_rate", c.rm_train.learning_rate);
  c.rm_train.class_weighting = r.boolean("rm_train.class_weighting", c.rm_train.class_weighting);

  c.seeds.policy = static_cast<std::uint64_t>(r.integer("seeds.policy", 1));
  c.seeds.env = static_cast<std::uint64_t>(r.integer("seeds.env", 2));
  c.seeds.annotation = static_cast<std::uint64_t>(r.integer("seeds.annotation", 3));
  c.seeds.eval = static_cast<std::uint64_t>(r.integer("seeds.eval", 4));

  c.pass_k = static_cast<int>(r.integer("eval.pass_k", c.pass_k));
  c.eval_cadence = static_cast<int>(r.integer("eval.cadence", c.eval_cadence));

  c.audit_n_max = static_cast<int>(r.integer("audit.n_max", c.audit_n_max));
  c.audit_ground_truths = static_cast<int>(r.integer("audit.ground_truths", c.audit_ground_truths));

  c.output_dir = r.str("output.dir", c.output_dir);
  c.dump_trajectories = r.boolean("output.dump_trajectories", c.dump_trajectories);

  for (const auto& [key, value] : r.kv) {
    if (r.consumed.count(key) == 0) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

// Loads a config file and applies `section.key=value` overrides in order.
inline ExperimentConfig load_config(const std::string& path,
                                    const std::vector<std::string>& overrides = {}) {
  std::map<std::string, std::string> kv;
  if (!path.empty()) kv = cfgdetail::parse_kv(read_file(path));
  for (const auto& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override must look like section.key=value: " + ov);
    }
    kv[cfgdetail::trim(ov.substr(0, eq))] = cfgdetail::trim(ov.substr(eq + 1));
  }
  return config_from_kv(std::move(kv));
}

inline std::string ExperimentConfig::canonical() const {
  std::ostringstream os;
  os << "[env]\n";
  os << "modulus = " << env.modulus << "\n";
  os << "ops = \"";
  for (std::size_t i = 0; i < env.op_templates.size(); ++i) {
    if (i > 0) os << ",";
    os << env.op_templates[i].id;
  }
  os << "\"\n";
  os << "fillers = " << env.filler_templates.size() << "\n";
  os << "max_steps = " << env.max_steps << "\n";
  os << "[questions]\n";
  os << "train = " << train_questions << "\n";
  os << "eval = " << eval_questions << "\n";
  os << "rm = " << rm_questions << "\n";
  os << "[rewards]\n";
  os << "scheme = \"" << scheme_name << "\"\n";
  os << "alpha = " << format_double(coeffs.alpha) << "\n";
  os << "success_coef = " << format_double(coeffs.success_coef) << "\n";
  os << "beta = " << format_double(coeffs.beta) << "\n";
  os << "eta = " << (eta_auto ? std::string("auto") : format_double(eta)) << "\n";
  os << "eta_quantile = " << format_double(eta_quantile) << "\n";
  os << "c_penalty = " << format_double(c_penalty) << "\n";
  os << "norm_granularity = \"" << norm_granularity << "\"\n";
  os << "[annotation]\n";
  os << "completions_per_prefix = " << completions_per_prefix << "\n";
  os << "samples_per_question = " << samples_per_question << "\n";
  os << "[optim]\n";
  os << "questions_per_batch = " << optim.questions_per_batch << "\n";
  os << "solutions_per_question = " << optim.solutions_per_question << "\n";
  os << "minibatches = " << optim.minibatches_per_batch << "\n";
  os << "learning_rate = " << format_double(optim.learning_rate) << "\n";
  os << "ppo_clip = " << format_double(optim.ppo_clip_epsilon) << "\n";
  os << "gae_gamma = " << format_double(optim.gae_gamma) << "\n";
  os << "gae_lambda = " << format_double(optim.gae_lambda) << "\n";
  os << "epochs = " << optim.epochs << "\n";
  os << "iterations = " << optim.iterations << "\n";
  os << "whiten = " << (optim.whiten_advantages ? "true" : "false") << "\n";
  os << "baseline = \"" << (optim.baseline == BaselineKind::StateMean ? "state_mean" : "zero")
     << "\"\n";
  os << "[rm_train]\n";
  os << "epochs = " << rm_train.epochs << "\n";
  os << "learning_rate = " << format_double(rm_train.learning_rate) << "\n";
  os << "class_weighting = " << (rm_train.class_weighting ? "true" : "false") << "\n";
  os << "[seeds]\n";
  os << "policy = " << seeds.policy << "\n";
  os << "env = " << seeds.env << "\n";
  os << "annotation = " << seeds.annotation << "\n";
  os << "eval = " << seeds.eval << "\n";
  os << "[eval]\n";
  os << "pass_k = " << pass_k << "\n";
  os << "cadence = " << eval_cadence << "\n";
  os << "[audit]\n";
  os << "n_max = " << audit_n_max << "\n";
  os << "ground_truths = " << audit_ground_truths << "\n";
  os << "[output]\n";
  os << "dump_trajectories = " << (dump_trajectories ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace steprl
