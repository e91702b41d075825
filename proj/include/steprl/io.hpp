#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "steprl/audit.hpp"
#include "steprl/core.hpp"
#include "steprl/env.hpp"
#include "steprl/metrics.hpp"
#include "steprl/policy.hpp"
#include "steprl/reward_models.hpp"
#include "steprl/trainer.hpp"

namespace steprl {

using json = nlohmann::json;

// Stable float formatting for CSV output; reruns must be byte-identical.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// RFC-4180 field quoting.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open for writing: " + path);
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i > 0) out_ << ',';
      out_ << csv_field(fields[i]);
    }
    out_ << "\r\n";
  }

 private:
  std::ofstream out_;
};

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

inline std::string file_checksum(const std::string& path) { return hex64(fnv1a64(read_file(path))); }

// ---- JSON codecs -----------------------------------------------------------

inline json to_json(const Step& s) {
  return json{{"template_id", s.template_id}, {"rendered", s.rendered}, {"kind", to_string(s.kind)}};
}

inline Step step_from_json(const json& j) {
  Step s;
  s.template_id = j.at("template_id").get<std::string>();
  s.rendered = j.at("rendered").get<std::string>();
  s.kind = step_kind_from_string(j.at("kind").get<std::string>());
  return s;
}

inline json to_json(const Solution& s) {
  json steps = json::array();
  for (const auto& st : s.steps) steps.push_back(to_json(st));
  return json{{"question_id", s.question_id},
              {"steps", steps},
              {"token_count", s.token_count},
              {"correct", s.correct}};
}

inline Solution solution_from_json(const json& j) {
  Solution s;
  s.question_id = j.at("question_id").get<std::string>();
  for (const auto& js : j.at("steps")) s.steps.push_back(step_from_json(js));
  s.token_count = j.at("token_count").get<std::int64_t>();
  s.correct = j.at("correct").get<bool>();
  return s;
}

inline json to_json(const Question& q) {
  return json{{"id", q.id}, {"start", q.start}, {"target", q.target}, {"modulus", q.modulus}};
}

inline Question question_from_json(const json& j) {
  Question q;
  q.id = j.at("id").get<std::string>();
  q.start = j.at("start").get<int>();
  q.target = j.at("target").get<int>();
  q.modulus = j.at("modulus").get<int>();
  return q;
}

inline json to_json(const LabeledPrefix& lp) {
  json steps = json::array();
  for (const auto& st : lp.prefix.steps) steps.push_back(to_json(st));
  return json{{"question_id", lp.prefix.question_id},
              {"k", lp.prefix.k},
              {"steps", steps},
              {"label", lp.label}};
}

inline LabeledPrefix labeled_prefix_from_json(const json& j) {
  LabeledPrefix lp;
  lp.prefix.question_id = j.at("question_id").get<std::string>();
  lp.prefix.k = j.at("k").get<std::size_t>();
  for (const auto& js : j.at("steps")) lp.prefix.steps.push_back(step_from_json(js));
  lp.label = j.at("label").get<int>();
  return lp;
}

inline json to_json(const LabeledSolution& ls) {
  json j = to_json(ls.solution);
  j["label"] = ls.label;
  return j;
}

inline LabeledSolution labeled_solution_from_json(const json& j) {
  LabeledSolution ls;
  ls.solution = solution_from_json(j);
  ls.label = j.at("label").get<int>();
  return ls;
}

inline json to_json(const FeatureSpec& spec) {
  return json{{"kind", spec.kind},
              {"modulus", spec.modulus},
              {"index_buckets", spec.index_buckets},
              {"index_bucket_width", spec.index_bucket_width}};
}

inline FeatureSpec feature_spec_from_json(const json& j) {
  FeatureSpec spec;
  spec.kind = j.at("kind").get<std::string>();
  spec.modulus = j.at("modulus").get<int>();
  spec.index_buckets = j.at("index_buckets").get<int>();
  spec.index_bucket_width = j.at("index_bucket_width").get<int>();
  return spec;
}

inline json to_json(const EvalReport& r) {
  return json{{"greedy_acc", r.greedy_acc}, {"sampling_acc", r.sampling_acc},
              {"pass_at_k", r.pass_at_k},   {"k", r.k},
              {"mean_steps", r.mean_steps}, {"mean_tokens", r.mean_tokens}};
}

// ---- JSONL streams ---------------------------------------------------------

template <typename T, typename ToJson>
inline void write_jsonl(const std::string& path, const std::vector<T>& items, ToJson&& to_j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& item : items) out << to_j(item).dump() << "\n";
}

template <typename T, typename FromJson>
inline std::vector<T> read_jsonl(const std::string& path, FromJson&& from_j) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::vector<T> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(from_j(json::parse(line)));
  }
  return out;
}

inline void write_solutions_jsonl(const std::string& path, const std::vector<LabeledSolution>& v) {
  write_jsonl(path, v, [](const LabeledSolution& s) { return to_json(s); });
}
inline std::vector<LabeledSolution> read_solutions_jsonl(const std::string& path) {
  return read_jsonl<LabeledSolution>(path, labeled_solution_from_json);
}

inline void write_questions_jsonl(const std::string& path, const std::vector<Question>& v) {
  write_jsonl(path, v, [](const Question& q) { return to_json(q); });
}
inline std::vector<Question> read_questions_jsonl(const std::string& path) {
  return read_jsonl<Question>(path, question_from_json);
}

inline void write_prefixes_jsonl(const std::string& path, const std::vector<LabeledPrefix>& v) {
  write_jsonl(path, v, [](const LabeledPrefix& p) { return to_json(p); });
}
inline std::vector<LabeledPrefix> read_prefixes_jsonl(const std::string& path) {
  return read_jsonl<LabeledPrefix>(path, labeled_prefix_from_json);
}

// ---- Checkpoints ----------------------------------------------------------

inline void save_reward_model(const std::string& path, const FeatureSpec& spec,
                              const std::vector<double>& weights) {
  json j{{"version", 1}, {"feature_spec", to_json(spec)}, {"weights", weights}};
  write_file(path, j.dump(2) + "\n");
}

inline SurrogatePRM load_prm(const std::string& path) {
  const json j = json::parse(read_file(path));
  SurrogatePRM prm;
  prm.spec = feature_spec_from_json(j.at("feature_spec"));
  if (prm.spec.kind != "prm") throw ConfigError("checkpoint is not a PRM: " + path);
  prm.weights = j.at("weights").get<std::vector<double>>();
  return prm;
}

inline SurrogateORM load_orm(const std::string& path) {
  const json j = json::parse(read_file(path));
  SurrogateORM orm;
  orm.spec = feature_spec_from_json(j.at("feature_spec"));
  if (orm.spec.kind != "orm") throw ConfigError("checkpoint is not an ORM: " + path);
  orm.weights = j.at("weights").get<std::vector<double>>();
  return orm;
}

inline void save_policy(const std::string& path, const PolicyParams& p) {
  json j{{"version", 1},
         {"modulus", p.modulus},
         {"num_actions", p.num_actions},
         {"temperature", p.temperature},
         {"logits", p.logits}};
  write_file(path, j.dump() + "\n");
}

inline PolicyParams load_policy(const std::string& path) {
  const json j = json::parse(read_file(path));
  PolicyParams p;
  p.modulus = j.at("modulus").get<int>();
  p.num_actions = j.at("num_actions").get<int>();
  p.temperature = j.at("temperature").get<double>();
  p.logits = j.at("logits").get<std::vector<double>>();
  if (p.logits.size() != static_cast<std::size_t>(p.num_buckets()) *
                             static_cast<std::size_t>(p.num_actions)) {
    throw ConfigError("policy checkpoint has inconsistent logits size: " + path);
  }
  return p;
}

// ---- Tabular outputs -------------------------------------------------------

inline void write_training_csv(const std::string& path, const TrainingLog& log) {
  CsvWriter csv(path);
  csv.row({"iter", "greedy_acc", "sample_acc", "pass16", "mean_steps", "mean_tokens",
           "mean_return", "mean_kl"});
  for (const auto& r : log.rows) {
    csv.row({std::to_string(r.iter), format_double(r.greedy_acc), format_double(r.sample_acc),
             format_double(r.pass16), format_double(r.mean_steps), format_double(r.mean_tokens),
             format_double(r.mean_return), format_double(r.mean_kl)});
  }
}

inline void write_audit_csv(const std::string& path, const std::vector<AuditRow>& rows) {
  CsvWriter csv(path);
  csv.row({"scheme", "probe", "n", "mean_diff", "std_diff"});
  for (const auto& r : rows) {
    csv.row({r.scheme, r.probe, std::to_string(r.n), format_double(r.mean_diff),
             format_double(r.std_diff)});
  }
}

inline void write_loss_csv(const std::string& path, const RmTrainStats& stats) {
  CsvWriter csv(path);
  csv.row({"epoch", "loss"});
  for (std::size_t i = 0; i < stats.epoch_loss.size(); ++i) {
    csv.row({std::to_string(i + 1), format_double(stats.epoch_loss[i])});
  }
}

// ---- Manifest --------------------------------------------------------------

// Every output directory gets a manifest: config hash, seeds, and one
// checksum per artifact. Identical configs must reproduce identical
// checksums.
inline void write_manifest(const std::string& dir, const std::string& config_hash,
                           const Seeds& seeds, const std::vector<std::string>& artifact_names,
                           const json& extra = json::object()) {
  json artifacts = json::object();
  for (const auto& name : artifact_names) {
    artifacts[name] = file_checksum((std::filesystem::path(dir) / name).string());
  }
  json j{{"config_hash", config_hash},
         {"seeds", json{{"policy", seeds.policy},
                        {"env", seeds.env},
                        {"annotation", seeds.annotation},
                        {"eval", seeds.eval}}},
         {"artifacts", artifacts}};
  if (!extra.empty()) j["stats"] = extra;
  write_file((std::filesystem::path(dir) / "manifest.json").string(), j.dump(2) + "\n");
}

}  // namespace steprl
