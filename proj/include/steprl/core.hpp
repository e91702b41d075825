#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace steprl {

// Error taxonomy. ConfigError maps to CLI exit code 2, everything else to 3.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};
struct DegenerateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AnnotationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BudgetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class StepKind { Compute, Filler, Answer };

inline const char* to_string(StepKind k) {
  switch (k) {
    case StepKind::Compute: return "compute";
    case StepKind::Filler: return "filler";
    case StepKind::Answer: return "answer";
  }
  return "?";
}

inline StepKind step_kind_from_string(const std::string& s) {
  if (s == "compute") return StepKind::Compute;
  if (s == "filler") return StepKind::Filler;
  if (s == "answer") return StepKind::Answer;
  throw ConfigError("unknown step kind: " + s);
}

// One reasoning step. `rendered` is the single-line textual form; the
// environment renders one step per line.
struct Step {
  std::string template_id;
  std::string rendered;
  StepKind kind = StepKind::Compute;
};

// A problem instance for the modular-chain environment: reach `target` from
// `start` working modulo `modulus`.
struct Question {
  std::string id;
  int start = 0;
  int target = 0;
  int modulus = 2;
};

// A step-segmented trajectory. Well-formed solutions contain at most one
// answer step, in final position; audit probes deliberately relax that, so
// validation lives in `validate_solution` rather than the type.
struct Solution {
  std::string question_id;
  std::vector<Step> steps;
  std::int64_t token_count = 0;
  bool correct = false;

  std::size_t num_steps() const { return steps.size(); }
};

// First k steps of a parent solution, 1-based k.
struct Prefix {
  std::string question_id;
  std::vector<Step> steps;
  std::size_t k = 0;
};

// Per-step scalar rewards aligned 1:1 with a solution's steps.
using StepRewardSeq = std::vector<double>;

inline Prefix prefix_of(const Solution& solution, std::size_t k) {
  if (k < 1 || k > solution.steps.size()) {
    std::ostringstream oss;
    oss << "prefix index k=" << k << " out of range [1, " << solution.steps.size() << "]";
    throw RangeError(oss.str());
  }
  Prefix p;
  p.question_id = solution.question_id;
  p.steps.assign(solution.steps.begin(), solution.steps.begin() + static_cast<std::ptrdiff_t>(k));
  p.k = k;
  return p;
}

// Whitespace-delimited token count of a rendering.
inline std::int64_t count_tokens(const std::string& text) {
  std::int64_t n = 0;
  bool in_token = false;
  for (char c : text) {
    const bool ws = (c == ' ' || c == '\n' || c == '\t' || c == '\r');
    if (!ws && !in_token) {
      ++n;
      in_token = true;
    } else if (ws) {
      in_token = false;
    }
  }
  return n;
}

inline std::string render_steps(const std::vector<Step>& steps) {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i > 0) out.push_back('\n');
    out += steps[i].rendered;
  }
  return out;
}

inline std::string render_solution(const Solution& s) { return render_steps(s.steps); }

// Maps a rendered step line back to its template. Built by the environment.
struct DetectorConfig {
  // (rendered line, template_id, kind); answer lines are matched by prefix.
  struct Entry {
    std::string rendered;
    std::string template_id;
    StepKind kind;
  };
  std::vector<Entry> entries;
  std::string answer_prefix = "Answer: ";
};

// Splits an environment-rendered text (one step per line) back into steps.
// Round-trip invariant: segment(render(segment(text))) == segment(text).
inline std::vector<Step> segment_steps(const std::string& rendered_text,
                                       const DetectorConfig& detector) {
  if (rendered_text.empty()) {
    throw DegenerateError("segment_steps: empty solution text");
  }
  std::vector<Step> out;
  std::size_t pos = 0;
  while (pos <= rendered_text.size()) {
    std::size_t nl = rendered_text.find('\n', pos);
    if (nl == std::string::npos) nl = rendered_text.size();
    const std::string line = rendered_text.substr(pos, nl - pos);
    if (!line.empty()) {
      Step st;
      st.rendered = line;
      if (line.rfind(detector.answer_prefix, 0) == 0) {
        st.template_id = "answer";
        st.kind = StepKind::Answer;
      } else {
        bool matched = false;
        for (const auto& e : detector.entries) {
          if (e.rendered == line) {
            st.template_id = e.template_id;
            st.kind = e.kind;
            matched = true;
            break;
          }
        }
        if (!matched) {
          throw DegenerateError("segment_steps: unrecognized step line: " + line);
        }
      }
      out.push_back(std::move(st));
    }
    if (nl == rendered_text.size()) break;
    pos = nl + 1;
  }
  if (out.empty()) {
    throw DegenerateError("segment_steps: no steps in text");
  }
  return out;
}

// Checks the well-formedness rules for environment-generated solutions:
// K >= 1, at most one answer step and only in final position, token_count
// consistent with the rendering.
inline void validate_solution(const Solution& s) {
  if (s.steps.empty()) throw DegenerateError("solution has no steps");
  for (std::size_t i = 0; i < s.steps.size(); ++i) {
    if (s.steps[i].kind == StepKind::Answer && i + 1 != s.steps.size()) {
      throw DegenerateError("answer step must be the final step");
    }
  }
  if (s.correct && s.steps.back().kind != StepKind::Answer) {
    throw DegenerateError("a correct solution must end in an answer step");
  }
  if (s.token_count < static_cast<std::int64_t>(s.steps.size())) {
    throw DegenerateError("token_count below step count");
  }
}

}  // namespace steprl
