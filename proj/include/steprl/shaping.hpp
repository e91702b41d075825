#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "steprl/core.hpp"

namespace steprl {

enum class SchemeVariant {
  SuccessOnly,
  OR,
  PR,
  PR_Clip,
  PR_Delta,
  PR_Clip_Delta,
  PR_Normed,
  LengthNorm,
  LengthPenalty,
};

// Granularity of the PR-Normed standardization pool.
enum class NormGranularity { Batch, PerSolution };

struct ShapingScheme {
  SchemeVariant variant = SchemeVariant::SuccessOnly;
  double eta = 0.5;              // clip threshold, Clip variants only
  double c_penalty = 0.1;        // per-step penalty, LengthPenalty only
  NormGranularity norm_granularity = NormGranularity::Batch;

  bool uses_prm() const {
    switch (variant) {
      case SchemeVariant::PR:
      case SchemeVariant::PR_Clip:
      case SchemeVariant::PR_Delta:
      case SchemeVariant::PR_Clip_Delta:
      case SchemeVariant::PR_Normed:
      case SchemeVariant::LengthNorm:
      case SchemeVariant::LengthPenalty:
        return true;
      default:
        return false;
    }
  }
  bool uses_orm() const { return variant == SchemeVariant::OR; }
  bool uses_clip() const {
    return variant == SchemeVariant::PR_Clip || variant == SchemeVariant::PR_Clip_Delta;
  }
};

// Scheme names follow the config strings exactly.
inline std::string scheme_name(SchemeVariant v) {
  switch (v) {
    case SchemeVariant::SuccessOnly: return "SR";
    case SchemeVariant::OR: return "SR+OR";
    case SchemeVariant::PR: return "SR+PR";
    case SchemeVariant::PR_Clip: return "SR+PR-Clip";
    case SchemeVariant::PR_Delta: return "SR+PR-Delta";
    case SchemeVariant::PR_Clip_Delta: return "SR+PR-Clip-Delta";
    case SchemeVariant::PR_Normed: return "SR+PR-Normed";
    case SchemeVariant::LengthNorm: return "SR+PR-LengthNorm";
    case SchemeVariant::LengthPenalty: return "SR+PR-LengthPenalty";
  }
  return "?";
}

inline SchemeVariant parse_scheme(const std::string& name) {
  for (SchemeVariant v : {SchemeVariant::SuccessOnly, SchemeVariant::OR, SchemeVariant::PR,
                          SchemeVariant::PR_Clip, SchemeVariant::PR_Delta,
                          SchemeVariant::PR_Clip_Delta, SchemeVariant::PR_Normed,
                          SchemeVariant::LengthNorm, SchemeVariant::LengthPenalty}) {
    if (scheme_name(v) == name) return v;
  }
  throw ConfigError("unknown reward scheme: " + name);
}

struct RewardCoefficients {
  double alpha = 1.0;         // dense-reward coefficient
  double success_coef = 5.0;  // success-reward scale
  double beta = 0.1;          // KL coefficient, consumed by the trainer

  void validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (!(success_coef > 0.0)) throw ConfigError("success_coef must be > 0");
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  }
};

namespace detail {
inline void require_nonempty(const StepRewardSeq& raw, const char* who) {
  if (raw.empty()) throw DegenerateError(std::string(who) + ": empty reward sequence");
}
}  // namespace detail

// PR: rewards pass through untouched.
inline StepRewardSeq shape_pr(const StepRewardSeq& raw) {
  detail::require_nonempty(raw, "shape_pr");
  return raw;
}

// Clip: r_k -> min(r_k - eta, 0). Every shaped reward is <= 0, so the dense
// part of the return never exceeds zero.
inline StepRewardSeq shape_clip(const StepRewardSeq& raw, double eta) {
  detail::require_nonempty(raw, "shape_clip");
  if (!std::isfinite(eta)) throw ConfigError("shape_clip: eta must be finite");
  StepRewardSeq out(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) out[k] = std::min(raw[k] - eta, 0.0);
  return out;
}

// Delta: adjacent-step difference; the last step's reward is dropped. The
// telescoped trajectory return is raw_1 plus the success reward.
inline StepRewardSeq shape_delta(const StepRewardSeq& raw) {
  detail::require_nonempty(raw, "shape_delta");
  const std::size_t K = raw.size();
  StepRewardSeq out(K, 0.0);
  // 1-based cases: out_k = raw_k - raw_{k+1} for k < K-1; out_{K-1} = raw_{K-1}; out_K = 0.
  for (std::size_t k = 1; k <= K; ++k) {
    if (k + 1 < K) {
      out[k - 1] = raw[k - 1] - raw[k];
    } else if (k + 1 == K) {
      out[k - 1] = raw[k - 1];
    } else {
      out[k - 1] = 0.0;
    }
  }
  return out;
}

inline StepRewardSeq shape_clip_delta(const StepRewardSeq& raw, double eta) {
  return shape_delta(shape_clip(raw, eta));
}

inline StepRewardSeq shape_length_norm(const StepRewardSeq& raw) {
  detail::require_nonempty(raw, "shape_length_norm");
  const double inv_k = 1.0 / static_cast<double>(raw.size());
  StepRewardSeq out(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) out[k] = raw[k] * inv_k;
  return out;
}

inline StepRewardSeq shape_length_penalty(const StepRewardSeq& raw, double c_penalty) {
  detail::require_nonempty(raw, "shape_length_penalty");
  StepRewardSeq out(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) {
    out[k] = raw[k] - static_cast<double>(k + 1) * c_penalty;
  }
  return out;
}

// Standardizes rewards pooled over every step of every sequence in the batch:
// pooled mean 0, sample standard deviation 1.
inline std::vector<StepRewardSeq> shape_pr_normed(const std::vector<StepRewardSeq>& batch) {
  std::size_t n = 0;
  double sum = 0.0;
  for (const auto& seq : batch) {
    for (double v : seq) {
      sum += v;
      ++n;
    }
  }
  if (n < 2) throw DegenerateError("shape_pr_normed: need >= 2 step rewards");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& seq : batch) {
    for (double v : seq) ss += (v - mean) * (v - mean);
  }
  const double var = ss / static_cast<double>(n - 1);
  if (!(var > 0.0)) throw DegenerateError("shape_pr_normed: zero variance batch");
  const double inv_sd = 1.0 / std::sqrt(var);
  std::vector<StepRewardSeq> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out[i].resize(batch[i].size());
    for (std::size_t k = 0; k < batch[i].size(); ++k) {
      out[i][k] = (batch[i][k] - mean) * inv_sd;
    }
  }
  return out;
}

// Applies the scheme's per-sequence transform. PR-Normed is batch-relative
// and must go through shape_batch.
inline StepRewardSeq shape_sequence(const ShapingScheme& scheme, const StepRewardSeq& raw) {
  switch (scheme.variant) {
    case SchemeVariant::SuccessOnly:
    case SchemeVariant::OR:
    case SchemeVariant::PR:
      return shape_pr(raw);
    case SchemeVariant::PR_Clip:
      return shape_clip(raw, scheme.eta);
    case SchemeVariant::PR_Delta:
      return shape_delta(raw);
    case SchemeVariant::PR_Clip_Delta:
      return shape_clip_delta(raw, scheme.eta);
    case SchemeVariant::LengthNorm:
      return shape_length_norm(raw);
    case SchemeVariant::LengthPenalty:
      return shape_length_penalty(raw, scheme.c_penalty);
    case SchemeVariant::PR_Normed:
      throw ConfigError("PR-Normed is batch-relative; use shape_batch");
  }
  throw ConfigError("unhandled scheme variant");
}

inline std::vector<StepRewardSeq> shape_batch(const ShapingScheme& scheme,
                                              const std::vector<StepRewardSeq>& raws) {
  if (scheme.variant == SchemeVariant::PR_Normed &&
      scheme.norm_granularity == NormGranularity::Batch) {
    return shape_pr_normed(raws);
  }
  std::vector<StepRewardSeq> out;
  out.reserve(raws.size());
  for (const auto& raw : raws) {
    if (scheme.variant == SchemeVariant::PR_Normed) {
      out.push_back(shape_pr_normed({raw})[0]);
    } else {
      out.push_back(shape_sequence(scheme, raw));
    }
  }
  return out;
}

// Whole-trajectory return: alpha * sum(shaped) + success_coef * correct.
// The KL term lives in the trainer, not here.
inline double trajectory_return(const StepRewardSeq& shaped, bool correct,
                                const RewardCoefficients& coeffs) {
  detail::require_nonempty(shaped, "trajectory_return");
  double sum = 0.0;
  for (double v : shaped) sum += v;
  return coeffs.alpha * sum + coeffs.success_coef * (correct ? 1.0 : 0.0);
}

// Suffix return from step k (1-based): alpha * sum_{i>=k} shaped_i plus the
// success reward delivered at the end.
inline double step_return(const StepRewardSeq& shaped, bool correct, std::size_t k,
                          const RewardCoefficients& coeffs) {
  if (k < 1 || k > shaped.size()) throw RangeError("step_return: k out of range");
  double sum = 0.0;
  for (std::size_t i = k - 1; i < shaped.size(); ++i) sum += shaped[i];
  return coeffs.alpha * sum + coeffs.success_coef * (correct ? 1.0 : 0.0);
}

// Clip threshold calibration: empirical quantile (lower interpolation) of a
// pool of PRM scores. The default level 0.2 leaves roughly 80% of steps at or
// above eta, so the majority of steps receive a clipped reward of exactly 0.
inline double empirical_quantile(std::vector<double> values, double level) {
  if (values.empty()) throw DegenerateError("empirical_quantile: empty sample");
  if (!(level >= 0.0 && level <= 1.0)) throw ConfigError("quantile level must be in [0,1]");
  std::sort(values.begin(), values.end());
  const auto idx = static_cast<std::size_t>(level * static_cast<double>(values.size() - 1));
  return values[idx];
}

}  // namespace steprl
