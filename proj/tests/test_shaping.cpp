#include <doctest.h>

#include <cmath>

#include "steprl/rng.hpp"
#include "steprl/shaping.hpp"
#include "support/oracle.hpp"

using namespace steprl;

namespace {

StepRewardSeq random_seq(Rng& rng, std::size_t max_len = 50) {
  const std::size_t len = 1 + rng.next_below(max_len);
  StepRewardSeq seq(len);
  for (double& v : seq) v = rng.next_double();
  return seq;
}

}  // namespace

TEST_CASE("shape_pr is the identity") {
  CHECK(shape_pr({0.6, 0.7, 0.9}) == StepRewardSeq{0.6, 0.7, 0.9});
  CHECK(shape_pr({1.0}) == StepRewardSeq{1.0});
  CHECK_THROWS_AS(shape_pr({}), DegenerateError);
}

TEST_CASE("shape_clip subtracts eta and caps at zero") {
  const StepRewardSeq out = shape_clip({0.9, 0.3, 0.8}, 0.5);
  REQUIRE(out.size() == 3);
  CHECK(out[0] == doctest::Approx(0.0));
  CHECK(out[1] == doctest::Approx(-0.2));
  CHECK(out[2] == doctest::Approx(0.0));

  CHECK(shape_clip({0.5, 0.5}, 0.5) == StepRewardSeq{0.0, 0.0});
  CHECK(shape_clip({-0.1}, 0.0) == StepRewardSeq{-0.1});
  CHECK_THROWS_AS(shape_clip({0.5}, std::nan("")), ConfigError);
}

TEST_CASE("clip boundedness over random sequences") {
  RewardCoefficients coeffs;
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const StepRewardSeq raw = random_seq(rng);
    const double eta = rng.next_double(-1.0, 2.0);
    const StepRewardSeq shaped = shape_clip(raw, eta);
    for (double v : shaped) CHECK(v <= 0.0);
    const bool correct = rng.next_below(2) == 1;
    CHECK(trajectory_return(shaped, correct, coeffs) <= coeffs.success_coef);
  }
}

TEST_CASE("shape_delta matches the three-case formula") {
  const StepRewardSeq out = shape_delta({0.6, 0.7, 0.9});
  REQUIRE(out.size() == 3);
  CHECK(out[0] == doctest::Approx(-0.1));
  CHECK(out[1] == doctest::Approx(0.7));
  CHECK(out[2] == doctest::Approx(0.0));

  CHECK(shape_delta({0.4}) == StepRewardSeq{0.0});
  CHECK(shape_delta({0.3, 0.8}) == StepRewardSeq{0.3, 0.0});
}

TEST_CASE("delta telescoping: the shaped sum collapses to the first raw reward") {
  Rng rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    const StepRewardSeq raw = random_seq(rng);
    const StepRewardSeq shaped = shape_delta(raw);
    double sum = 0.0;
    for (double v : shaped) sum += v;
    if (raw.size() == 1) {
      CHECK(sum == doctest::Approx(0.0).epsilon(1e-12));
    } else {
      CHECK(sum == doctest::Approx(raw[0]).epsilon(1e-12));
    }
  }
}

TEST_CASE("delta prefix stability: future steps do not rewrite earlier rewards") {
  Rng rng(56);
  for (int trial = 0; trial < 200; ++trial) {
    StepRewardSeq raw = random_seq(rng, 20);
    const std::size_t k_old = raw.size();
    const StepRewardSeq before = shape_delta(raw);
    const std::size_t extra = 1 + rng.next_below(10);
    for (std::size_t i = 0; i < extra; ++i) raw.push_back(rng.next_double());
    const StepRewardSeq after = shape_delta(raw);
    // 1-based indices k < K_old - 1 keep their shaped value.
    for (std::size_t k = 0; k + 2 < k_old; ++k) {
      CHECK(after[k] == before[k]);
    }
  }
}

TEST_CASE("delta suffix sums satisfy the return identity (oracle check)") {
  RewardCoefficients coeffs;
  Rng rng(57);
  for (int trial = 0; trial < 1000; ++trial) {
    const StepRewardSeq raw = random_seq(rng);
    const bool correct = rng.next_below(2) == 1;
    const StepRewardSeq shaped = shape_delta(raw);
    const std::size_t K = raw.size();
    for (std::size_t k = 1; k <= K; ++k) {
      const double got = step_return(shaped, correct, k, coeffs);
      const double want = k < K ? coeffs.alpha * raw[k - 1] +
                                      coeffs.success_coef * (correct ? 1.0 : 0.0)
                                : coeffs.success_coef * (correct ? 1.0 : 0.0);
      CHECK(std::abs(got - want) <= 1e-9);
    }
  }
}

TEST_CASE("shape_clip_delta composes clip then delta") {
  const StepRewardSeq a = shape_clip_delta({0.9, 0.3, 0.8}, 0.5);
  REQUIRE(a.size() == 3);
  CHECK(a[0] == doctest::Approx(0.2));
  CHECK(a[1] == doctest::Approx(-0.2));
  CHECK(a[2] == doctest::Approx(0.0));

  CHECK(shape_clip_delta({0.9}, 0.5) == StepRewardSeq{0.0});

  const StepRewardSeq b = shape_clip_delta({0.2, 0.2, 0.2, 0.2}, 0.5);
  REQUIRE(b.size() == 4);
  CHECK(b[0] == doctest::Approx(0.0));
  CHECK(b[1] == doctest::Approx(0.0));
  CHECK(b[2] == doctest::Approx(-0.3));
  CHECK(b[3] == doctest::Approx(0.0));

  Rng rng(58);
  for (int trial = 0; trial < 100; ++trial) {
    const StepRewardSeq raw = random_seq(rng);
    const double eta = rng.next_double();
    CHECK(shape_clip_delta(raw, eta) == shape_delta(shape_clip(raw, eta)));
  }
}

TEST_CASE("shape_length_norm divides by K") {
  const StepRewardSeq out = shape_length_norm({0.6, 0.6, 0.6});
  for (double v : out) CHECK(v == doctest::Approx(0.2));
  CHECK(shape_length_norm({0.9}) == StepRewardSeq{0.9});
  const StepRewardSeq half = shape_length_norm({1.0, 0.0});
  CHECK(half[0] == doctest::Approx(0.5));
  CHECK(half[1] == doctest::Approx(0.0));

  // Sum preservation: sum(out) == sum(raw)/K.
  Rng rng(59);
  for (int trial = 0; trial < 100; ++trial) {
    const StepRewardSeq raw = random_seq(rng);
    double raw_sum = 0.0;
    for (double v : raw) raw_sum += v;
    double out_sum = 0.0;
    for (double v : shape_length_norm(raw)) out_sum += v;
    CHECK(out_sum == doctest::Approx(raw_sum / static_cast<double>(raw.size())).epsilon(1e-12));
  }
}

TEST_CASE("shape_length_penalty charges k * c") {
  const StepRewardSeq a = shape_length_penalty({0.5, 0.5}, 0.1);
  CHECK(a[0] == doctest::Approx(0.4));
  CHECK(a[1] == doctest::Approx(0.3));
  CHECK(shape_length_penalty({0.5}, 0.0) == StepRewardSeq{0.5});
  const StepRewardSeq b = shape_length_penalty({0.0, 0.0, 0.0}, 1.0);
  CHECK(b[0] == doctest::Approx(-1.0));
  CHECK(b[1] == doctest::Approx(-2.0));
  CHECK(b[2] == doctest::Approx(-3.0));
}

TEST_CASE("shape_pr_normed standardizes the pooled batch") {
  const auto one = shape_pr_normed({{1.0, 3.0}});
  REQUIRE(one.size() == 1);
  CHECK(one[0][0] == doctest::Approx(-0.70710678).epsilon(1e-8));
  CHECK(one[0][1] == doctest::Approx(0.70710678).epsilon(1e-8));

  CHECK_THROWS_AS(shape_pr_normed({{5.0, 5.0, 5.0}}), DegenerateError);

  const auto two = shape_pr_normed({{0.0}, {2.0}});
  REQUIRE(two.size() == 2);
  CHECK(two[0][0] == doctest::Approx(-0.70710678).epsilon(1e-8));
  CHECK(two[1][0] == doctest::Approx(0.70710678).epsilon(1e-8));
}

TEST_CASE("pr-normed pooled moments over random batches") {
  Rng rng(60);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<StepRewardSeq> batch(1 + rng.next_below(8));
    for (auto& seq : batch) seq = random_seq(rng, 12);
    std::size_t total = 0;
    for (const auto& seq : batch) total += seq.size();
    if (total < 2) continue;
    const auto shaped = shape_pr_normed(batch);
    double sum = 0.0;
    for (const auto& seq : shaped) {
      for (double v : seq) sum += v;
    }
    const double mean = sum / static_cast<double>(total);
    CHECK(std::abs(mean) < 1e-9);
    double ss = 0.0;
    for (const auto& seq : shaped) {
      for (double v : seq) ss += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(ss / static_cast<double>(total - 1));
    CHECK(std::abs(sd - 1.0) < 1e-9);
  }
}

TEST_CASE("trajectory_return and step_return arithmetic") {
  RewardCoefficients coeffs;  // alpha=1, success_coef=5
  CHECK(trajectory_return({-0.1, 0.7, 0.0}, true, coeffs) == doctest::Approx(5.6));
  CHECK(trajectory_return({0.0, 0.0, 0.0}, true, coeffs) == doctest::Approx(5.0));
  CHECK_THROWS_AS(trajectory_return({}, false, coeffs), DegenerateError);

  const StepRewardSeq shaped = shape_delta({0.6, 0.7, 0.9});
  CHECK(step_return(shaped, false, 1, coeffs) == doctest::Approx(0.6));
  CHECK(step_return(shaped, false, 3, coeffs) == doctest::Approx(0.0));
  CHECK_THROWS_AS(step_return(shaped, false, 4, coeffs), RangeError);
}

TEST_CASE("scheme names round-trip and transforms are pure") {
  for (SchemeVariant v : {SchemeVariant::SuccessOnly, SchemeVariant::OR, SchemeVariant::PR,
                          SchemeVariant::PR_Clip, SchemeVariant::PR_Delta,
                          SchemeVariant::PR_Clip_Delta, SchemeVariant::PR_Normed,
                          SchemeVariant::LengthNorm, SchemeVariant::LengthPenalty}) {
    CHECK(parse_scheme(scheme_name(v)) == v);
  }
  CHECK_THROWS_AS(parse_scheme("SR+PR-Bogus"), ConfigError);

  // Bit-identical outputs on repeated calls.
  Rng rng(61);
  const StepRewardSeq raw = random_seq(rng);
  CHECK(shape_delta(raw) == shape_delta(raw));
  CHECK(shape_clip(raw, 0.37) == shape_clip(raw, 0.37));
}

TEST_CASE("library returns agree with the brute-force oracle") {
  RewardCoefficients coeffs;
  oracle::Coeffs ocoeffs{coeffs.alpha, coeffs.success_coef};
  Rng rng(62);
  const std::pair<SchemeVariant, oracle::Scheme> pairs[] = {
      {SchemeVariant::PR, oracle::Scheme::PR},
      {SchemeVariant::PR_Clip, oracle::Scheme::Clip},
      {SchemeVariant::PR_Delta, oracle::Scheme::Delta},
      {SchemeVariant::PR_Clip_Delta, oracle::Scheme::ClipDelta},
      {SchemeVariant::LengthNorm, oracle::Scheme::LengthNorm},
      {SchemeVariant::LengthPenalty, oracle::Scheme::LengthPenalty},
  };
  for (int trial = 0; trial < 2000; ++trial) {
    const StepRewardSeq raw = random_seq(rng, 30);
    const bool correct = rng.next_below(2) == 1;
    const double eta = rng.next_double();
    const double c_pen = rng.next_double(0.0, 0.5);
    const auto& [variant, oscheme] = pairs[rng.next_below(6)];
    ShapingScheme scheme;
    scheme.variant = variant;
    scheme.eta = eta;
    scheme.c_penalty = c_pen;
    const StepRewardSeq shaped = shape_sequence(scheme, raw);
    const std::size_t k = 1 + rng.next_below(raw.size());
    const double lib = step_return(shaped, correct, k, coeffs);
    const double ora = oracle::suffix_return(oscheme, raw, correct, ocoeffs,
                                             static_cast<int>(k), eta, c_pen);
    CHECK(std::abs(lib - ora) <= 1e-12);
    const double lib_whole = trajectory_return(shaped, correct, coeffs);
    const double ora_whole = oracle::whole_return(oscheme, raw, correct, ocoeffs, eta, c_pen);
    CHECK(std::abs(lib_whole - ora_whole) <= 1e-12);
  }
}

TEST_CASE("empirical_quantile basics") {
  CHECK(empirical_quantile({3.0, 1.0, 2.0}, 0.0) == 1.0);
  CHECK(empirical_quantile({3.0, 1.0, 2.0}, 1.0) == 3.0);
  CHECK(empirical_quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
  CHECK_THROWS_AS(empirical_quantile({}, 0.5), DegenerateError);
  CHECK_THROWS_AS(empirical_quantile({1.0}, 1.5), ConfigError);
}

TEST_CASE("oracle spec cases: K=1 delta and inactive clip") {
  RewardCoefficients coeffs;
  oracle::Coeffs ocoeffs{coeffs.alpha, coeffs.success_coef};

  // K=1 under delta: the shaped reward vanishes, only success remains.
  CHECK(oracle::suffix_return(oracle::Scheme::Delta, {0.73}, true, ocoeffs, 1) ==
        doctest::Approx(coeffs.success_coef));
  CHECK(step_return(shape_delta({0.73}), true, 1, coeffs) ==
        doctest::Approx(coeffs.success_coef));

  // Eta above every raw value: the zero branch of min is inactive, so the
  // return is alpha*sum(raw-eta)+success.
  const StepRewardSeq raw = {0.5, 0.8, 0.6};
  const double eta = 0.9;
  double expect = 0.0;
  for (double v : raw) expect += v - eta;
  expect = coeffs.alpha * expect + coeffs.success_coef;
  CHECK(oracle::whole_return(oracle::Scheme::Clip, raw, true, ocoeffs, eta) ==
        doctest::Approx(expect).epsilon(1e-12));
  CHECK(trajectory_return(shape_clip(raw, eta), true, coeffs) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("per-solution normalization standardizes each sequence alone") {
  ShapingScheme scheme;
  scheme.variant = SchemeVariant::PR_Normed;
  scheme.norm_granularity = NormGranularity::PerSolution;
  const auto shaped = shape_batch(scheme, {{1.0, 3.0}, {0.0, 10.0, 20.0}});
  REQUIRE(shaped.size() == 2);
  for (const auto& seq : shaped) {
    double sum = 0.0;
    for (double v : seq) sum += v;
    const double mean = sum / static_cast<double>(seq.size());
    CHECK(std::abs(mean) < 1e-9);
    double ss = 0.0;
    for (double v : seq) ss += (v - mean) * (v - mean);
    CHECK(std::abs(std::sqrt(ss / static_cast<double>(seq.size() - 1)) - 1.0) < 1e-9);
  }
  // A K=1 sequence cannot be standardized alone.
  CHECK_THROWS_AS(shape_batch(scheme, {{0.7}}), DegenerateError);
}
