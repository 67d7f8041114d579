#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "transtailor/data/synthetic.hpp"

namespace transtailor::verify {

// Randomized property checks shared by the `verify` command and the test
// suites. Each returns measurements; callers decide pass/fail against the
// tolerances below.

inline constexpr double kGradTolerance = 1e-3;
inline constexpr double kEquivalenceTolerance = 1e-5;
inline constexpr double kOracleThreshold = 0.7;

struct GradCheck {
  std::string op;
  int trials = 0;
  int failed_trials = 0;
  double max_rel_error = 0.0;
};

// Central differences against reverse mode for every differentiable op plus
// a small factor-scaled model. Relative error per coordinate is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-2).
std::vector<GradCheck> gradient_checks(int trials_per_op, std::uint64_t seed);

struct Equivalence {
  int trials = 0;
  double max_abs_diff = 0.0;
};

// Structurally pruned forward vs zero-factor masked forward on random models
// and random plans.
Equivalence prune_equivalence(int trials, std::uint64_t seed);

// Factor-free forward of fold_importance(model, beta) vs beta-scaled forward.
Equivalence fold_equivalence(int trials, std::uint64_t seed);

// Two-class stripe task (horizontal vs vertical, one distractor disc).
data::PatternTask toy_stripe_task();

struct OracleCheck {
  std::vector<double> rho;  // one per seed
  double mean = 0.0;
};

// Trains a conv4-conv4 model on the stripe task per seed, then compares the
// Taylor importance of trained factors against the leave-one-out oracle by
// Spearman correlation.
OracleCheck taylor_oracle_check(const std::vector<std::uint64_t>& seeds);

}  // namespace transtailor::verify
