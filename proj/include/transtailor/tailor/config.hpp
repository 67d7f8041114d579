#pragma once

#include <cstdint>
#include <limits>

#include "transtailor/train.hpp"

namespace transtailor::tailor {

enum class BudgetMode {
  flops_fraction,  // remove budget_fraction * reference FLOPs per iteration
  filter_count,    // remove filters_per_iteration filters per iteration
};

struct TailorConfig {
  // Stop when the candidate's validation accuracy trails the current best
  // sub-model by more than tau percentage points.
  double tau = 0.3;
  BudgetMode budget_mode = BudgetMode::flops_fraction;
  double budget_fraction = 0.10;
  int filters_per_iteration = 0;
  // Budgets are fractions of this FLOPs count; 0 uses the model being pruned.
  std::uint64_t reference_flops = 0;
  int min_filters_per_layer = 1;
  // 0 runs until the stop rule or the filter guard ends the search.
  int max_iterations = 0;

  int head_epochs = 20;
  int factor_epochs = 5;
  int finetune_epochs = 20;
  int batch_size = 32;
  int crop_pad = 0;

  float lr_factor = 0.01f;
  float lr_head = 0.005f;
  float lr_conv = 0.0005f;
  float momentum = 0.9f;
  float weight_decay = 0.005f;

  std::uint64_t seed = 0;

  // Throws ConfigError on out-of-range fields.
  void validate() const;
  TrainOptions train_options(int epochs, std::uint64_t seed_override) const;

  static constexpr double kNeverStop = std::numeric_limits<double>::infinity();
};

}  // namespace transtailor::tailor
