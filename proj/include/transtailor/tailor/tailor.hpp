#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "transtailor/data/dataset.hpp"
#include "transtailor/nn/model.hpp"
#include "transtailor/tailor/config.hpp"

namespace transtailor::tailor {

using nn::FilterId;
using nn::ImportanceVector;
using nn::ModelGraph;
using nn::ScalingFactors;

struct PrunePlan {
  std::vector<FilterId> filters;  // removal order
  std::uint64_t predicted_flops = 0;
};

// One entry per conv filter, uniform in [0.75, 1.25], trainable.
ScalingFactors init_factors(const ModelGraph& model, std::uint64_t seed);

// Learns the scaling factors on `data` with every model weight frozen. Keeps
// the factors with the lowest full-data loss seen at epoch boundaries, so the
// result never scores worse than the initial factors.
ScalingFactors train_factors(const ModelGraph& model, const ScalingFactors& factors,
                             const data::Dataset& data, const TailorConfig& cfg);

// beta_j = |mean over batches of dL/dalpha_j| * |alpha_j|, batches taken in
// dataset order. loss_scale multiplies the loss before differentiation.
ImportanceVector taylor_importance(const ModelGraph& model, const ScalingFactors& factors,
                                   const data::Dataset& data, int batch_size = 32,
                                   float loss_scale = 1.0f);

// Per-filter L1 norm of conv weights (bias excluded).
ImportanceVector l1_importance(const ModelGraph& model);

// Globally ascending by score, ties by (layer, filter). Throws
// PruneBudgetError when the guard makes the budget unreachable.
PrunePlan build_prune_plan(const ModelGraph& model, const ImportanceVector& scores,
                           const TailorConfig& cfg);

struct PruneResult {
  ModelGraph model;
  ImportanceVector importance;
};

// Removes the planned filters and the matching input channels of each
// following conv/linear layer.
PruneResult apply_prune(const ModelGraph& model, const ImportanceVector& importance,
                        const PrunePlan& plan);

inline constexpr float kGuidanceMin = 0.25f;
inline constexpr float kGuidanceMax = 4.0f;

// Per-layer importance rescaled to unit mean and clamped to
// [kGuidanceMin, kGuidanceMax]; an all-zero layer maps to ones. Ordering
// within a layer is preserved up to the clamp.
ImportanceVector guidance_importance(const ImportanceVector& importance);

// Fine-tunes every weight of the importance-scaled network with the
// importance vector frozen. Training starts from `model`'s function: each
// filter's weights and bias are first divided by its (positive) importance,
// so the scaled network initially equals the unscaled one and importance acts
// on how far each filter moves. The result is meant for the scaled forward or
// for fold_importance.
ModelGraph importance_finetune(const ModelGraph& model, const ImportanceVector& importance,
                               const data::Dataset& data, const TailorConfig& cfg);

// ---------------------------------------------------------------------------
// Iterative sub-model search

enum class StopReason { none, accuracy_drop, filter_guard, max_iterations };
std::string to_string(StopReason reason);

struct IterationRecord {
  int iteration = 0;
  std::uint64_t flops = 0;
  double flops_reduction = 0.0;  // relative to the search's reference FLOPs
  double val_accuracy = 0.0;     // percent
  bool accepted = false;
  std::vector<int> filters_per_layer;
  double seconds = 0.0;
};

struct SearchState {
  int iteration = 0;
  ModelGraph best;
  double best_accuracy = 0.0;
  std::uint64_t best_flops = 0;
  std::uint64_t reference_flops = 0;
  std::vector<IterationRecord> history;
  StopReason stop_reason = StopReason::none;
};

// True when the candidate is worse than the current best by more than tau.
bool should_stop(double best_accuracy, double candidate_accuracy, double tau);

// Per-iteration behaviour of a prune/fine-tune search.
struct PruneStrategy {
  std::string method;
  // Scores the current sub-model's filters for ranking.
  std::function<ImportanceVector(const ModelGraph& current, int iteration)> score;
  // Fine-tune the pruned model with its (unit-mean) importance frozen and
  // fold it in afterwards; otherwise fine-tune plainly.
  bool importance_aware = true;
  // Optional: sees each plan together with the model it was built for.
  std::function<void(const PrunePlan&, const ModelGraph& before)> on_prune;
};

// Called after every evaluated sub-model (iteration 0 is the start model).
using IterationObserver = std::function<void(const IterationRecord&, const ModelGraph&)>;

// Runs the prune -> fine-tune -> stop-rule loop from `start`.
SearchState run_prune_search(const ModelGraph& start, const data::TargetSplit& target,
                             const TailorConfig& cfg, const PruneStrategy& strategy,
                             const IterationObserver& observer = {});

// TransTailor ranking: fresh factors -> factor training -> Taylor transform.
PruneStrategy target_aware_strategy(const data::Dataset& importance_data, const TailorConfig& cfg);

// Head replacement + head fine-tuning on the target (the FT starting model).
ModelGraph finetune_head(const ModelGraph& pretrained, const data::TargetSplit& target,
                         const TailorConfig& cfg);

struct SourceMeta {
  std::string name;
  int class_count = 0;
};

struct SearchResult {
  ModelGraph model;  // importance already folded in
  SearchState state;
};

// Full pipeline: head fine-tune, then iterative target-aware pruning with
// importance-aware fine-tuning until the stop rule fires.
SearchResult search_optimal(const ModelGraph& pretrained, const SourceMeta& source,
                            const data::TargetSplit& target, const TailorConfig& cfg,
                            const IterationObserver& observer = {});

}  // namespace transtailor::tailor
