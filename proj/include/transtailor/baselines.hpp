#pragma once

#include "transtailor/tailor/tailor.hpp"

namespace transtailor::baselines {

using tailor::IterationObserver;
using tailor::ModelGraph;
using tailor::SearchState;
using tailor::TailorConfig;

// FT: new head trained on the target, conv weights frozen.
ModelGraph ft_head(const ModelGraph& pretrained, const data::TargetSplit& target,
                   const TailorConfig& cfg);

// FT-Full: new head, then every parameter trained for finetune_epochs with
// the two-tier learning rates.
ModelGraph ft_full(const ModelGraph& pretrained, const data::TargetSplit& target,
                   const TailorConfig& cfg);

// Target-agnostic ranking by filter weight L1 norm, plain fine-tuning.
tailor::PruneStrategy l1_strategy();

// Same loop as l1_strategy, starting from the FT model.
SearchState l1_prune_pipeline(const ModelGraph& pretrained, const data::TargetSplit& target,
                              const TailorConfig& cfg, const IterationObserver& observer = {});

// Factor training and Taylor importance on source data through the original
// source head (pruned in step with the trunk); importance-aware fine-tuning
// on the target.
tailor::PruneStrategy source_taylor_strategy(const nn::Layer& source_head,
                                             const data::Dataset& source_data,
                                             const TailorConfig& cfg);

SearchState source_taylor_prune_pipeline(const ModelGraph& pretrained,
                                         const data::Dataset& source_val,
                                         const data::TargetSplit& target, const TailorConfig& cfg,
                                         const IterationObserver& observer = {});

}  // namespace transtailor::baselines
