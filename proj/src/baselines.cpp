#include "transtailor/baselines.hpp"

#include <algorithm>
#include <memory>

#include "transtailor/rng.hpp"

namespace transtailor::baselines {

namespace {

constexpr std::uint64_t kFullTag = 5;

TailorConfig with_reference(const TailorConfig& cfg, const ModelGraph& start) {
  TailorConfig out = cfg;
  if (!out.reference_flops) out.reference_flops = nn::flops(start);
  return out;
}

}  // namespace

ModelGraph ft_head(const ModelGraph& pretrained, const data::TargetSplit& target,
                   const TailorConfig& cfg) {
  cfg.validate();
  return tailor::finetune_head(pretrained, target, cfg);
}

ModelGraph ft_full(const ModelGraph& pretrained, const data::TargetSplit& target,
                   const TailorConfig& cfg) {
  cfg.validate();
  TailorConfig no_head = cfg;
  no_head.head_epochs = 0;
  ModelGraph model = tailor::finetune_head(pretrained, target, no_head);
  train_model(model, target.train, TrainScope::all,
              cfg.train_options(cfg.finetune_epochs, Rng::derive(cfg.seed, kFullTag).next_u64()));
  return model;
}

tailor::PruneStrategy l1_strategy() {
  tailor::PruneStrategy s;
  s.method = "l1";
  s.importance_aware = false;
  s.score = [](const ModelGraph& current, int) { return tailor::l1_importance(current); };
  return s;
}

SearchState l1_prune_pipeline(const ModelGraph& pretrained, const data::TargetSplit& target,
                              const TailorConfig& cfg, const IterationObserver& observer) {
  const ModelGraph start = ft_head(pretrained, target, cfg);
  return tailor::run_prune_search(start, target, with_reference(cfg, start), l1_strategy(),
                                  observer);
}

tailor::PruneStrategy source_taylor_strategy(const nn::Layer& source_head,
                                             const data::Dataset& source_data,
                                             const TailorConfig& cfg) {
  auto head = std::make_shared<nn::Layer>(
      nn::Layer{source_head.spec, source_head.weight.detach(), source_head.bias.detach()});
  tailor::PruneStrategy s;
  s.method = "source-taylor";
  s.importance_aware = true;
  // Same scorer as the target-aware method, run through the source head.
  s.score = [head, scorer = tailor::target_aware_strategy(source_data, cfg).score](
                const ModelGraph& current, int iteration) {
    ModelGraph source_view = current;
    source_view.layers().back() = {head->spec, head->weight.detach(), head->bias.detach()};
    source_view.validate();
    return scorer(source_view, iteration);
  };
  s.on_prune = [head](const tailor::PrunePlan& plan, const ModelGraph& before) {
    // Keep the source head's input columns aligned with the last conv layer.
    const int last_conv = before.conv_layers().back();
    std::vector<bool> drop(static_cast<std::size_t>(head->weight.dim(1)), false);
    for (const auto& id : plan.filters) {
      if (id.layer_index == last_conv) drop[id.filter_index] = true;
    }
    const auto rows = head->weight.dim(0);
    const auto cols = head->weight.dim(1);
    std::vector<float> kept;
    auto w = head->weight.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t c = 0; c < cols; ++c) {
        if (!drop[c]) kept.push_back(w[r * cols + c]);
      }
    }
    const auto new_cols = static_cast<std::int64_t>(kept.size()) / rows;
    head->weight = Tensor({rows, new_cols}, std::move(kept));
  };
  return s;
}

SearchState source_taylor_prune_pipeline(const ModelGraph& pretrained,
                                         const data::Dataset& source_val,
                                         const data::TargetSplit& target, const TailorConfig& cfg,
                                         const IterationObserver& observer) {
  const ModelGraph start = ft_head(pretrained, target, cfg);
  const TailorConfig search_cfg = with_reference(cfg, start);
  return tailor::run_prune_search(start, target, search_cfg,
                                  source_taylor_strategy(pretrained.head(), source_val, search_cfg),
                                  observer);
}

}  // namespace transtailor::baselines
