#include "transtailor/tailor/tailor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include "transtailor/ops.hpp"
#include "transtailor/optim.hpp"
#include "transtailor/rng.hpp"

namespace transtailor::tailor {

namespace {

// Seed stream tags.
constexpr std::uint64_t kFactorInitTag = 1;
constexpr std::uint64_t kFactorTrainTag = 2;
constexpr std::uint64_t kFinetuneTag = 3;
constexpr std::uint64_t kHeadTag = 4;

std::uint64_t iteration_seed(std::uint64_t seed, int iteration, std::uint64_t tag) {
  return Rng::derive(seed, static_cast<std::uint64_t>(iteration) * 16 + tag).next_u64();
}

ScalingFactors clone_factors(const nn::FilterVectors& src, bool trainable) {
  ScalingFactors out;
  for (const auto& t : src.layers) {
    Tensor c = t.detach();
    c.set_requires_grad(trainable);
    out.layers.push_back(c);
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void TailorConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("tailor config: " + msg); };
  if (!(tau >= 0.0)) fail("tau must be non-negative");
  if (budget_mode == BudgetMode::flops_fraction && !(budget_fraction > 0.0 && budget_fraction < 1.0)) {
    fail("budget fraction must lie in (0,1)");
  }
  if (budget_mode == BudgetMode::filter_count && filters_per_iteration < 1) {
    fail("filter-count budget needs filters_per_iteration >= 1");
  }
  if (min_filters_per_layer < 1) fail("min filters per layer must be >= 1");
  if (max_iterations < 0) fail("max_iterations must be >= 0");
  if (head_epochs < 0 || factor_epochs < 0 || finetune_epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch size must be >= 1");
  if (crop_pad < 0) fail("crop padding must be >= 0");
  if (!(lr_factor > 0 && lr_head > 0 && lr_conv > 0)) fail("learning rates must be positive");
  if (momentum < 0 || momentum >= 1) fail("momentum must lie in [0,1)");
  if (weight_decay < 0) fail("weight decay must be non-negative");
}

TrainOptions TailorConfig::train_options(int epochs, std::uint64_t seed_override) const {
  TrainOptions o;
  o.epochs = epochs;
  o.batch_size = batch_size;
  o.lr_conv = lr_conv;
  o.lr_head = lr_head;
  o.momentum = momentum;
  o.weight_decay = weight_decay;
  o.crop_pad = crop_pad;
  o.seed = seed_override;
  return o;
}

ScalingFactors init_factors(const ModelGraph& model, std::uint64_t seed) {
  Rng rng(seed);
  ScalingFactors f = ScalingFactors::filled(model, 1.0f, true);
  for (auto& layer : f.layers) {
    for (auto& v : layer.data()) v = rng.uniform(0.75f, 1.25f);
  }
  return f;
}

ScalingFactors train_factors(const ModelGraph& model, const ScalingFactors& factors,
                             const data::Dataset& data, const TailorConfig& cfg) {
  if (model.any_trainable()) {
    throw ContractError("train_factors: model weights must be frozen");
  }
  nn::check_factors_match(model, factors);
  ScalingFactors current = clone_factors(factors, true);
  if (cfg.factor_epochs <= 0) return current;

  ScalingFactors best = clone_factors(current, true);
  double best_loss = mean_loss(model, data, &current);
  Sgd sgd;
  sgd.add_group(current.layers, {cfg.lr_factor, cfg.momentum, cfg.weight_decay});
  const auto seed = Rng::derive(cfg.seed, kFactorTrainTag).next_u64();
  auto logits = [&](const Tensor& images) { return nn::forward(model, images, current); };
  for (int epoch = 0; epoch < cfg.factor_epochs; ++epoch) {
    // One epoch at a time so every epoch boundary can be scored.
    fit(sgd, logits, data, 1, cfg.batch_size, 0, Rng::derive(seed, epoch).next_u64());
    const double loss = mean_loss(model, data, &current);
    if (loss <= best_loss) {
      best_loss = loss;
      best = clone_factors(current, true);
    }
  }
  return best;
}

ImportanceVector taylor_importance(const ModelGraph& model, const ScalingFactors& factors,
                                   const data::Dataset& data, int batch_size, float loss_scale) {
  nn::check_factors_match(model, factors);
  const ModelGraph* frozen = &model;
  ModelGraph copy;
  if (model.any_trainable()) {
    copy = model;
    copy.set_trainable(false);
    frozen = &copy;
  }
  ScalingFactors alpha = clone_factors(factors, true);
  data::BatchIterator batches(data, batch_size, false, 0);
  std::int64_t count = 0;
  while (auto batch = batches.next()) {
    Tensor loss = ops::softmax_cross_entropy(nn::forward(*frozen, batch->images, alpha),
                                             batch->labels);
    if (loss_scale != 1.0f) loss = ops::scale(loss, loss_scale);
    loss.backward();
    ++count;
  }
  ImportanceVector beta;
  for (auto& a : alpha.layers) {
    Tensor b(a.shape());
    auto g = a.grad();
    auto values = a.data();
    auto out = b.data();
    for (std::size_t j = 0; j < out.size(); ++j) {
      out[j] = std::fabs(g[j] / static_cast<float>(count)) * std::fabs(values[j]);
    }
    beta.layers.push_back(b);
  }
  return beta;
}

ImportanceVector l1_importance(const ModelGraph& model) {
  ImportanceVector scores;
  for (int li : model.conv_layers()) {
    const auto& w = model.layers()[li].weight;
    const auto filters = w.dim(0);
    const auto per = w.numel() / filters;
    Tensor s(Shape{filters});
    auto wd = w.data();
    for (std::int64_t f = 0; f < filters; ++f) {
      float acc = 0.0f;
      for (std::int64_t i = 0; i < per; ++i) acc += std::fabs(wd[f * per + i]);
      s.data()[f] = acc;
    }
    scores.layers.push_back(s);
  }
  return scores;
}

PrunePlan build_prune_plan(const ModelGraph& model, const ImportanceVector& scores,
                           const TailorConfig& cfg) {
  nn::check_factors_match(model, scores);
  const auto convs = model.conv_layers();
  struct Candidate {
    float score;
    FilterId id;
    std::size_t ordinal;
  };
  std::vector<Candidate> candidates;
  for (std::size_t c = 0; c < convs.size(); ++c) {
    auto s = scores.layers[c].data();
    for (std::size_t f = 0; f < s.size(); ++f) {
      candidates.push_back({s[f], {convs[c], static_cast<int>(f)}, c});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.id < b.id;
  });

  auto counts = model.filter_counts();
  const std::uint64_t start_flops = nn::flops(model);
  const std::uint64_t reference = cfg.reference_flops ? cfg.reference_flops : start_flops;
  const bool by_count = cfg.budget_mode == BudgetMode::filter_count;
  const double target = by_count ? static_cast<double>(cfg.filters_per_iteration)
                                 : cfg.budget_fraction * static_cast<double>(reference);

  PrunePlan plan;
  plan.predicted_flops = start_flops;
  double achieved = 0.0;
  for (const auto& cand : candidates) {
    if (achieved >= target) break;
    if (counts[cand.ordinal] - 1 < cfg.min_filters_per_layer) continue;
    --counts[cand.ordinal];
    plan.filters.push_back(cand.id);
    plan.predicted_flops = nn::flops_with_filters(model, counts);
    achieved = by_count ? static_cast<double>(plan.filters.size())
                        : static_cast<double>(start_flops - plan.predicted_flops);
  }
  if (achieved < target) {
    std::ostringstream msg;
    msg << "pruning budget unreachable: min-filters-per-layer guard (" << cfg.min_filters_per_layer
        << ") binds on every layer; at most " << (by_count ? "" : "FLOPs ") << achieved
        << " removable, budget " << target << "; filters per layer now [";
    const auto now = model.filter_counts();
    for (std::size_t i = 0; i < now.size(); ++i) msg << (i ? "," : "") << now[i];
    msg << "]";
    throw PruneBudgetError(msg.str());
  }
  return plan;
}

PruneResult apply_prune(const ModelGraph& model, const ImportanceVector& importance,
                        const PrunePlan& plan) {
  nn::check_factors_match(model, importance);
  const auto convs = model.conv_layers();
  const auto counts = model.filter_counts();
  std::vector<std::vector<bool>> removed(convs.size());
  for (std::size_t c = 0; c < convs.size(); ++c) removed[c].assign(counts[c], false);
  for (const auto& id : plan.filters) {
    const auto it = std::find(convs.begin(), convs.end(), id.layer_index);
    if (it == convs.end()) {
      throw ContractError("apply_prune: dangling filter id (layer " +
                          std::to_string(id.layer_index) + " is not a conv layer)");
    }
    const auto c = static_cast<std::size_t>(it - convs.begin());
    if (id.filter_index < 0 || id.filter_index >= counts[c]) {
      throw ContractError("apply_prune: dangling filter id (layer " +
                          std::to_string(id.layer_index) + ", filter " +
                          std::to_string(id.filter_index) + ")");
    }
    if (removed[c][id.filter_index]) {
      throw ContractError("apply_prune: duplicate filter id in plan");
    }
    removed[c][id.filter_index] = true;
  }
  if (plan.filters.empty()) return {model, importance};

  std::vector<nn::Layer> layers;
  for (const auto& l : model.layers()) {
    if (l.spec.has_params()) layers.push_back({l.spec, l.weight.detach(), l.bias.detach()});
    else layers.push_back({l.spec, {}, {}});
  }
  ImportanceVector kept_importance;

  // `keep_in` holds the surviving input channels of the next param layer.
  std::vector<int> keep_in;
  std::size_t conv_seen = 0;
  for (auto& l : layers) {
    if (!l.spec.has_params()) continue;
    // Drop input channels first.
    if (!keep_in.empty()) {
      const auto& w = l.weight;
      const auto cin_old = w.dim(1);
      const auto inner = w.numel() / (w.dim(0) * cin_old);
      Shape shape = w.shape();
      shape[1] = static_cast<std::int64_t>(keep_in.size());
      std::vector<float> data;
      data.reserve(static_cast<std::size_t>(shape_numel(shape)));
      auto src = w.data();
      for (std::int64_t o = 0; o < w.dim(0); ++o) {
        for (int ci : keep_in) {
          const auto base = (o * cin_old + ci) * inner;
          data.insert(data.end(), src.begin() + base, src.begin() + base + inner);
        }
      }
      l.weight = Tensor(shape, std::move(data));
    }
    if (l.spec.kind != nn::LayerKind::conv) break;
    // Then output filters.
    std::vector<int> keep_out;
    for (int f = 0; f < counts[conv_seen]; ++f) {
      if (!removed[conv_seen][f]) keep_out.push_back(f);
    }
    const auto& w = l.weight;
    const auto per = w.numel() / w.dim(0);
    Shape shape = w.shape();
    shape[0] = static_cast<std::int64_t>(keep_out.size());
    std::vector<float> wdata, bdata, idata;
    auto src = w.data();
    auto bias = l.bias.data();
    auto imp = importance.layers[conv_seen].data();
    for (int f : keep_out) {
      wdata.insert(wdata.end(), src.begin() + f * per, src.begin() + (f + 1) * per);
      bdata.push_back(bias[f]);
      idata.push_back(imp[f]);
    }
    l.weight = Tensor(shape, std::move(wdata));
    l.bias = Tensor(Shape{shape[0]}, std::move(bdata));
    l.spec.out = static_cast<int>(keep_out.size());
    kept_importance.layers.emplace_back(Shape{shape[0]}, std::move(idata));
    keep_in = std::move(keep_out);
    ++conv_seen;
  }
  ModelGraph pruned(model.input_shape(), std::move(layers));
  return {std::move(pruned), std::move(kept_importance)};
}

ImportanceVector guidance_importance(const ImportanceVector& importance) {
  ImportanceVector out;
  for (const auto& layer : importance.layers) {
    Tensor t = layer.detach();
    auto v = t.data();
    float total = 0.0f;
    for (float x : v) total += x;
    for (auto& x : v) {
      x = total > 0.0f ? std::clamp(x * static_cast<float>(v.size()) / total, kGuidanceMin,
                                    kGuidanceMax)
                       : 1.0f;
    }
    out.layers.push_back(t);
  }
  return out;
}

ModelGraph importance_finetune(const ModelGraph& model, const ImportanceVector& importance,
                               const data::Dataset& data, const TailorConfig& cfg) {
  if (importance.trainable()) {
    throw ContractError("importance_finetune: importance vector must be frozen");
  }
  nn::check_factors_match(model, importance);
  importance.check_non_negative();
  ModelGraph tuned(model);
  const auto convs = tuned.conv_layers();
  for (std::size_t c = 0; c < convs.size(); ++c) {
    auto& layer = tuned.layers()[convs[c]];
    const auto beta = importance.layers[c].data();
    auto w = layer.weight.data();
    auto b = layer.bias.data();
    const auto per = w.size() / beta.size();
    for (std::size_t f = 0; f < beta.size(); ++f) {
      if (!(beta[f] > 0.0f)) {
        throw ContractError("importance_finetune: importance must be positive (conv layer " +
                            std::to_string(c) + ", filter " + std::to_string(f) + ")");
      }
      for (std::size_t j = 0; j < per; ++j) w[f * per + j] /= beta[f];
      b[f] /= beta[f];
    }
  }
  train_model(tuned, data, TrainScope::all,
              cfg.train_options(cfg.finetune_epochs, Rng::derive(cfg.seed, kFinetuneTag).next_u64()),
              &importance);
  return tuned;
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::none: return "none";
    case StopReason::accuracy_drop: return "accuracy_drop";
    case StopReason::filter_guard: return "filter_guard";
    case StopReason::max_iterations: return "max_iterations";
  }
  return "unknown";
}

bool should_stop(double best_accuracy, double candidate_accuracy, double tau) {
  return best_accuracy - candidate_accuracy > tau;
}

SearchState run_prune_search(const ModelGraph& start, const data::TargetSplit& target,
                             const TailorConfig& cfg, const PruneStrategy& strategy,
                             const IterationObserver& observer) {
  cfg.validate();
  const auto clock_start = std::chrono::steady_clock::now();
  SearchState state;
  state.best = start;
  state.best.set_trainable(false);
  state.best_flops = nn::flops(start);
  state.reference_flops = cfg.reference_flops ? cfg.reference_flops : state.best_flops;
  state.best_accuracy = accuracy(state.best, target.val);

  auto record = [&](int iteration, const ModelGraph& m, double acc, bool accepted) {
    IterationRecord r;
    r.iteration = iteration;
    r.flops = nn::flops(m);
    r.flops_reduction =
        1.0 - static_cast<double>(r.flops) / static_cast<double>(state.reference_flops);
    r.val_accuracy = acc;
    r.accepted = accepted;
    r.filters_per_layer = m.filter_counts();
    r.seconds = seconds_since(clock_start);
    state.history.push_back(r);
    if (observer) observer(r, m);
  };
  record(0, state.best, state.best_accuracy, true);

  TailorConfig step_cfg = cfg;
  step_cfg.reference_flops = state.reference_flops;
  for (int iteration = 1;; ++iteration) {
    state.iteration = iteration;
    const ImportanceVector scores = strategy.score(state.best, iteration);
    PrunePlan plan;
    try {
      plan = build_prune_plan(state.best, scores, step_cfg);
    } catch (const PruneBudgetError&) {
      state.stop_reason = StopReason::filter_guard;
      break;
    }
    if (strategy.on_prune) strategy.on_prune(plan, state.best);
    PruneResult pruned = apply_prune(state.best, scores, plan);

    TailorConfig iter_cfg = cfg;
    iter_cfg.seed = iteration_seed(cfg.seed, iteration, kFinetuneTag);
    ModelGraph candidate;
    if (strategy.importance_aware) {
      const ImportanceVector weights = guidance_importance(pruned.importance);
      candidate = nn::fold_importance(
          importance_finetune(pruned.model, weights, target.train, iter_cfg), weights);
    } else {
      candidate = pruned.model;
      train_model(candidate, target.train, TrainScope::all,
                  iter_cfg.train_options(cfg.finetune_epochs, iter_cfg.seed));
    }
    const double acc = accuracy(candidate, target.val);
    const bool stop = should_stop(state.best_accuracy, acc, cfg.tau);
    record(iteration, candidate, acc, !stop);
    if (stop) {
      state.stop_reason = StopReason::accuracy_drop;
      break;
    }
    state.best = std::move(candidate);
    state.best_accuracy = acc;
    state.best_flops = nn::flops(state.best);
    if (cfg.max_iterations > 0 && iteration >= cfg.max_iterations) {
      state.stop_reason = StopReason::max_iterations;
      break;
    }
  }
  return state;
}

PruneStrategy target_aware_strategy(const data::Dataset& importance_data, const TailorConfig& cfg) {
  PruneStrategy s;
  s.method = "transtailor";
  s.importance_aware = true;
  const data::Dataset* data = &importance_data;
  s.score = [data, cfg](const ModelGraph& current, int iteration) {
    // Pruning invalidates the previous factors, so each iteration starts fresh.
    TailorConfig iter_cfg = cfg;
    iter_cfg.seed = iteration_seed(cfg.seed, iteration, kFactorTrainTag);
    const ScalingFactors alpha0 =
        init_factors(current, iteration_seed(cfg.seed, iteration, kFactorInitTag));
    const ScalingFactors alpha = train_factors(current, alpha0, *data, iter_cfg);
    return taylor_importance(current, alpha, *data, cfg.batch_size);
  };
  return s;
}

ModelGraph finetune_head(const ModelGraph& pretrained, const data::TargetSplit& target,
                         const TailorConfig& cfg) {
  const auto head_seed = Rng::derive(cfg.seed, kHeadTag).next_u64();
  ModelGraph model = nn::replace_head(pretrained, target.train.class_count, head_seed);
  train_model(model, target.train, TrainScope::head, cfg.train_options(cfg.head_epochs, head_seed));
  return model;
}

SearchResult search_optimal(const ModelGraph& pretrained, const SourceMeta& /*source*/,
                            const data::TargetSplit& target, const TailorConfig& cfg,
                            const IterationObserver& observer) {
  cfg.validate();
  const ModelGraph start = finetune_head(pretrained, target, cfg);
  TailorConfig search_cfg = cfg;
  if (!search_cfg.reference_flops) search_cfg.reference_flops = nn::flops(start);
  SearchState state =
      run_prune_search(start, target, search_cfg, target_aware_strategy(target.train, search_cfg),
                       observer);
  ModelGraph best = state.best;
  return {std::move(best), std::move(state)};
}

}  // namespace transtailor::tailor
