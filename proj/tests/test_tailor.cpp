#include <doctest.h>

#include <numeric>

#include "fixtures.hpp"
#include "transtailor/ops.hpp"
#include "transtailor/tailor/tailor.hpp"

using namespace transtailor;
using namespace transtailor::tailor;
using fixtures::small_model;

namespace {

TailorConfig quick_config() {
  TailorConfig cfg;
  cfg.factor_epochs = 3;
  cfg.finetune_epochs = 2;
  cfg.head_epochs = 2;
  cfg.lr_factor = 0.05f;
  cfg.lr_conv = 0.005f;
  cfg.lr_head = 0.05f;
  cfg.batch_size = 16;
  return cfg;
}

ImportanceVector scores_from(std::vector<std::vector<float>> v) {
  return ImportanceVector::from_values(v);
}

std::vector<float> flat(const nn::FilterVectors& f) { return f.flatten(); }

}  // namespace

TEST_CASE("init_factors covers every filter within range") {
  const auto m = nn::vgg_mini({3, 16, 16}, 10, 1);
  const auto f = init_factors(m, 5);
  CHECK(f.total() == 352);
  CHECK(f.trainable());
  CHECK(flat(f) == flat(init_factors(m, 5)));
  CHECK(flat(f) != flat(init_factors(m, 6)));

  double sum = 0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; count < 10000; ++seed) {
    for (float v : flat(init_factors(m, seed))) {
      CHECK(v >= 0.75f);
      CHECK(v <= 1.25f);
      sum += v;
      ++count;
    }
  }
  const double mean = sum / static_cast<double>(count);
  CHECK(mean >= 0.99);
  CHECK(mean <= 1.01);
}

TEST_CASE("train_factors leaves weights untouched") {
  const auto data = fixtures::stripes(20, 1);
  const auto m = small_model(2);
  auto cfg = quick_config();
  const auto alpha0 = init_factors(m, 3);

  cfg.factor_epochs = 0;
  CHECK(flat(train_factors(m, alpha0, data, cfg)) == flat(alpha0));

  cfg.factor_epochs = 3;
  const auto before = nn::checksum(m);
  const auto alpha = train_factors(m, alpha0, data, cfg);
  CHECK(nn::checksum(m) == before);
  CHECK(flat(alpha) != flat(alpha0));
  CHECK(mean_loss(m, data, &alpha) <= mean_loss(m, data, &alpha0));

  auto trainable = m;
  trainable.set_trainable(true);
  CHECK_THROWS_AS(train_factors(trainable, alpha0, data, cfg), ContractError);
}

TEST_CASE("taylor importance matches central differences of the loss") {
  const auto data = fixtures::stripes(16, 4);
  const auto m = fixtures::trained_small_model(data, 5, 4, 4, 5);
  const auto alpha = init_factors(m, 6);
  // One batch covering the data, so the importance loss is the full mean loss.
  const auto beta = taylor_importance(m, alpha, data, static_cast<int>(data.size()));
  const double h = 1e-2;
  for (std::size_t c = 0; c < alpha.layers.size(); ++c) {
    for (std::int64_t j = 0; j < alpha.layers[c].numel(); ++j) {
      auto plus = ScalingFactors::filled(m, 1.0f, false);
      auto minus = ScalingFactors::filled(m, 1.0f, false);
      for (std::size_t l = 0; l < alpha.layers.size(); ++l) {
        std::copy(alpha.layers[l].data().begin(), alpha.layers[l].data().end(), plus.layers[l].data().begin());
        std::copy(alpha.layers[l].data().begin(), alpha.layers[l].data().end(), minus.layers[l].data().begin());
      }
      plus.layers[c].data()[j] += static_cast<float>(h);
      minus.layers[c].data()[j] -= static_cast<float>(h);
      const double grad = (mean_loss(m, data, &plus) - mean_loss(m, data, &minus)) / (2 * h);
      // Compared as |dL/dalpha| with the floor used by the op gradient checks.
      const double a = std::abs(alpha.layers[c].data()[j]);
      const double numeric = std::abs(grad);
      const double analytic = beta.layers[c].data()[j] / a;
      INFO("layer " << c << " filter " << j << " analytic " << analytic << " numeric " << numeric);
      CHECK(std::abs(analytic - numeric) / std::max({analytic, numeric, 1e-2}) < 1e-2);
    }
  }
}

TEST_CASE("zero factor gives zero importance") {
  const auto data = fixtures::stripes(10, 7);
  const auto m = small_model(8);
  auto alpha = init_factors(m, 9);
  alpha.layers[1].data()[2] = 0.0f;
  const auto beta = taylor_importance(m, alpha, data);
  CHECK(beta.layers[1].data()[2] == 0.0f);
  for (float v : flat(beta)) CHECK(v >= 0.0f);
}

TEST_CASE("loss scale does not change the ranking") {
  const auto data = fixtures::stripes(20, 10);
  const auto m = fixtures::trained_small_model(data, 11, 6, 8, 5);
  const auto alpha = init_factors(m, 12);
  auto cfg = quick_config();
  cfg.budget_mode = BudgetMode::filter_count;
  cfg.filters_per_iteration = 6;
  const auto base = build_prune_plan(m, taylor_importance(m, alpha, data, 16, 1.0f), cfg);
  for (float s : {0.01f, 7.0f, 1000.0f}) {
    const auto scaled = build_prune_plan(m, taylor_importance(m, alpha, data, 16, s), cfg);
    CHECK(scaled.filters == base.filters);
  }
}

TEST_CASE("a planted noise filter ranks in the bottom tenth") {
  const auto data = fixtures::stripes(30, 13);
  auto m = fixtures::trained_small_model(data, 14, 8, 12, 15);
  // Give filter 5 of the second conv random weights and almost no say in the head.
  Rng rng(15);
  auto& conv = m.layers()[3];
  const auto per = conv.weight.numel() / conv.weight.dim(0);
  for (std::int64_t j = 0; j < per; ++j) conv.weight.data()[5 * per + j] = 0.3f * rng.normal();
  auto& head = m.layers().back().weight;
  for (std::int64_t r = 0; r < head.dim(0); ++r) head.data()[r * head.dim(1) + 5] = 1e-4f * rng.normal();

  auto cfg = quick_config();
  cfg.factor_epochs = 5;
  const auto alpha = train_factors(m, init_factors(m, 16), data, cfg);
  const auto beta = taylor_importance(m, alpha, data);
  const float planted = beta.layers[1].data()[5];
  const auto all = flat(beta);
  const auto below = std::count_if(all.begin(), all.end(), [&](float v) { return v < planted; });
  CHECK(below < static_cast<long>(all.size() / 10));
}

TEST_CASE("prune plan order and tie breaks") {
  const auto m = small_model(17, 3, 3);
  auto cfg = quick_config();
  cfg.budget_mode = BudgetMode::filter_count;
  cfg.filters_per_iteration = 3;
  const auto convs = m.conv_layers();
  const auto plan = build_prune_plan(m, scores_from({{0.5f, 0.1f, 0.1f}, {0.1f, 0.9f, 0.05f}}), cfg);
  REQUIRE(plan.filters.size() == 3);
  CHECK(plan.filters[0] == FilterId{convs[1], 2});
  CHECK(plan.filters[1] == FilterId{convs[0], 1});
  CHECK(plan.filters[2] == FilterId{convs[0], 2});
  CHECK(plan.predicted_flops == nn::flops_with_filters(m, {1, 2}));

  // Equal scores everywhere fall back to (layer, filter) order.
  cfg.filters_per_iteration = 2;
  const auto tied = build_prune_plan(m, scores_from({{1, 1, 1}, {1, 1, 1}}), cfg);
  CHECK(tied.filters == std::vector<FilterId>{{convs[0], 0}, {convs[0], 1}});
}

TEST_CASE("flops budget is met by the smallest prefix") {
  const auto m = small_model(18, 8, 8);
  Rng rng(19);
  std::vector<std::vector<float>> v(2, std::vector<float>(8));
  for (auto& l : v)
    for (auto& x : l) x = rng.uniform(0.0f, 1.0f);
  auto cfg = quick_config();
  cfg.budget_fraction = 0.10;
  const auto reference = nn::flops(m);
  const auto plan = build_prune_plan(m, scores_from(v), cfg);
  const double removed = static_cast<double>(reference - plan.predicted_flops);
  CHECK(removed >= 0.10 * reference);
  // Dropping the last planned filter would miss the budget.
  auto counts = m.filter_counts();
  for (std::size_t i = 0; i + 1 < plan.filters.size(); ++i) {
    --counts[plan.filters[i].layer_index == m.conv_layers()[0] ? 0 : 1];
  }
  CHECK(static_cast<double>(reference - nn::flops_with_filters(m, counts)) < 0.10 * reference);
}

TEST_CASE("min-filter guard") {
  const auto m = small_model(20, 2, 2);
  auto cfg = quick_config();
  cfg.budget_mode = BudgetMode::filter_count;
  cfg.filters_per_iteration = 2;
  const auto plan = build_prune_plan(m, scores_from({{0, 0}, {1, 1}}), cfg);
  // Only one filter per layer may go.
  CHECK(plan.filters == std::vector<FilterId>{{m.conv_layers()[0], 0}, {m.conv_layers()[1], 0}});
  cfg.filters_per_iteration = 3;
  CHECK_THROWS_AS(build_prune_plan(m, scores_from({{0, 0}, {1, 1}}), cfg), PruneBudgetError);
  cfg.min_filters_per_layer = 2;
  cfg.filters_per_iteration = 1;
  CHECK_THROWS_WITH_AS(build_prune_plan(m, scores_from({{0, 0}, {1, 1}}), cfg),
                       doctest::Contains("[2,2]"), PruneBudgetError);
}

TEST_CASE("apply_prune") {
  const auto m = small_model(21, 5, 6);
  const auto ones = ImportanceVector::ones(m);
  const auto convs = m.conv_layers();

  SUBCASE("empty plan is the identity") {
    const auto r = apply_prune(m, ones, {});
    CHECK(nn::checksum(r.model) == nn::checksum(m));
  }
  SUBCASE("removing a filter shrinks the next layer's inputs") {
    auto imp = scores_from({{1, 2, 3, 4, 5}, {6, 7, 8, 9, 10, 11}});
    const auto r = apply_prune(m, imp, {{{convs[0], 1}, {convs[1], 4}}, 0});
    CHECK(r.model.filter_counts() == std::vector<int>{4, 5});
    CHECK(r.model.layers()[convs[1]].weight.dim(1) == 4);
    CHECK(r.model.head().weight.dim(1) == 5);
    CHECK(flat(r.importance) == std::vector<float>{1, 3, 4, 5, 6, 7, 8, 9, 11});
  }
  SUBCASE("pruned forward equals the zero-factor mask") {
    const auto x = fixtures::random_batch({3, 3, 8, 8}, 22);
    auto mask = ScalingFactors::filled(m, 1.0f, false);
    mask.layers[0].data()[0] = 0.0f;
    mask.layers[1].data()[3] = 0.0f;
    const auto r = apply_prune(m, ones, {{{convs[0], 0}, {convs[1], 3}}, 0});
    CHECK(fixtures::max_abs_diff(nn::forward(r.model, x), nn::forward(m, x, mask)) < 1e-5);

    const auto eq = verify::prune_equivalence(50, 23);
    CHECK(eq.trials == 50);
    CHECK(eq.max_abs_diff < verify::kEquivalenceTolerance);
  }
  SUBCASE("dangling or duplicate ids are rejected") {
    CHECK_THROWS_AS(apply_prune(m, ones, {{{convs[0], 9}}, 0}), ContractError);
    CHECK_THROWS_AS(apply_prune(m, ones, {{{1, 0}}, 0}), ContractError);
    CHECK_THROWS_AS(apply_prune(m, ones, {{{convs[0], 0}, {convs[0], 0}}, 0}), ContractError);
  }
}

TEST_CASE("guidance importance") {
  const auto g = guidance_importance(scores_from({{1, 2, 3, 2}, {0, 0}, {100, 0, 0, 0, 0, 0, 0, 0}}));
  CHECK(g.layers[0].data()[0] == doctest::Approx(0.5));
  CHECK(g.layers[0].data()[2] == doctest::Approx(1.5));
  CHECK(flat(guidance_importance(scores_from({{0, 0}}))) == std::vector<float>{1, 1});
  CHECK(g.layers[2].data()[0] == kGuidanceMax);
  CHECK(g.layers[2].data()[1] == kGuidanceMin);
}

TEST_CASE("importance_finetune") {
  const auto split = fixtures::stripe_split(20, 24);
  const auto m = fixtures::trained_small_model(split.train, 25, 4, 4, 3);
  const auto beta = guidance_importance(scores_from({{0.2f, 1, 2, 0.8f}, {1, 1, 3, 0.5f}}));
  auto cfg = quick_config();

  SUBCASE("zero epochs starts from the original function") {
    cfg.finetune_epochs = 0;
    const auto tuned = importance_finetune(m, beta, split.train, cfg);
    const auto x = fixtures::random_batch({2, 3, 8, 8}, 26);
    CHECK(fixtures::max_abs_diff(nn::forward(tuned, x, beta), nn::forward(m, x)) < 1e-5);
    CHECK(fixtures::max_abs_diff(nn::forward(nn::fold_importance(tuned, beta), x),
                                 nn::forward(m, x)) < 1e-5);
  }
  SUBCASE("importance stays frozen and the loss drops") {
    cfg.finetune_epochs = 4;
    const auto before = nn::checksum(beta);
    const double loss0 = mean_loss(m, split.train);
    const auto tuned = importance_finetune(m, beta, split.train, cfg);
    CHECK(nn::checksum(beta) == before);
    CHECK(mean_loss(tuned, split.train, &beta) < loss0);
    CHECK_FALSE(tuned.any_trainable());
  }
  SUBCASE("bad importance is rejected") {
    auto zero = beta;
    zero.layers[0] = Tensor({4}, std::vector<float>{0, 1, 1, 1});
    CHECK_THROWS_AS(importance_finetune(m, zero, split.train, cfg), ContractError);
    auto negative = beta;
    negative.layers[0] = Tensor({4}, std::vector<float>{-1, 1, 1, 1});
    CHECK_THROWS_AS(importance_finetune(m, negative, split.train, cfg), ContractError);
    auto live = beta;
    live.layers[0] = Tensor({4}, 1.0f, true);
    CHECK_THROWS_AS(importance_finetune(m, live, split.train, cfg), ContractError);
  }
}

TEST_CASE("stop rule boundaries") {
  CHECK_FALSE(should_stop(50.0, 49.5, 0.5));
  CHECK(should_stop(50.0, 49.25, 0.5));
  CHECK_FALSE(should_stop(50.0, 55.0, 0.5));
  CHECK_FALSE(should_stop(50.0, 50.0, 0.0));
  CHECK(should_stop(50.0, 49.75, 0.0));
  CHECK_FALSE(should_stop(90.0, 0.0, TailorConfig::kNeverStop));
}

TEST_CASE("search mechanics with a fixed ranking") {
  const auto split = fixtures::stripe_split(15, 27);
  const auto start = fixtures::trained_small_model(split.train, 28, 4, 4, 5);
  auto cfg = quick_config();
  cfg.finetune_epochs = 1;
  cfg.budget_mode = BudgetMode::filter_count;
  cfg.filters_per_iteration = 1;

  PruneStrategy fixed;
  fixed.method = "fixed";
  fixed.importance_aware = false;
  fixed.score = [](const nn::ModelGraph& current, int) {
    ImportanceVector s = ImportanceVector::ones(current);
    for (auto& l : s.layers) std::iota(l.data().begin(), l.data().end(), 1.0f);
    return s;
  };

  SUBCASE("infinite tau runs until the filter guard") {
    cfg.tau = TailorConfig::kNeverStop;
    const auto state = run_prune_search(start, split, cfg, fixed);
    CHECK(state.stop_reason == StopReason::filter_guard);
    CHECK(state.best.filter_counts() == std::vector<int>{1, 1});
    // Six removable filters, one per iteration, then the guard fires.
    CHECK(state.history.size() == 7);
    CHECK(state.iteration == 7);
    for (const auto& r : state.history) CHECK(r.accepted);
    for (std::size_t i = 1; i < state.history.size(); ++i) {
      CHECK(state.history[i].flops < state.history[i - 1].flops);
    }
  }
  SUBCASE("zero tau stops at the first drop") {
    cfg.tau = 0.0;
    const auto state = run_prune_search(start, split, cfg, fixed);
    CHECK(static_cast<int>(state.history.size()) <= start.total_filters());
    for (std::size_t i = 1; i < state.history.size(); ++i) {
      const bool last = i + 1 == state.history.size();
      const double prev = state.history[i - 1].val_accuracy;
      if (!last || state.stop_reason != StopReason::accuracy_drop) {
        CHECK(state.history[i].accepted);
        CHECK(state.history[i].val_accuracy >= prev);
      } else {
        CHECK_FALSE(state.history[i].accepted);
        CHECK(state.history[i].val_accuracy < prev);
      }
    }
    if (state.stop_reason == StopReason::accuracy_drop) {
      CHECK(state.best.total_filters() == state.history[state.history.size() - 2].filters_per_layer[0] +
                                              state.history[state.history.size() - 2].filters_per_layer[1]);
    }
  }
  SUBCASE("max iterations") {
    cfg.tau = TailorConfig::kNeverStop;
    cfg.max_iterations = 2;
    const auto state = run_prune_search(start, split, cfg, fixed);
    CHECK(state.stop_reason == StopReason::max_iterations);
    CHECK(state.history.size() == 3);
    CHECK(state.best.total_filters() == 6);
  }
  SUBCASE("same seed, same history") {
    cfg.tau = TailorConfig::kNeverStop;
    cfg.max_iterations = 2;
    const auto a = run_prune_search(start, split, cfg, fixed);
    const auto b = run_prune_search(start, split, cfg, fixed);
    CHECK(nn::checksum(a.best) == nn::checksum(b.best));
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].val_accuracy == b.history[i].val_accuracy);
    }
  }
}

TEST_CASE("target-aware search is deterministic and terminates") {
  const auto split = fixtures::stripe_split(15, 29);
  const auto pretrained = fixtures::trained_small_model(split.train, 30, 4, 4, 5);
  auto cfg = quick_config();
  cfg.tau = TailorConfig::kNeverStop;
  cfg.budget_fraction = 0.2;
  cfg.factor_epochs = 1;
  cfg.finetune_epochs = 1;
  cfg.head_epochs = 1;
  const auto a = search_optimal(pretrained, {"stripes", 2}, split, cfg);
  const auto b = search_optimal(pretrained, {"stripes", 2}, split, cfg);
  CHECK(a.state.stop_reason == StopReason::filter_guard);
  CHECK(static_cast<int>(a.state.history.size()) <= pretrained.total_filters() + 1);
  CHECK(nn::checksum(a.model) == nn::checksum(b.model));
  CHECK(a.state.history.size() == b.state.history.size());
}

TEST_CASE("tailor config validation") {
  TailorConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.tau = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.budget_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.min_filters_per_layer = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.budget_mode = BudgetMode::filter_count;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
