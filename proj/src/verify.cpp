#include "transtailor/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "transtailor/nn/model.hpp"
#include "transtailor/ops.hpp"
#include "transtailor/oracle.hpp"
#include "transtailor/rng.hpp"
#include "transtailor/tailor/tailor.hpp"
#include "transtailor/train.hpp"

namespace transtailor::verify {

namespace {

constexpr double kRelFloor = 1e-2;
constexpr int kCoordsPerInput = 12;

using OpFn = std::function<Tensor(const std::vector<Tensor>&)>;

Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape), 0.0f, true);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero by more than the finite-difference step.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape), 0.0f, true);
  for (auto& v : t.data()) {
    const float mag = rng.uniform(0.05f, 1.0f);
    v = rng.uniform() < 0.5f ? -mag : mag;
  }
  return t;
}

// Distinct values spaced 0.05 apart in random order, so no pooling window
// has a near-tie.
Tensor distinct_values(Shape shape, Rng& rng) {
  Tensor t(std::move(shape), 0.0f, true);
  auto v = t.data();
  std::vector<int> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05f * static_cast<float>(order[i]) - 1.0f;
  return t;
}

double weighted_sum(const Tensor& out, const std::vector<float>& weights) {
  double s = 0.0;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) s += static_cast<double>(d[i]) * weights[i];
  return s;
}

// One trial: analytic gradient of sum(f(x) * w) against finite differences
// on a random subset of coordinates of every input.
double check_once(const OpFn& f, std::vector<Tensor> inputs, double step, Rng& rng) {
  for (auto& t : inputs) t.zero_grad();
  const Tensor probe = [&] {
    NoGradGuard no_grad;
    return f(inputs);
  }();
  std::vector<float> w(static_cast<std::size_t>(probe.numel()));
  for (auto& x : w) x = rng.uniform(-1.0f, 1.0f);
  Tensor wt(probe.shape(), w);
  ops::sum(ops::mul(f(inputs), wt)).backward();

  double worst = 0.0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const std::vector<float> analytic(t.grad().begin(), t.grad().end());
    auto values = t.data();
    const auto n = values.size();
    for (int c = 0; c < kCoordsPerInput && c < static_cast<int>(n); ++c) {
      const auto i = n <= kCoordsPerInput ? static_cast<std::size_t>(c) : rng.below(n);
      const float kept = values[i];
      NoGradGuard no_grad;
      auto at = [&](double offset) {
        values[i] = static_cast<float>(kept + offset);
        return weighted_sum(f(inputs), w);
      };
      // Five-point stencil: truncation error is fourth order in the step.
      const double numeric =
          (8.0 * (at(step) - at(-step)) - (at(2.0 * step) - at(-2.0 * step))) / (12.0 * step);
      values[i] = kept;
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kRelFloor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

struct OpCase {
  std::string name;
  // Finite-difference step. Kinked ops keep 2 * step inside their margin
  // (0.05); the rest take a larger step to keep float32 rounding small.
  double step;
  // Draws inputs and the op closure for one trial.
  std::function<std::pair<OpFn, std::vector<Tensor>>(Rng&)> make;
};

std::int64_t draw(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  cases.push_back({"conv2d", 0.1, [](Rng& rng) {
                     const auto n = draw(rng, 1, 2), cin = draw(rng, 1, 3), cout = draw(rng, 1, 3);
                     const int k = rng.below(2) ? 3 : 1;
                     const int stride = static_cast<int>(draw(rng, 1, 2));
                     const int pad = k == 3 ? static_cast<int>(draw(rng, 0, 1)) : 0;
                     const auto h = k - 2 * pad + stride * draw(rng, 1, 3);
                     const auto w = k - 2 * pad + stride * draw(rng, 1, 3);
                     std::vector<Tensor> in{random_tensor({n, cin, h, w}, rng),
                                            random_tensor({cout, cin, k, k}, rng),
                                            random_tensor({cout}, rng)};
                     OpFn f = [stride, pad](const std::vector<Tensor>& x) {
                       return ops::conv2d(x[0], x[1], x[2], stride, pad);
                     };
                     return std::pair{f, in};
                   }});
  cases.push_back({"relu", 0.02, [](Rng& rng) {
                     std::vector<Tensor> in{away_from_zero({draw(rng, 1, 3), draw(rng, 1, 8)}, rng)};
                     OpFn f = [](const std::vector<Tensor>& x) { return ops::relu(x[0]); };
                     return std::pair{f, in};
                   }});
  cases.push_back({"max_pool2d", 0.02, [](Rng& rng) {
                     const int k = static_cast<int>(draw(rng, 1, 2));
                     const int s = static_cast<int>(draw(rng, 1, 2));
                     std::vector<Tensor> in{distinct_values(
                         {draw(rng, 1, 2), draw(rng, 1, 2), draw(rng, 2, 5), draw(rng, 2, 5)}, rng)};
                     OpFn f = [k, s](const std::vector<Tensor>& x) {
                       return ops::max_pool2d(x[0], k, s);
                     };
                     return std::pair{f, in};
                   }});
  cases.push_back({"global_avg_pool", 0.1, [](Rng& rng) {
                     std::vector<Tensor> in{random_tensor(
                         {draw(rng, 1, 2), draw(rng, 1, 3), draw(rng, 1, 4), draw(rng, 1, 4)}, rng)};
                     OpFn f = [](const std::vector<Tensor>& x) { return ops::global_avg_pool(x[0]); };
                     return std::pair{f, in};
                   }});
  cases.push_back({"linear", 0.1, [](Rng& rng) {
                     const auto n = draw(rng, 1, 3), in_f = draw(rng, 1, 5), out_f = draw(rng, 1, 4);
                     std::vector<Tensor> in{random_tensor({n, in_f}, rng),
                                            random_tensor({out_f, in_f}, rng),
                                            random_tensor({out_f}, rng)};
                     OpFn f = [](const std::vector<Tensor>& x) { return ops::linear(x[0], x[1], x[2]); };
                     return std::pair{f, in};
                   }});
  cases.push_back({"softmax_cross_entropy", 0.05, [](Rng& rng) {
                     const auto n = draw(rng, 1, 4), k = draw(rng, 2, 5);
                     std::vector<int> labels(static_cast<std::size_t>(n));
                     for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
                     std::vector<Tensor> in{random_tensor({n, k}, rng, -2.0f, 2.0f)};
                     OpFn f = [labels](const std::vector<Tensor>& x) {
                       return ops::softmax_cross_entropy(x[0], labels);
                     };
                     return std::pair{f, in};
                   }});
  cases.push_back({"add", 0.1, [](Rng& rng) {
                     const Shape s{draw(rng, 1, 3), draw(rng, 1, 4)};
                     std::vector<Tensor> in{random_tensor(s, rng), random_tensor(s, rng)};
                     OpFn f = [](const std::vector<Tensor>& x) { return ops::add(x[0], x[1]); };
                     return std::pair{f, in};
                   }});
  cases.push_back({"mul", 0.1, [](Rng& rng) {
                     const Shape s{draw(rng, 1, 3), draw(rng, 1, 4)};
                     std::vector<Tensor> in{random_tensor(s, rng), random_tensor(s, rng)};
                     OpFn f = [](const std::vector<Tensor>& x) { return ops::mul(x[0], x[1]); };
                     return std::pair{f, in};
                   }});
  cases.push_back({"channel_scale", 0.1, [](Rng& rng) {
                     const auto c = draw(rng, 1, 4);
                     std::vector<Tensor> in{
                         random_tensor({draw(rng, 1, 2), c, draw(rng, 1, 3), draw(rng, 1, 3)}, rng),
                         random_tensor({c}, rng)};
                     OpFn f = [](const std::vector<Tensor>& x) { return ops::channel_scale(x[0], x[1]); };
                     return std::pair{f, in};
                   }});
  cases.push_back({"sum", 0.1, [](Rng& rng) {
                     std::vector<Tensor> in{random_tensor({draw(rng, 1, 3), draw(rng, 1, 5)}, rng)};
                     OpFn f = [](const std::vector<Tensor>& x) { return ops::sum(x[0]); };
                     return std::pair{f, in};
                   }});
  cases.push_back({"scale", 0.1, [](Rng& rng) {
                     const float c = rng.uniform(-2.0f, 2.0f);
                     std::vector<Tensor> in{random_tensor({draw(rng, 1, 3), draw(rng, 1, 5)}, rng)};
                     OpFn f = [c](const std::vector<Tensor>& x) { return ops::scale(x[0], c); };
                     return std::pair{f, in};
                   }});
  // Chain rule through a factor-scaled model; smooth layers only so the
  // finite differences never straddle a kink.
  cases.push_back({"model", 0.05, [](Rng& rng) {
                     const std::vector<nn::LayerSpec> specs{
                         nn::LayerSpec::conv(static_cast<int>(draw(rng, 1, 3)), 3),
                         nn::LayerSpec::conv(static_cast<int>(draw(rng, 1, 3)), 3),
                         nn::LayerSpec::global_avg_pool(), nn::LayerSpec::linear(3)};
                     auto model = std::make_shared<nn::ModelGraph>(
                         nn::build_model({2, 4, 4}, specs, rng.next_u64()));
                     model->set_trainable(true);
                     auto factors = std::make_shared<nn::ScalingFactors>(
                         nn::ScalingFactors::filled(*model, 1.0f, true));
                     for (auto& l : factors->layers) {
                       for (auto& v : l.data()) v = rng.uniform(0.5f, 1.5f);
                     }
                     std::vector<Tensor> in{random_tensor({2, 2, 4, 4}, rng)};
                     for (const auto& p : model->parameters()) in.push_back(p);
                     for (const auto& l : factors->layers) in.push_back(l);
                     std::vector<int> labels{0, 2};
                     OpFn f = [model, factors, labels](const std::vector<Tensor>& x) {
                       return ops::softmax_cross_entropy(nn::forward(*model, x[0], *factors), labels);
                     };
                     return std::pair{f, in};
                   }});
  return cases;
}

struct RandomModel {
  nn::ModelGraph model;
  Tensor batch;
};

RandomModel random_model(Rng& rng) {
  std::vector<nn::LayerSpec> specs;
  const int convs = static_cast<int>(draw(rng, 2, 3));
  for (int c = 0; c < convs; ++c) {
    specs.push_back(nn::LayerSpec::conv(static_cast<int>(draw(rng, 2, 6)), rng.below(2) ? 3 : 1));
    if (rng.below(4)) specs.push_back(nn::LayerSpec::relu());
    if (c == 0 && rng.below(2)) specs.push_back(nn::LayerSpec::maxpool());
  }
  specs.push_back(nn::LayerSpec::global_avg_pool());
  specs.push_back(nn::LayerSpec::linear(static_cast<int>(draw(rng, 2, 4))));
  RandomModel out{nn::build_model({3, 8, 8}, specs, rng.next_u64()), Tensor({2, 3, 8, 8})};
  for (auto& v : out.batch.data()) v = rng.normal();
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(x[i]) - y[i]));
  }
  return worst;
}

}  // namespace

std::vector<GradCheck> gradient_checks(int trials_per_op, std::uint64_t seed) {
  std::vector<GradCheck> out;
  std::uint64_t tag = 0;
  for (const auto& c : op_cases()) {
    Rng rng = Rng::derive(seed, ++tag);
    GradCheck r{c.name, trials_per_op, 0, 0.0};
    for (int t = 0; t < trials_per_op; ++t) {
      auto [f, inputs] = c.make(rng);
      const double err = check_once(f, inputs, c.step, rng);
      if (!(err < kGradTolerance)) ++r.failed_trials;
      r.max_rel_error = std::max(r.max_rel_error, std::isfinite(err) ? err : INFINITY);
    }
    out.push_back(r);
  }
  return out;
}

Equivalence prune_equivalence(int trials, std::uint64_t seed) {
  Rng rng(seed);
  Equivalence out{trials, 0.0};
  NoGradGuard no_grad;
  for (int t = 0; t < trials; ++t) {
    auto [model, batch] = random_model(rng);
    auto mask = nn::ScalingFactors::filled(model, 1.0f, false);
    tailor::PrunePlan plan;
    const auto convs = model.conv_layers();
    for (std::size_t c = 0; c < convs.size(); ++c) {
      auto m = mask.layers[c].data();
      std::vector<int> order(m.size());
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      // Keep at least one filter per layer.
      const auto drop = rng.below(m.size());
      for (std::size_t i = 0; i < drop; ++i) {
        plan.filters.push_back({convs[c], order[i]});
        m[order[i]] = 0.0f;
      }
    }
    const auto pruned = tailor::apply_prune(model, nn::ImportanceVector::ones(model), plan);
    out.max_abs_diff = std::max(out.max_abs_diff, max_abs_diff(nn::forward(pruned.model, batch),
                                                               nn::forward(model, batch, mask)));
  }
  return out;
}

Equivalence fold_equivalence(int trials, std::uint64_t seed) {
  Rng rng(seed);
  Equivalence out{trials, 0.0};
  NoGradGuard no_grad;
  for (int t = 0; t < trials; ++t) {
    auto [model, batch] = random_model(rng);
    auto beta = nn::ImportanceVector::ones(model);
    for (auto& l : beta.layers) {
      for (auto& v : l.data()) v = rng.below(8) ? rng.uniform(0.0f, 3.0f) : 0.0f;
    }
    out.max_abs_diff =
        std::max(out.max_abs_diff, max_abs_diff(nn::forward(nn::fold_importance(model, beta), batch),
                                                nn::forward(model, batch, beta)));
  }
  return out;
}

data::PatternTask toy_stripe_task() {
  using data::PatternFamily;
  return {"toy-stripes",
          {{{{PatternFamily::horizontal_stripes, -1}}}, {{{PatternFamily::vertical_stripes, -1}}}},
          {PatternFamily::disc},
          1};
}

OracleCheck taylor_oracle_check(const std::vector<std::uint64_t>& seeds) {
  OracleCheck out;
  for (const auto seed : seeds) {
    const auto all = data::generate_patterns(toy_stripe_task(), {8, 150, 0.4f, seed});
    const auto split = data::sample_target(data::normalize(all).dataset, {100, 0.3, seed});
    const std::vector<nn::LayerSpec> specs{nn::LayerSpec::conv(4, 3), nn::LayerSpec::relu(),
                                           nn::LayerSpec::conv(4, 3), nn::LayerSpec::relu(),
                                           nn::LayerSpec::global_avg_pool(),
                                           nn::LayerSpec::linear(2)};
    auto model = nn::build_model({3, 8, 8}, specs, seed + 100);
    TrainOptions opts;
    opts.epochs = 40;
    opts.lr_conv = opts.lr_head = 0.05f;
    opts.weight_decay = 0.0f;
    opts.seed = seed;
    train_model(model, split.train, TrainScope::all, opts);

    tailor::TailorConfig cfg;
    cfg.seed = seed;
    cfg.factor_epochs = 20;
    cfg.lr_factor = 0.05f;
    const auto alpha =
        tailor::train_factors(model, tailor::init_factors(model, seed), split.train, cfg);
    const auto beta = tailor::taylor_importance(model, alpha, split.train);
    const auto loo = oracle::loo_importance(model, split.train, &alpha);
    const auto flat = beta.flatten();
    const std::vector<double> b(flat.begin(), flat.end());
    out.rho.push_back(oracle::rank_correlation(b, loo));
  }
  if (!out.rho.empty()) {
    out.mean = std::accumulate(out.rho.begin(), out.rho.end(), 0.0) /
               static_cast<double>(out.rho.size());
  }
  return out;
}

}  // namespace transtailor::verify
