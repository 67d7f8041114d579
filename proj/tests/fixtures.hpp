#pragma once

#include <algorithm>
#include <cmath>

#include "transtailor/data/dataset.hpp"
#include "transtailor/data/synthetic.hpp"
#include "transtailor/nn/model.hpp"
#include "transtailor/rng.hpp"
#include "transtailor/train.hpp"
#include "transtailor/verify.hpp"

namespace fixtures {

using namespace transtailor;

inline Tensor random_batch(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

// conv(f1)-relu-pool-conv(f2)-relu-gap-linear on 3x8x8 inputs.
inline nn::ModelGraph small_model(std::uint64_t seed, int f1 = 4, int f2 = 4, int classes = 2) {
  using nn::LayerSpec;
  return nn::build_model({3, 8, 8},
                         {LayerSpec::conv(f1, 3), LayerSpec::relu(), LayerSpec::maxpool(),
                          LayerSpec::conv(f2, 3), LayerSpec::relu(), LayerSpec::global_avg_pool(),
                          LayerSpec::linear(classes)},
                         seed);
}

// Normalized two-class stripe images.
inline data::Dataset stripes(int per_class, std::uint64_t seed) {
  return data::normalize(
             data::generate_patterns(verify::toy_stripe_task(), {8, per_class, 0.4f, seed}))
      .dataset;
}

inline data::TargetSplit stripe_split(int per_class_train, std::uint64_t seed) {
  return data::sample_target(stripes(per_class_train * 2, seed), {per_class_train, 0.3, seed});
}

// A small model trained for a few epochs on the stripe task.
inline nn::ModelGraph trained_small_model(const data::Dataset& train, std::uint64_t seed,
                                          int f1 = 4, int f2 = 4, int epochs = 15) {
  auto m = small_model(seed, f1, f2);
  TrainOptions o;
  o.epochs = epochs;
  o.lr_conv = 0.05f;
  o.lr_head = 0.05f;
  o.weight_decay = 0.0f;
  o.seed = seed;
  train_model(m, train, TrainScope::all, o);
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    worst = std::max(worst, double(std::abs(a.data()[i] - b.data()[i])));
  }
  return worst;
}

}  // namespace fixtures
