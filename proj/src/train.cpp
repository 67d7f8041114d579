#include "transtailor/train.hpp"

#include "transtailor/ops.hpp"

namespace transtailor {

namespace {
constexpr int kEvalBatch = 256;

Tensor logits_for(const nn::ModelGraph& model, const Tensor& images,
                  const nn::FilterVectors* factors) {
  return factors ? nn::forward(model, images, *factors) : nn::forward(model, images);
}
}  // namespace

std::vector<float> fit(Sgd& optimizer, const LogitsFn& logits_fn, const data::Dataset& data,
                       int epochs, int batch_size, int crop_pad, std::uint64_t seed) {
  std::vector<float> losses;
  data::BatchIterator batches(data, batch_size, true, seed);
  Rng augment = Rng::derive(seed, 0xa06u);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    batches.start_epoch(epoch);
    double total = 0.0;
    std::int64_t seen = 0;
    while (auto batch = batches.next()) {
      Tensor images = crop_pad > 0 ? data::random_crop_pad(batch->images, crop_pad, augment)
                                   : batch->images;
      optimizer.zero_grad();
      Tensor loss = ops::softmax_cross_entropy(logits_fn(images), batch->labels);
      loss.backward();
      optimizer.step();
      total += static_cast<double>(loss.item()) * static_cast<double>(batch->labels.size());
      seen += static_cast<std::int64_t>(batch->labels.size());
    }
    losses.push_back(static_cast<float>(total / static_cast<double>(seen)));
  }
  return losses;
}

std::vector<float> train_model(nn::ModelGraph& model, const data::Dataset& data, TrainScope scope,
                               const TrainOptions& options,
                               const nn::FilterVectors* frozen_factors) {
  if (frozen_factors && frozen_factors->trainable()) {
    throw ContractError("train_model: factors must be frozen while training weights");
  }
  if (options.epochs <= 0) return {};
  model.set_trainable(false);
  Sgd sgd;
  const SgdOptions head{options.lr_head, options.momentum, options.weight_decay};
  const SgdOptions conv{options.lr_conv, options.momentum, options.weight_decay};
  model.set_head_trainable(true);
  sgd.add_group(model.head_parameters(), head);
  if (scope == TrainScope::all) {
    model.set_conv_trainable(true);
    sgd.add_group(model.conv_parameters(), conv);
  }
  std::vector<float> losses;
  try {
    losses = fit(
        sgd,
        [&](const Tensor& images) { return logits_for(model, images, frozen_factors); }, data,
        options.epochs, options.batch_size, options.crop_pad, options.seed);
  } catch (...) {
    model.set_trainable(false);
    throw;
  }
  model.set_trainable(false);
  return losses;
}

float accuracy(const nn::ModelGraph& model, const data::Dataset& data,
               const nn::FilterVectors* factors) {
  NoGradGuard no_grad;
  data::BatchIterator batches(data, kEvalBatch, false, 0);
  std::int64_t correct = 0;
  while (auto batch = batches.next()) {
    Tensor logits = logits_for(model, batch->images, factors);
    const auto k = logits.dim(1);
    auto z = logits.data();
    for (std::size_t i = 0; i < batch->labels.size(); ++i) {
      std::int64_t best = 0;
      for (std::int64_t j = 1; j < k; ++j) {
        if (z[i * k + j] > z[i * k + best]) best = j;
      }
      if (best == batch->labels[i]) ++correct;
    }
  }
  return 100.0f * static_cast<float>(correct) / static_cast<float>(data.size());
}

double mean_loss(const nn::ModelGraph& model, const data::Dataset& data,
                 const nn::FilterVectors* factors) {
  NoGradGuard no_grad;
  data::BatchIterator batches(data, kEvalBatch, false, 0);
  double total = 0.0;
  while (auto batch = batches.next()) {
    Tensor loss = ops::softmax_cross_entropy(logits_for(model, batch->images, factors),
                                             batch->labels);
    total += static_cast<double>(loss.item()) * static_cast<double>(batch->labels.size());
  }
  return total / static_cast<double>(data.size());
}

}  // namespace transtailor
