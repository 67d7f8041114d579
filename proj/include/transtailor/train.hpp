#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "transtailor/data/dataset.hpp"
#include "transtailor/nn/model.hpp"
#include "transtailor/optim.hpp"

namespace transtailor {

struct TrainOptions {
  int epochs = 20;
  int batch_size = 32;
  float lr_conv = 0.0005f;
  float lr_head = 0.005f;
  float momentum = 0.9f;
  float weight_decay = 0.005f;
  int crop_pad = 0;  // pad-then-crop augmentation; 0 disables
  std::uint64_t seed = 0;
};

enum class TrainScope { head, all };

using LogitsFn = std::function<Tensor(const Tensor& images)>;

// Runs `epochs` passes of minibatch SGD on the mean cross-entropy of
// logits_fn. Returns the mean training loss of each epoch.
std::vector<float> fit(Sgd& optimizer, const LogitsFn& logits_fn, const data::Dataset& data,
                       int epochs, int batch_size, int crop_pad, std::uint64_t seed);

// Trains the head (scope=head) or every parameter with two-tier learning
// rates (scope=all) in place. Optional frozen factors scale conv outputs.
// Parameters are left non-trainable on return.
std::vector<float> train_model(nn::ModelGraph& model, const data::Dataset& data, TrainScope scope,
                               const TrainOptions& options,
                               const nn::FilterVectors* frozen_factors = nullptr);

// Top-1 accuracy in percent.
float accuracy(const nn::ModelGraph& model, const data::Dataset& data,
               const nn::FilterVectors* factors = nullptr);

// Mean cross-entropy over the whole dataset.
double mean_loss(const nn::ModelGraph& model, const data::Dataset& data,
                 const nn::FilterVectors* factors = nullptr);

}  // namespace transtailor
