#pragma once

#include <vector>

#include "transtailor/tensor.hpp"

namespace transtailor {

struct SgdOptions {
  float learning_rate = 0.005f;
  float momentum = 0.9f;
  float weight_decay = 0.005f;
};

// Momentum buffer and hyperparameters of one parameter.
struct OptimizerState {
  Tensor param;
  std::vector<float> velocity;
  SgdOptions options;
};

// SGD with heavy-ball momentum and L2 weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
class Sgd {
 public:
  Sgd() = default;

  // Registers params sharing one set of hyperparameters.
  void add_group(const std::vector<Tensor>& params, SgdOptions options);

  // Requires a populated grad on every registered parameter.
  void step();
  void zero_grad();
  // Multiplies every group's learning rate, e.g. for step decay.
  void scale_learning_rate(float factor);

  const std::vector<OptimizerState>& states() const { return states_; }

 private:
  std::vector<OptimizerState> states_;
};

}  // namespace transtailor
