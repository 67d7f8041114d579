#include "transtailor/optim.hpp"

namespace transtailor {

void Sgd::add_group(const std::vector<Tensor>& params, SgdOptions options) {
  if (!(options.learning_rate > 0.0f)) throw ContractError("sgd: learning rate must be positive");
  if (options.momentum < 0.0f || options.momentum >= 1.0f) {
    throw ContractError("sgd: momentum must lie in [0,1)");
  }
  if (options.weight_decay < 0.0f) throw ContractError("sgd: weight decay must be non-negative");
  for (const auto& p : params) {
    states_.push_back({p, std::vector<float>(static_cast<std::size_t>(p.numel()), 0.0f), options});
  }
}

void Sgd::step() {
  for (auto& s : states_) {
    if (!s.param.has_grad()) {
      throw ContractError("sgd: parameter of shape " + shape_str(s.param.shape()) +
                          " has no gradient");
    }
  }
  for (auto& s : states_) {
    auto p = s.param.data();
    auto g = s.param.grad();
    const auto& o = s.options;
    for (std::size_t i = 0; i < p.size(); ++i) {
      s.velocity[i] = o.momentum * s.velocity[i] + g[i] + o.weight_decay * p[i];
      p[i] -= o.learning_rate * s.velocity[i];
    }
  }
}

void Sgd::zero_grad() {
  for (auto& s : states_) s.param.zero_grad();
}

void Sgd::scale_learning_rate(float factor) {
  for (auto& s : states_) s.options.learning_rate *= factor;
}

}  // namespace transtailor
