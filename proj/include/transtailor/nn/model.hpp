#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "transtailor/tensor.hpp"

namespace transtailor::nn {

enum class LayerKind : std::uint8_t {
  conv = 1,
  relu = 2,
  maxpool = 3,
  global_avg_pool = 4,
  linear = 5,
};

std::string to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int out = 0;  // conv filters or linear outputs
  int kernel = 0;
  int stride = 1;
  int padding = 0;

  static LayerSpec conv(int filters, int kernel, int stride = 1, int padding = -1);
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec maxpool(int kernel = 2, int stride = 2) {
    return {LayerKind::maxpool, 0, kernel, stride, 0};
  }
  static LayerSpec global_avg_pool() { return {LayerKind::global_avg_pool}; }
  static LayerSpec linear(int out_features) { return {LayerKind::linear, out_features}; }

  bool has_params() const { return kind == LayerKind::conv || kind == LayerKind::linear; }
  bool operator==(const LayerSpec&) const = default;
};

struct Layer {
  LayerSpec spec;
  Tensor weight;  // conv [Cout,Cin,K,K]; linear [out,in]
  Tensor bias;
};

struct InputShape {
  int channels = 3;
  int height = 16;
  int width = 16;
  bool operator==(const InputShape&) const = default;
};

// Identifies filter `filter_index` of the conv layer at graph position
// `layer_index`.
struct FilterId {
  int layer_index = 0;
  int filter_index = 0;
  auto operator<=>(const FilterId&) const = default;
};

// Sequential CNN: conv/relu/maxpool blocks, one global average pool, and a
// single linear classifier head at the end.
//
// Copying a ModelGraph deep-copies its parameters.
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(InputShape input, std::vector<Layer> layers);

  ModelGraph(const ModelGraph& other);
  ModelGraph& operator=(const ModelGraph& other);
  ModelGraph(ModelGraph&&) noexcept = default;
  ModelGraph& operator=(ModelGraph&&) noexcept = default;

  const InputShape& input_shape() const { return input_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  int class_count() const;
  int head_index() const { return static_cast<int>(layers_.size()) - 1; }
  const Layer& head() const { return layers_.back(); }

  // Graph positions of conv layers, in order.
  std::vector<int> conv_layers() const;
  // Position of a conv layer among conv layers; throws if not a conv.
  int conv_ordinal(int layer_index) const;
  std::vector<int> filter_counts() const;
  int total_filters() const;

  // Throws ShapeError describing the first inconsistency found.
  void validate() const;

  std::vector<Tensor> parameters() const;
  std::vector<Tensor> conv_parameters() const;
  std::vector<Tensor> head_parameters() const;

  void set_trainable(bool flag) const;
  void set_conv_trainable(bool flag) const;
  void set_head_trainable(bool flag) const;
  bool any_trainable() const;

 private:
  InputShape input_;
  std::vector<Layer> layers_;
};

// Per-filter multipliers: one rank-1 tensor per conv layer, in conv order.
struct FilterVectors {
  std::vector<Tensor> layers;

  std::size_t layer_count() const { return layers.size(); }
  std::size_t total() const;
  bool trainable() const;
  std::vector<float> flatten() const;
};

// Trainable per-filter scaling factors attached to conv outputs.
struct ScalingFactors : FilterVectors {
  static ScalingFactors filled(const ModelGraph& model, float value, bool trainable);
};

// Non-negative per-filter importance; frozen during fine-tuning.
struct ImportanceVector : FilterVectors {
  static ImportanceVector ones(const ModelGraph& model);
  static ImportanceVector from_values(const std::vector<std::vector<float>>& values);
  // Throws ContractError if any entry is negative or non-finite.
  void check_non_negative() const;
};

// Throws ShapeError unless factors has one entry per filter of each conv.
void check_factors_match(const ModelGraph& model, const FilterVectors& factors);

// Plain forward pass; batch is [N,C,H,W] matching the model input.
Tensor forward(const ModelGraph& model, const Tensor& batch);
// Forward with conv output channel j of each layer multiplied by the layer's
// j-th factor immediately after the convolution, before the activation.
Tensor forward(const ModelGraph& model, const Tensor& batch, const FilterVectors& factors);

// Kaiming-uniform convs, fan-in uniform linear, zero conv biases.
ModelGraph build_model(InputShape input, const std::vector<LayerSpec>& specs,
                       std::uint64_t seed);

// conv32-relu-pool-conv64-relu-pool-conv128-relu-conv128-relu-gap-linear
std::vector<LayerSpec> vgg_mini_specs(int class_count);
ModelGraph vgg_mini(InputShape input, int class_count, std::uint64_t seed);

// Fresh fan-in-scaled uniform head with target_classes outputs; every other
// parameter is copied unchanged.
ModelGraph replace_head(const ModelGraph& model, int target_classes, std::uint64_t seed);

// Multiply-add count (2 per MAC) of conv and linear layers at the model's
// input shape.
std::uint64_t flops(const ModelGraph& model);
// FLOPs the model would have if its conv layers had the given filter counts.
std::uint64_t flops_with_filters(const ModelGraph& model, const std::vector<int>& filter_counts);

// Scales each conv filter's weights and bias by its importance entry.
// Throws ContractError on negative or non-finite entries.
ModelGraph fold_importance(const ModelGraph& model, const ImportanceVector& beta);

// Order-sensitive FNV-1a digest of every parameter bit pattern.
std::uint64_t checksum(const ModelGraph& model);
std::uint64_t checksum(const FilterVectors& factors);

}  // namespace transtailor::nn
