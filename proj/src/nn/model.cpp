#include "transtailor/nn/model.hpp"

#include <cmath>
#include <cstring>

#include "transtailor/ops.hpp"
#include "transtailor/rng.hpp"

namespace transtailor::nn {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::linear: return "linear";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv(int filters, int kernel, int stride, int padding) {
  return {LayerKind::conv, filters, kernel, stride, padding < 0 ? kernel / 2 : padding};
}

namespace {

Tensor clone_or_empty(const Tensor& t) { return t.defined() ? t.clone() : Tensor(); }

Tensor uniform_tensor(Shape shape, float bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

// Walks the chain tracking (channels, height, width); `visit` sees each
// parameterized layer with its input channel count and output spatial area.
template <typename Visit>
void walk(const ModelGraph& model, const std::vector<int>* filter_override, Visit visit) {
  const auto& in = model.input_shape();
  std::int64_t ch = in.channels, h = in.height, w = in.width;
  int conv_seen = 0;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const auto& spec = model.layers()[i].spec;
    switch (spec.kind) {
      case LayerKind::conv: {
        const int out = filter_override ? (*filter_override)[conv_seen] : spec.out;
        h = (h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
        w = (w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
        visit(static_cast<int>(i), spec, ch, static_cast<std::int64_t>(out), h * w);
        ch = out;
        ++conv_seen;
        break;
      }
      case LayerKind::maxpool:
        h = (h - spec.kernel) / spec.stride + 1;
        w = (w - spec.kernel) / spec.stride + 1;
        break;
      case LayerKind::global_avg_pool:
        h = w = 1;
        break;
      case LayerKind::linear:
        visit(static_cast<int>(i), spec, ch, static_cast<std::int64_t>(spec.out), 1);
        ch = spec.out;
        break;
      case LayerKind::relu:
        break;
    }
  }
}

void fnv(std::uint64_t& hash, std::span<const float> values) {
  for (float v : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 4; ++b) {
      hash ^= (bits >> (8 * b)) & 0xffu;
      hash *= 0x100000001b3ULL;
    }
  }
}

}  // namespace

ModelGraph::ModelGraph(InputShape input, std::vector<Layer> layers)
    : input_(input), layers_(std::move(layers)) {
  validate();
}

ModelGraph::ModelGraph(const ModelGraph& other) : input_(other.input_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) {
    layers_.push_back({l.spec, clone_or_empty(l.weight), clone_or_empty(l.bias)});
  }
}

ModelGraph& ModelGraph::operator=(const ModelGraph& other) {
  if (this != &other) *this = ModelGraph(other);
  return *this;
}

int ModelGraph::class_count() const {
  if (layers_.empty()) return 0;
  return layers_.back().spec.out;
}

std::vector<int> ModelGraph::conv_layers() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].spec.kind == LayerKind::conv) out.push_back(static_cast<int>(i));
  }
  return out;
}

int ModelGraph::conv_ordinal(int layer_index) const {
  if (layer_index < 0 || layer_index >= static_cast<int>(layers_.size()) ||
      layers_[layer_index].spec.kind != LayerKind::conv) {
    throw ContractError("layer " + std::to_string(layer_index) + " is not a conv layer");
  }
  int ordinal = 0;
  for (int i = 0; i < layer_index; ++i) {
    if (layers_[i].spec.kind == LayerKind::conv) ++ordinal;
  }
  return ordinal;
}

std::vector<int> ModelGraph::filter_counts() const {
  std::vector<int> out;
  for (int i : conv_layers()) out.push_back(layers_[i].spec.out);
  return out;
}

int ModelGraph::total_filters() const {
  int total = 0;
  for (int n : filter_counts()) total += n;
  return total;
}

void ModelGraph::validate() const {
  auto fail = [](std::size_t i, const std::string& msg) {
    throw ShapeError("layer " + std::to_string(i) + ": " + msg);
  };
  if (input_.channels < 1 || input_.height < 1 || input_.width < 1) {
    throw ShapeError("model input shape must be positive");
  }
  if (layers_.empty() || layers_.back().spec.kind != LayerKind::linear) {
    throw ShapeError("model must end with a linear classifier head");
  }
  std::int64_t ch = input_.channels, h = input_.height, w = input_.width;
  bool collapsed = false;
  int linear_count = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const auto& s = l.spec;
    if (s.has_params() != (l.weight.defined() && l.bias.defined())) {
      fail(i, to_string(s.kind) + " parameter presence mismatch");
    }
    switch (s.kind) {
      case LayerKind::conv: {
        if (collapsed) fail(i, "conv after spatial collapse");
        if (s.out < 1) fail(i, "conv needs at least one filter");
        const Shape expected{s.out, ch, s.kernel, s.kernel};
        if (l.weight.shape() != expected) {
          fail(i, "conv weight " + shape_str(l.weight.shape()) + ", expected " +
                      shape_str(expected));
        }
        if (l.bias.shape() != Shape{s.out}) fail(i, "conv bias " + shape_str(l.bias.shape()));
        const auto sh = h + 2 * s.padding - s.kernel;
        const auto sw = w + 2 * s.padding - s.kernel;
        if (s.stride < 1 || sh < 0 || sw < 0 || sh % s.stride || sw % s.stride) {
          fail(i, "conv output extent is not a positive integer");
        }
        h = sh / s.stride + 1;
        w = sw / s.stride + 1;
        ch = s.out;
        break;
      }
      case LayerKind::relu:
        break;
      case LayerKind::maxpool:
        if (collapsed) fail(i, "maxpool after spatial collapse");
        if (s.kernel < 1 || s.stride < 1 || h < s.kernel || w < s.kernel) {
          fail(i, "maxpool window does not fit input");
        }
        h = (h - s.kernel) / s.stride + 1;
        w = (w - s.kernel) / s.stride + 1;
        break;
      case LayerKind::global_avg_pool:
        if (collapsed) fail(i, "second global_avg_pool");
        collapsed = true;
        h = w = 1;
        break;
      case LayerKind::linear: {
        if (!collapsed) fail(i, "linear before global_avg_pool");
        ++linear_count;
        const Shape expected{s.out, ch};
        if (l.weight.shape() != expected) {
          fail(i, "linear weight " + shape_str(l.weight.shape()) + ", expected " +
                      shape_str(expected));
        }
        if (l.bias.shape() != Shape{s.out}) fail(i, "linear bias " + shape_str(l.bias.shape()));
        ch = s.out;
        break;
      }
    }
  }
  if (linear_count != 1) throw ShapeError("model must contain exactly one linear head");
}

std::vector<Tensor> ModelGraph::parameters() const {
  std::vector<Tensor> out;
  for (const auto& l : layers_) {
    if (!l.spec.has_params()) continue;
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

std::vector<Tensor> ModelGraph::conv_parameters() const {
  std::vector<Tensor> out;
  for (int i : conv_layers()) {
    out.push_back(layers_[i].weight);
    out.push_back(layers_[i].bias);
  }
  return out;
}

std::vector<Tensor> ModelGraph::head_parameters() const {
  return {layers_.back().weight, layers_.back().bias};
}

void ModelGraph::set_trainable(bool flag) const {
  for (auto t : parameters()) t.set_requires_grad(flag);
}

void ModelGraph::set_conv_trainable(bool flag) const {
  for (auto t : conv_parameters()) t.set_requires_grad(flag);
}

void ModelGraph::set_head_trainable(bool flag) const {
  for (auto t : head_parameters()) t.set_requires_grad(flag);
}

bool ModelGraph::any_trainable() const {
  for (const auto& t : parameters()) {
    if (t.requires_grad()) return true;
  }
  return false;
}

std::size_t FilterVectors::total() const {
  std::size_t n = 0;
  for (const auto& t : layers) n += static_cast<std::size_t>(t.numel());
  return n;
}

bool FilterVectors::trainable() const {
  for (const auto& t : layers) {
    if (t.requires_grad()) return true;
  }
  return false;
}

std::vector<float> FilterVectors::flatten() const {
  std::vector<float> out;
  out.reserve(total());
  for (const auto& t : layers) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

ScalingFactors ScalingFactors::filled(const ModelGraph& model, float value, bool trainable) {
  ScalingFactors f;
  for (int n : model.filter_counts()) f.layers.emplace_back(Shape{n}, value, trainable);
  return f;
}

ImportanceVector ImportanceVector::ones(const ModelGraph& model) {
  ImportanceVector b;
  for (int n : model.filter_counts()) b.layers.emplace_back(Shape{n}, 1.0f, false);
  return b;
}

ImportanceVector ImportanceVector::from_values(const std::vector<std::vector<float>>& values) {
  ImportanceVector b;
  for (const auto& v : values) {
    b.layers.emplace_back(Shape{static_cast<std::int64_t>(v.size())}, v, false);
  }
  b.check_non_negative();
  return b;
}

void ImportanceVector::check_non_negative() const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto v = layers[l].data();
    for (std::size_t f = 0; f < v.size(); ++f) {
      if (!(v[f] >= 0.0f) || !std::isfinite(v[f])) {
        throw ContractError("importance vector layer " + std::to_string(l) + " filter " +
                            std::to_string(f) + " is negative or non-finite (" +
                            std::to_string(v[f]) + ")");
      }
    }
  }
}

void check_factors_match(const ModelGraph& model, const FilterVectors& factors) {
  const auto counts = model.filter_counts();
  if (factors.layers.size() != counts.size()) {
    throw ShapeError("factor vectors for " + std::to_string(factors.layers.size()) +
                     " layers, model has " + std::to_string(counts.size()) + " conv layers");
  }
  for (std::size_t l = 0; l < counts.size(); ++l) {
    if (factors.layers[l].shape() != Shape{counts[l]}) {
      throw ShapeError("factor vector " + std::to_string(l) + " has shape " +
                       shape_str(factors.layers[l].shape()) + ", conv layer has " +
                       std::to_string(counts[l]) + " filters");
    }
  }
}

namespace {

Tensor run_forward(const ModelGraph& model, const Tensor& batch, const FilterVectors* factors) {
  const auto& in = model.input_shape();
  if (batch.rank() != 4 || batch.dim(1) != in.channels || batch.dim(2) != in.height ||
      batch.dim(3) != in.width) {
    throw ShapeError("batch " + shape_str(batch.shape()) + " does not match model input [N," +
                     std::to_string(in.channels) + "," + std::to_string(in.height) + "," +
                     std::to_string(in.width) + "]");
  }
  if (factors) check_factors_match(model, *factors);
  Tensor x = batch;
  std::size_t conv_seen = 0;
  for (const auto& l : model.layers()) {
    const auto& s = l.spec;
    switch (s.kind) {
      case LayerKind::conv:
        x = ops::conv2d(x, l.weight, l.bias, s.stride, s.padding);
        if (factors) x = ops::channel_scale(x, factors->layers[conv_seen]);
        ++conv_seen;
        break;
      case LayerKind::relu: x = ops::relu(x); break;
      case LayerKind::maxpool: x = ops::max_pool2d(x, s.kernel, s.stride); break;
      case LayerKind::global_avg_pool: x = ops::global_avg_pool(x); break;
      case LayerKind::linear: x = ops::linear(x, l.weight, l.bias); break;
    }
  }
  return x;
}

}  // namespace

Tensor forward(const ModelGraph& model, const Tensor& batch) {
  return run_forward(model, batch, nullptr);
}

Tensor forward(const ModelGraph& model, const Tensor& batch, const FilterVectors& factors) {
  return run_forward(model, batch, &factors);
}

ModelGraph build_model(InputShape input, const std::vector<LayerSpec>& specs, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Layer> layers;
  std::int64_t ch = input.channels;
  for (const auto& s : specs) {
    Layer l{s, {}, {}};
    if (s.kind == LayerKind::conv) {
      const auto fan_in = ch * s.kernel * s.kernel;
      const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
      l.weight = uniform_tensor({s.out, ch, s.kernel, s.kernel}, bound, rng);
      l.bias = Tensor(Shape{s.out});
      ch = s.out;
    } else if (s.kind == LayerKind::linear) {
      const float bound = 1.0f / std::sqrt(static_cast<float>(ch));
      l.weight = uniform_tensor({s.out, ch}, bound, rng);
      l.bias = uniform_tensor({s.out}, bound, rng);
      ch = s.out;
    }
    layers.push_back(std::move(l));
  }
  return ModelGraph(input, std::move(layers));
}

std::vector<LayerSpec> vgg_mini_specs(int class_count) {
  return {LayerSpec::conv(32, 3),   LayerSpec::relu(), LayerSpec::maxpool(),
          LayerSpec::conv(64, 3),   LayerSpec::relu(), LayerSpec::maxpool(),
          LayerSpec::conv(128, 3),  LayerSpec::relu(), LayerSpec::conv(128, 3),
          LayerSpec::relu(),        LayerSpec::global_avg_pool(),
          LayerSpec::linear(class_count)};
}

ModelGraph vgg_mini(InputShape input, int class_count, std::uint64_t seed) {
  return build_model(input, vgg_mini_specs(class_count), seed);
}

ModelGraph replace_head(const ModelGraph& model, int target_classes, std::uint64_t seed) {
  if (target_classes < 2) {
    throw ContractError("replace_head: target task needs at least 2 classes, got " +
                        std::to_string(target_classes));
  }
  ModelGraph out(model);
  auto& head = out.layers().back();
  const auto fan_in = head.weight.dim(1);
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  Rng rng(seed);
  const bool trainable = head.weight.requires_grad();
  head.spec.out = target_classes;
  head.weight = uniform_tensor({target_classes, fan_in}, bound, rng);
  head.bias = uniform_tensor({target_classes}, bound, rng);
  head.weight.set_requires_grad(trainable);
  head.bias.set_requires_grad(trainable);
  out.validate();
  return out;
}

std::uint64_t flops_with_filters(const ModelGraph& model, const std::vector<int>& filter_counts) {
  if (filter_counts.size() != model.conv_layers().size()) {
    throw ShapeError("flops: filter count list does not match conv layer count");
  }
  std::uint64_t total = 0;
  walk(model, &filter_counts,
       [&](int, const LayerSpec& s, std::int64_t cin, std::int64_t cout, std::int64_t area) {
         const std::int64_t k2 = s.kind == LayerKind::conv ? s.kernel * s.kernel : 1;
         total += static_cast<std::uint64_t>(2 * cout * cin * k2 * area);
       });
  return total;
}

std::uint64_t flops(const ModelGraph& model) {
  return flops_with_filters(model, model.filter_counts());
}

ModelGraph fold_importance(const ModelGraph& model, const ImportanceVector& beta) {
  check_factors_match(model, beta);
  beta.check_non_negative();
  ModelGraph out(model);
  const auto convs = out.conv_layers();
  for (std::size_t c = 0; c < convs.size(); ++c) {
    auto& l = out.layers()[convs[c]];
    auto b = beta.layers[c].data();
    auto w = l.weight.data();
    auto bias = l.bias.data();
    const auto per_filter = l.weight.numel() / l.weight.dim(0);
    for (std::int64_t f = 0; f < l.weight.dim(0); ++f) {
      for (std::int64_t i = 0; i < per_filter; ++i) w[f * per_filter + i] *= b[f];
      bias[f] *= b[f];
    }
  }
  return out;
}

std::uint64_t checksum(const ModelGraph& model) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const auto& t : model.parameters()) fnv(hash, t.data());
  return hash;
}

std::uint64_t checksum(const FilterVectors& factors) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const auto& t : factors.layers) fnv(hash, t.data());
  return hash;
}

}  // namespace transtailor::nn
