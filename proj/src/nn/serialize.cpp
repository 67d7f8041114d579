#include "transtailor/nn/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace transtailor::nn {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError(std::string("model checkpoint truncated while reading ") + what);
  }
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::uint8_t get_u8(std::istream& in, const char* what) {
  char c;
  if (!in.get(c)) throw DataError(std::string("model checkpoint truncated while reading ") + what);
  return static_cast<std::uint8_t>(c);
}

void put_tensor(std::ostream& out, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

Tensor get_tensor(std::istream& in) {
  const auto rank = get_u32(in, "tensor rank");
  if (rank == 0 || rank > 4) throw DataError("model checkpoint has invalid tensor rank");
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto e = get_u32(in, "tensor extent");
    if (e == 0 || e > (1u << 24)) throw DataError("model checkpoint has invalid tensor extent");
    shape.push_back(e);
  }
  const auto n = shape_numel(shape);
  if (n > (1 << 26)) throw DataError("model checkpoint tensor too large");
  std::vector<float> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = std::bit_cast<float>(get_u32(in, "tensor payload"));
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

void write_model(const ModelGraph& model, std::ostream& out) {
  out.write(kModelMagic, 4);
  put_u32(out, kModelVersion);
  const auto& s = model.input_shape();
  put_u32(out, static_cast<std::uint32_t>(s.channels));
  put_u32(out, static_cast<std::uint32_t>(s.height));
  put_u32(out, static_cast<std::uint32_t>(s.width));
  put_u32(out, static_cast<std::uint32_t>(model.layers().size()));
  for (const auto& l : model.layers()) {
    put_u8(out, static_cast<std::uint8_t>(l.spec.kind));
    for (int v : {l.spec.out, l.spec.kernel, l.spec.stride, l.spec.padding}) {
      put_u32(out, static_cast<std::uint32_t>(v));
    }
    put_u8(out, l.spec.has_params() ? 1 : 0);
    if (l.spec.has_params()) {
      put_tensor(out, l.weight);
      put_tensor(out, l.bias);
    }
  }
}

ModelGraph read_model(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0) {
    throw DataError("not a model checkpoint (bad magic)");
  }
  const auto version = get_u32(in, "version");
  if (version != kModelVersion) {
    throw DataError("unsupported model checkpoint version " + std::to_string(version));
  }
  InputShape input;
  input.channels = static_cast<int>(get_u32(in, "input channels"));
  input.height = static_cast<int>(get_u32(in, "input height"));
  input.width = static_cast<int>(get_u32(in, "input width"));
  const auto count = get_u32(in, "layer count");
  if (count == 0 || count > 4096) throw DataError("model checkpoint has invalid layer count");
  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    Layer l;
    const auto kind = get_u8(in, "layer kind");
    if (kind < 1 || kind > 5) throw DataError("model checkpoint has unknown layer kind");
    l.spec.kind = static_cast<LayerKind>(kind);
    l.spec.out = static_cast<int>(get_u32(in, "layer out"));
    l.spec.kernel = static_cast<int>(get_u32(in, "layer kernel"));
    l.spec.stride = static_cast<int>(get_u32(in, "layer stride"));
    l.spec.padding = static_cast<int>(get_u32(in, "layer padding"));
    const bool has = get_u8(in, "parameter flag") != 0;
    if (has != l.spec.has_params()) throw DataError("model checkpoint parameter flag mismatch");
    if (has) {
      l.weight = get_tensor(in);
      l.bias = get_tensor(in);
    }
    layers.push_back(std::move(l));
  }
  try {
    return ModelGraph(input, std::move(layers));
  } catch (const ShapeError& e) {
    throw DataError(std::string("model checkpoint is inconsistent: ") + e.what());
  }
}

void save_model(const ModelGraph& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_model(model, out);
  if (!out) throw DataError("failed writing " + path.string());
}

ModelGraph load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model checkpoint " + path.string());
  return read_model(in);
}

nlohmann::json manifest(const ModelGraph& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const auto& s = model.layers()[i].spec;
    nlohmann::json entry{{"index", i}, {"kind", to_string(s.kind)}};
    if (s.kind == LayerKind::conv) {
      entry["filters"] = s.out;
      entry["kernel"] = s.kernel;
      entry["stride"] = s.stride;
      entry["padding"] = s.padding;
    } else if (s.kind == LayerKind::maxpool) {
      entry["kernel"] = s.kernel;
      entry["stride"] = s.stride;
    } else if (s.kind == LayerKind::linear) {
      entry["out_features"] = s.out;
    }
    layers.push_back(std::move(entry));
  }
  const auto& in = model.input_shape();
  return {{"format", "transtailor-model"},
          {"version", kModelVersion},
          {"input", {in.channels, in.height, in.width}},
          {"class_count", model.class_count()},
          {"conv_layers", model.conv_layers().size()},
          {"filters_per_conv_layer", model.filter_counts()},
          {"total_filters", model.total_filters()},
          {"flops", flops(model)},
          {"layers", std::move(layers)}};
}

void save_manifest(const ModelGraph& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << manifest(model).dump(2) << '\n';
}

}  // namespace transtailor::nn
