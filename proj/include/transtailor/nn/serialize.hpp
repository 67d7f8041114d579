#pragma once

#include <filesystem>
#include <iosfwd>

#include <nlohmann/json.hpp>

#include "transtailor/nn/model.hpp"

namespace transtailor::nn {

// Binary checkpoint layout (all integers little-endian):
//   "TTMG" | u32 version | u32 C,H,W | u32 layer_count
//   per layer: u8 kind | i32 out,kernel,stride,padding | u8 has_params
//              [tensor weight, tensor bias]
//   tensor: u32 rank | u32 extents... | f32 payload (IEEE-754, LE)
inline constexpr char kModelMagic[4] = {'T', 'T', 'M', 'G'};
inline constexpr std::uint32_t kModelVersion = 1;

void write_model(const ModelGraph& model, std::ostream& out);
ModelGraph read_model(std::istream& in);

void save_model(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_model(const std::filesystem::path& path);

// Architecture, per-layer filter counts and FLOPs.
nlohmann::json manifest(const ModelGraph& model);
void save_manifest(const ModelGraph& model, const std::filesystem::path& path);

}  // namespace transtailor::nn
