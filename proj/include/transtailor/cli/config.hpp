#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "transtailor/data/dataset.hpp"
#include "transtailor/tailor/config.hpp"

namespace transtailor::cli {

inline constexpr const char* kDataRootEnv = "TRANSTAILOR_DATA_ROOT";

enum class Method { transtailor, ft, ft_full, l1, source_taylor };

std::string to_string(Method method);
// Throws ConfigError for unknown names.
Method parse_method(const std::string& name);

// Where a dataset comes from. Relative file paths resolve against
// $TRANSTAILOR_DATA_ROOT when set, else the working directory.
struct DatasetSpec {
  std::string format = "synthetic";  // synthetic | idx | cifar
  // synthetic
  std::string task;
  int per_class = 100;
  float noise = 0.3f;
  int image_size = 16;
  std::uint64_t seed = 0;
  // idx: images + labels; cifar: files
  std::string images;
  std::string labels;
  std::vector<std::string> files;
};

struct PretrainSpec {
  int epochs = 24;
  // Learning rate is multiplied by decay_factor from decay_epoch on.
  int decay_epoch = 18;
  float decay_factor = 0.1f;
  float lr = 0.02f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  int batch_size = 32;
  double val_fraction = 0.2;
};

struct RunConfig {
  std::string name = "run";
  std::string architecture = "vgg-mini";
  Method method = Method::transtailor;
  std::string out = "runs/run";
  std::uint64_t seed = 0;

  DatasetSpec source;
  DatasetSpec target;
  data::TargetTaskSpec target_task;
  PretrainSpec pretrain;
  // Checkpoint written by `pretrain`; required by `tailor`.
  std::string pretrained;
  // Held-out source images per class used by the source-taylor baseline.
  int source_importance_per_class = 30;

  tailor::TailorConfig tailor;
};

// Field-by-field JSON mapping. Missing keys keep their defaults; unknown
// keys and wrong types raise ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

std::filesystem::path resolve_data_path(const std::string& path);

// Throws ConfigError when a referenced dataset file is missing or a field is
// out of range.
void check_dataset_spec(const DatasetSpec& spec, const std::string& role);

// Loads (or generates) the dataset. Throws DataError on malformed files.
data::Dataset load_dataset(const DatasetSpec& spec);

}  // namespace transtailor::cli
