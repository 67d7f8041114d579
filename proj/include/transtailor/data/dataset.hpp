#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "transtailor/rng.hpp"
#include "transtailor/tensor.hpp"

namespace transtailor::data {

struct Dataset {
  Tensor images;  // [N,C,H,W]
  std::vector<int> labels;
  int class_count = 0;
  std::string name;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  int channels() const { return static_cast<int>(images.dim(1)); }
  int height() const { return static_cast<int>(images.dim(2)); }
  int width() const { return static_cast<int>(images.dim(3)); }

  // Throws DataError unless labels fit [0, class_count) and N matches.
  void validate() const;
};

// Examples at the given positions, in that order.
Dataset subset(const Dataset& ds, const std::vector<std::int64_t>& indices);
std::vector<std::int64_t> class_counts(const Dataset& ds);

// IDX image/label pair (magic 0x00000803 / 0x00000801); pixels scaled to [0,1].
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

// One or more CIFAR-10 binary batches: 3073-byte records (label, 3x32x32).
Dataset load_cifar_binary(const std::vector<std::filesystem::path>& batch_paths);

struct Normalized {
  Dataset dataset;
  std::vector<float> channel_means;
};

// Subtracts each channel's mean over the whole dataset.
Normalized normalize(const Dataset& ds);
// Subtracts precomputed means (e.g. source statistics applied to a target set).
Dataset apply_normalization(const Dataset& ds, const std::vector<float>& channel_means);

struct TargetTaskSpec {
  int per_class_train = 30;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct TargetSplit {
  Dataset train;
  Dataset val;
};

// Per class, shuffles the class pool under the seed, holds out
// ceil(val_fraction * pool) examples for validation and takes exactly
// per_class_train of the rest for training.
TargetSplit sample_target(const Dataset& ds, const TargetTaskSpec& spec);

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

// Fixed-size batches over a dataset; the last batch may be short. With
// shuffling on, each epoch's order is a function of (seed, epoch) only.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, int batch_size, bool shuffle, std::uint64_t seed);

  void start_epoch(int epoch);
  std::optional<Batch> next();
  std::int64_t batches_per_epoch() const;

 private:
  const Dataset* ds_;
  int batch_size_;
  bool shuffle_;
  std::uint64_t seed_;
  std::vector<std::int64_t> order_;
  std::size_t cursor_ = 0;
};

// Zero-pads each image by `pad` pixels and crops back to the original size
// at a random offset.
Tensor random_crop_pad(const Tensor& images, int pad, Rng& rng);

}  // namespace transtailor::data
