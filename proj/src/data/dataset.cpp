#include "transtailor/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "transtailor/error.hpp"

namespace transtailor::data {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) << 24 | static_cast<std::uint32_t>(b[at + 1]) << 16 |
         static_cast<std::uint32_t>(b[at + 2]) << 8 | static_cast<std::uint32_t>(b[at + 3]);
}

void require_bytes(const std::filesystem::path& path, std::size_t expected, std::size_t actual) {
  if (actual < expected) {
    throw DataError(path.string() + ": truncated IDX file, expected " + std::to_string(expected) +
                    " bytes, got " + std::to_string(actual));
  }
}

}  // namespace

void Dataset::validate() const {
  if (!images.defined() || images.rank() != 4) throw DataError(name + ": images must be [N,C,H,W]");
  if (images.dim(0) != size()) {
    throw DataError(name + ": " + std::to_string(images.dim(0)) + " images but " +
                    std::to_string(size()) + " labels");
  }
  if (labels.empty()) throw DataError(name + ": dataset is empty");
  for (int l : labels) {
    if (l < 0 || l >= class_count) {
      throw DataError(name + ": label " + std::to_string(l) + " outside [0," +
                      std::to_string(class_count) + ")");
    }
  }
}

Dataset subset(const Dataset& ds, const std::vector<std::int64_t>& indices) {
  if (indices.empty()) throw DataError(ds.name + ": empty subset");
  const auto per = ds.images.numel() / ds.images.dim(0);
  Shape shape = ds.images.shape();
  shape[0] = static_cast<std::int64_t>(indices.size());
  std::vector<float> pixels(static_cast<std::size_t>(shape_numel(shape)));
  std::vector<int> labels;
  labels.reserve(indices.size());
  auto src = ds.images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto idx = indices[i];
    if (idx < 0 || idx >= ds.size()) throw DataError(ds.name + ": subset index out of range");
    std::copy_n(src.begin() + idx * per, per, pixels.begin() + static_cast<std::int64_t>(i) * per);
    labels.push_back(ds.labels[idx]);
  }
  return {Tensor(std::move(shape), std::move(pixels)), std::move(labels), ds.class_count, ds.name};
}

std::vector<std::int64_t> class_counts(const Dataset& ds) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(ds.class_count), 0);
  for (int l : ds.labels) ++counts[l];
  return counts;
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  require_bytes(images_path, 16, img.size());
  require_bytes(labels_path, 8, lab.size());
  if (be32(img, 0) != 0x00000803) {
    throw DataError(images_path.string() + ": bad IDX image magic (expected 0x00000803)");
  }
  if (be32(lab, 0) != 0x00000801) {
    throw DataError(labels_path.string() + ": bad IDX label magic (expected 0x00000801)");
  }
  const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  const std::size_t n_labels = be32(lab, 4);
  if (n != n_labels) {
    throw DataError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                    std::to_string(n_labels) + " labels");
  }
  if (n == 0 || rows == 0 || cols == 0) throw DataError(images_path.string() + ": empty IDX file");
  require_bytes(images_path, 16 + n * rows * cols, img.size());
  require_bytes(labels_path, 8 + n, lab.size());

  std::vector<float> pixels(n * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(img[16 + i]) / 255.0f;
  std::vector<int> labels(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = lab[8 + i];
    max_label = std::max(max_label, labels[i]);
  }
  Dataset ds{Tensor({static_cast<std::int64_t>(n), 1, static_cast<std::int64_t>(rows),
                     static_cast<std::int64_t>(cols)},
                    std::move(pixels)),
             std::move(labels), max_label + 1, images_path.stem().string()};
  ds.validate();
  return ds;
}

Dataset load_cifar_binary(const std::vector<std::filesystem::path>& batch_paths) {
  constexpr std::size_t kRecord = 3073;
  constexpr std::size_t kPixels = 3072;
  if (batch_paths.empty()) throw DataError("no CIFAR batch files given");
  std::vector<float> pixels;
  std::vector<int> labels;
  for (const auto& path : batch_paths) {
    const auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kRecord != 0) {
      throw DataError(path.string() + ": truncated CIFAR batch, size " +
                      std::to_string(bytes.size()) + " is not a multiple of " +
                      std::to_string(kRecord) + " bytes");
    }
    for (std::size_t at = 0; at < bytes.size(); at += kRecord) {
      if (bytes[at] > 9) {
        throw DataError(path.string() + ": CIFAR label " + std::to_string(bytes[at]) +
                        " outside [0,10) at record " + std::to_string(at / kRecord));
      }
      labels.push_back(bytes[at]);
      for (std::size_t p = 0; p < kPixels; ++p) {
        pixels.push_back(static_cast<float>(bytes[at + 1 + p]) / 255.0f);
      }
    }
  }
  const auto n = static_cast<std::int64_t>(labels.size());
  Dataset ds{Tensor({n, 3, 32, 32}, std::move(pixels)), std::move(labels), 10, "cifar10"};
  ds.validate();
  return ds;
}

Normalized normalize(const Dataset& ds) {
  const auto n = ds.images.dim(0), c = ds.images.dim(1);
  const auto area = ds.images.dim(2) * ds.images.dim(3);
  auto px = ds.images.data();
  std::vector<float> means(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const auto base = (i * c + ch) * area;
      for (std::int64_t p = 0; p < area; ++p) acc += px[base + p];
    }
    means[ch] = static_cast<float>(acc / static_cast<double>(n * area));
  }
  return {apply_normalization(ds, means), means};
}

Dataset apply_normalization(const Dataset& ds, const std::vector<float>& channel_means) {
  const auto c = ds.images.dim(1);
  if (static_cast<std::int64_t>(channel_means.size()) != c) {
    throw DataError(ds.name + ": " + std::to_string(channel_means.size()) +
                    " channel means for " + std::to_string(c) + " channels");
  }
  const auto area = ds.images.dim(2) * ds.images.dim(3);
  Dataset out{ds.images.detach(), ds.labels, ds.class_count, ds.name};
  auto px = out.images.data();
  for (std::int64_t i = 0; i < out.images.numel(); ++i) px[i] -= channel_means[(i / area) % c];
  return out;
}

TargetSplit sample_target(const Dataset& ds, const TargetTaskSpec& spec) {
  if (spec.per_class_train < 1) throw DataError("target task needs at least 1 example per class");
  if (!(spec.val_fraction > 0.0 && spec.val_fraction < 1.0)) {
    throw DataError("validation fraction must lie in (0,1)");
  }
  std::vector<std::vector<std::int64_t>> pools(static_cast<std::size_t>(ds.class_count));
  for (std::int64_t i = 0; i < ds.size(); ++i) pools[ds.labels[i]].push_back(i);

  std::vector<std::int64_t> train_idx, val_idx;
  for (int c = 0; c < ds.class_count; ++c) {
    auto& pool = pools[c];
    const auto n_val = static_cast<std::size_t>(std::ceil(spec.val_fraction * pool.size()));
    if (pool.size() < n_val + static_cast<std::size_t>(spec.per_class_train) || n_val == 0) {
      throw DataError(ds.name + ": class " + std::to_string(c) + " has " +
                      std::to_string(pool.size()) + " examples; needs " +
                      std::to_string(spec.per_class_train) + " train plus " +
                      std::to_string(std::max<std::size_t>(n_val, 1)) + " validation");
    }
    Rng rng = Rng::derive(spec.seed, static_cast<std::uint64_t>(c));
    rng.shuffle(pool);
    val_idx.insert(val_idx.end(), pool.begin(), pool.begin() + static_cast<std::int64_t>(n_val));
    train_idx.insert(train_idx.end(), pool.begin() + static_cast<std::int64_t>(n_val),
                     pool.begin() + static_cast<std::int64_t>(n_val) + spec.per_class_train);
  }
  TargetSplit split{subset(ds, train_idx), subset(ds, val_idx)};
  split.train.name = ds.name + "-train";
  split.val.name = ds.name + "-val";
  return split;
}

BatchIterator::BatchIterator(const Dataset& ds, int batch_size, bool shuffle, std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size), shuffle_(shuffle), seed_(seed) {
  if (batch_size < 1) throw ContractError("batch size must be positive");
  start_epoch(0);
}

void BatchIterator::start_epoch(int epoch) {
  order_.resize(static_cast<std::size_t>(ds_->size()));
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::int64_t>(i);
  if (shuffle_) {
    Rng rng = Rng::derive(seed_, static_cast<std::uint64_t>(epoch));
    rng.shuffle(order_);
  }
  cursor_ = 0;
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const auto end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_size_));
  std::vector<std::int64_t> idx(order_.begin() + static_cast<std::int64_t>(cursor_),
                                order_.begin() + static_cast<std::int64_t>(end));
  cursor_ = end;
  Dataset part = subset(*ds_, idx);
  return Batch{std::move(part.images), std::move(part.labels)};
}

std::int64_t BatchIterator::batches_per_epoch() const {
  return (ds_->size() + batch_size_ - 1) / batch_size_;
}

Tensor random_crop_pad(const Tensor& images, int pad, Rng& rng) {
  if (pad <= 0) return images.detach();
  const auto n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensor out(images.shape());
  auto src = images.data();
  auto dst = out.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto dy = static_cast<std::int64_t>(rng.below(2 * pad + 1)) - pad;
    const auto dx = static_cast<std::int64_t>(rng.below(2 * pad + 1)) - pad;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto base = (i * c + ch) * h * w;
      for (std::int64_t y = 0; y < h; ++y) {
        const auto sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        for (std::int64_t x = 0; x < w; ++x) {
          const auto sx = x + dx;
          if (sx >= 0 && sx < w) dst[base + y * w + x] = src[base + sy * w + sx];
        }
      }
    }
  }
  return out;
}

}  // namespace transtailor::data
