#include "transtailor/data/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "transtailor/error.hpp"

namespace transtailor::data {

namespace {

using F = PatternFamily;

constexpr std::array<std::array<float, 3>, kPatternColors> kPalette{{
    {1.0f, 0.1f, 0.1f},
    {0.1f, 1.0f, 0.1f},
    {0.15f, 0.25f, 1.0f},
    {1.0f, 0.9f, 0.1f},
    {0.1f, 0.9f, 0.9f},
    {0.9f, 0.1f, 0.9f},
}};

float pattern_mask(PatternFamily family, int u, int v, int size) {
  const float c = 0.5f * static_cast<float>(size - 1);
  const float du = static_cast<float>(u) - c;
  const float dv = static_cast<float>(v) - c;
  const float r = std::sqrt(du * du + dv * dv);
  switch (family) {
    case F::horizontal_stripes: return (v % 4) < 2 ? 1.0f : 0.0f;
    case F::vertical_stripes: return (u % 4) < 2 ? 1.0f : 0.0f;
    case F::rising_diagonal: return ((u + v) % 4) < 2 ? 1.0f : 0.0f;
    case F::falling_diagonal: return ((u - v + 4 * size) % 4) < 2 ? 1.0f : 0.0f;
    case F::checkerboard: return ((u / 2 + v / 2) % 2) == 0 ? 1.0f : 0.0f;
    case F::disc: return r <= 0.45f * static_cast<float>(size) ? 1.0f : 0.0f;
    case F::ring: return std::fabs(r - 0.38f * static_cast<float>(size)) < 0.9f ? 1.0f : 0.0f;
    case F::cross: return (std::fabs(du) < 1.0f || std::fabs(dv) < 1.0f) ? 1.0f : 0.0f;
  }
  return 0.0f;
}

void draw_part(float* image, int image_size, PatternFamily family, int color, Rng& rng) {
  const int patch = std::max(5, image_size * 7 / 16);
  const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(image_size - patch + 1)));
  const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(image_size - patch + 1)));
  const int c = color >= 0 ? color : static_cast<int>(rng.below(kPatternColors));
  const float brightness = rng.uniform(0.7f, 1.0f);
  const auto area = static_cast<std::size_t>(image_size) * image_size;
  for (int v = 0; v < patch; ++v) {
    for (int u = 0; u < patch; ++u) {
      const float m = pattern_mask(family, u, v, patch);
      if (m == 0.0f) continue;
      const auto at = static_cast<std::size_t>(y0 + v) * image_size + (x0 + u);
      for (int ch = 0; ch < 3; ++ch) {
        float& px = image[ch * area + at];
        px = std::max(px, m * brightness * kPalette[c][ch]);
      }
    }
  }
}

}  // namespace

PatternTask pattern_task(const std::string& name) {
  if (name == "patterns-source") {
    const std::array<std::pair<F, F>, 10> pairs{{
        {F::horizontal_stripes, F::disc},
        {F::vertical_stripes, F::ring},
        {F::rising_diagonal, F::cross},
        {F::falling_diagonal, F::checkerboard},
        {F::horizontal_stripes, F::cross},
        {F::vertical_stripes, F::checkerboard},
        {F::rising_diagonal, F::disc},
        {F::falling_diagonal, F::ring},
        {F::checkerboard, F::disc},
        {F::ring, F::cross},
    }};
    PatternTask task{name, {}, {}, 0};
    for (auto [a, b] : pairs) task.classes.push_back({{{a, -1}, {b, -1}}});
    return task;
  }
  if (name == "patterns-target-a") {
    PatternTask task{name, {}, {F::rising_diagonal, F::falling_diagonal, F::disc, F::ring, F::cross}, 1};
    for (F f : {F::horizontal_stripes, F::vertical_stripes, F::checkerboard}) {
      for (int color : {0, 2}) task.classes.push_back({{{f, color}}});
    }
    return task;
  }
  if (name == "patterns-target-b") {
    PatternTask task{name, {}, {F::horizontal_stripes, F::vertical_stripes, F::rising_diagonal,
                                F::falling_diagonal, F::checkerboard}, 1};
    for (F f : {F::disc, F::ring, F::cross}) {
      for (int color : {1, 3}) task.classes.push_back({{{f, color}}});
    }
    return task;
  }
  throw ConfigError("unknown pattern task '" + name + "'");
}

std::vector<std::string> pattern_task_names() {
  return {"patterns-source", "patterns-target-a", "patterns-target-b"};
}

Dataset generate_patterns(const PatternTask& task, const PatternOptions& options) {
  if (task.classes.size() < 2) throw ConfigError(task.name + ": needs at least 2 classes");
  if (options.image_size < 8) throw ConfigError("pattern images must be at least 8x8");
  if (options.per_class < 1) throw ConfigError("pattern dataset needs at least 1 image per class");
  const int size = options.image_size;
  const auto classes = static_cast<std::int64_t>(task.classes.size());
  const auto n = classes * options.per_class;
  const auto per_image = static_cast<std::int64_t>(3) * size * size;
  std::vector<float> pixels(static_cast<std::size_t>(n * per_image), 0.0f);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    labels[i] = label;
    Rng rng = Rng::derive(options.seed, static_cast<std::uint64_t>(i));
    float* image = pixels.data() + i * per_image;
    for (int d = 0; d < task.distractors && !task.distractor_families.empty(); ++d) {
      const auto f = task.distractor_families[rng.below(task.distractor_families.size())];
      draw_part(image, size, f, -1, rng);
    }
    for (const auto& part : task.classes[label].parts) {
      draw_part(image, size, part.family, part.color, rng);
    }
    for (std::int64_t p = 0; p < per_image; ++p) image[p] += options.noise * rng.normal();
  }
  Dataset ds{Tensor({n, 3, size, size}, std::move(pixels)), std::move(labels),
             static_cast<int>(classes), task.name};
  ds.validate();
  return ds;
}

}  // namespace transtailor::data
