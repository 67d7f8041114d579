#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "transtailor/data/dataset.hpp"

namespace transtailor::data {

// Procedural RGB pattern images used as an offline source/target transfer
// pair. Each image is Gaussian noise plus a few coloured texture patches
// ("parts") at random positions; a class is defined by its parts.
enum class PatternFamily : int {
  horizontal_stripes = 0,
  vertical_stripes,
  rising_diagonal,
  falling_diagonal,
  checkerboard,
  disc,
  ring,
  cross,
};
inline constexpr int kPatternFamilies = 8;
inline constexpr int kPatternColors = 6;  // red green blue yellow cyan magenta

struct PatternPart {
  PatternFamily family;
  int color = -1;  // palette index, -1 draws a random palette colour per image
};

struct PatternClass {
  std::vector<PatternPart> parts;
};

struct PatternTask {
  std::string name;
  std::vector<PatternClass> classes;
  // Each image also receives `distractors` parts drawn from these families
  // in random colours.
  std::vector<PatternFamily> distractor_families;
  int distractors = 0;
};

// "patterns-source": 10 colour-invariant classes, each a pair of families.
// "patterns-target-a": 6 colour-specific stripe/checker classes.
// "patterns-target-b": 6 colour-specific disc/ring/cross classes.
PatternTask pattern_task(const std::string& name);
std::vector<std::string> pattern_task_names();

struct PatternOptions {
  int image_size = 16;
  int per_class = 100;
  float noise = 0.3f;
  std::uint64_t seed = 0;
};

Dataset generate_patterns(const PatternTask& task, const PatternOptions& options);

}  // namespace transtailor::data
