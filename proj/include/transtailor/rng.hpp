#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace transtailor {

// Seeded generator with platform-independent float/int draws (the standard
// distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Child stream derived from this seed and a tag; does not advance *this.
  static Rng derive(std::uint64_t seed, std::uint64_t tag);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  float uniform() { return static_cast<float>(engine_() >> 40) * 0x1.0p-24f; }
  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  // Standard normal via Box-Muller.
  float normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace transtailor
