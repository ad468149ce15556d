#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace poisonlr {

/// Portable xoshiro256** generator seeded through splitmix64.
///
/// Every draw (integers, doubles, normals, shuffles) is defined here rather
/// than through <random> distributions, whose output differs between standard
/// library implementations. Equal seeds give bitwise-equal streams everywhere.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "xoshiro256**/splitmix64/box-muller";

  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, bound), unbiased. bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal (Box-Muller, caches the second draw).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// `count` distinct indices from [0, n) in sampled order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count);

 private:
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Mixes a base seed with a stream id so sibling tasks draw independent streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace poisonlr
