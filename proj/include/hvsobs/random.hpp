#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (key, counter), so results never depend on thread scheduling or on how many
// draws happened before.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace hvsobs {

// Philox4x32-10 (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

// FNV-1a, used to turn ids and names into seeds.
std::uint64_t fnv1a64(std::string_view text);

// SplitMix64 finalizer; cheap bijective mixing of two 64-bit words.
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::array<std::uint32_t, 4> block(std::uint64_t c0, std::uint64_t c1 = 0) const;

  // Uniform on (0, 1], 53-bit resolution.
  double uniform(std::uint64_t c0, std::uint64_t c1 = 0) const;

  // Standard normal via Box-Muller over one Philox block.
  double normal(std::uint64_t c0, std::uint64_t c1 = 0) const;

  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound, std::uint64_t c0, std::uint64_t c1 = 0) const;

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
};

// Fisher-Yates permutation of [0, n) drawn from (key, stream).
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t key, std::uint64_t stream = 0);

template <class T>
void shuffle(std::span<T> items, std::uint64_t key, std::uint64_t stream = 0) {
  const CounterRng rng(key);
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i, stream, i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace hvsobs
