#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "hvsobs/random.hpp"

using namespace hvsobs;

TEST_CASE("philox known answers") {
  // Random123 kat_vectors, philox4x32_10.
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) ==
        std::array<std::uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
        std::array<std::uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
        std::array<std::uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("draws are pure functions of key and counter") {
  const CounterRng a(42), b(42), c(43);
  CHECK(a.uniform(7, 3) == b.uniform(7, 3));
  CHECK(a.uniform(7, 3) != c.uniform(7, 3));
  CHECK(a.uniform(7, 3) != a.uniform(8, 3));
  CHECK(a.normal(1) == b.normal(1));
}

TEST_CASE("uniform moments and range") {
  const CounterRng rng(9);
  const int n = 200000;
  double sum = 0, sq = 0, lo = 1, hi = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform(i);
    sum += u;
    sq += u * u;
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo > 0.0);
  CHECK(hi <= 1.0);
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(sq / n - (sum / n) * (sum / n) == doctest::Approx(1.0 / 12).epsilon(0.02));
}

TEST_CASE("normal moments") {
  const CounterRng rng(10);
  const int n = 200000;
  double sum = 0, sq = 0, q = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal(i);
    sum += z;
    sq += z * z;
    q += z * z * z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.01));
  CHECK(q / n == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("below stays in range and covers it") {
  const CounterRng rng(3);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto k = rng.below(7, i);
    REQUIRE(k < 7);
    ++hist[k];
  }
  for (int h : hist) CHECK(h == doctest::Approx(10000).epsilon(0.05));
}

TEST_CASE("permutation is a bijection and seeded") {
  for (std::size_t n : {0u, 1u, 2u, 17u, 210u}) {
    auto p = permutation(n, 5);
    auto sorted = p;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(n);
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(sorted == iota);
    CHECK(permutation(n, 5) == p);
  }
  CHECK(permutation(50, 5) != permutation(50, 6));
  CHECK(permutation(50, 5, 0) != permutation(50, 5, 1));
}

TEST_CASE("shuffle positions are roughly uniform") {
  // Each element should land in each slot about equally often.
  const std::size_t n = 5;
  std::vector<std::vector<int>> count(n, std::vector<int>(n, 0));
  for (std::uint64_t key = 0; key < 20000; ++key) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    shuffle(std::span(v), key);
    for (std::size_t slot = 0; slot < n; ++slot) ++count[v[slot]][slot];
  }
  for (auto& row : count)
    for (int c : row) CHECK(c == doctest::Approx(4000).epsilon(0.08));
}

TEST_CASE("mix64 spreads nearby inputs") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(mix64(1, i));
  CHECK(seen.size() == 1000);
  CHECK(mix64(1, 2) != mix64(2, 1));
}
