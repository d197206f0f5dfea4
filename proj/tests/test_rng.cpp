#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "nnqc/rng.hpp"

using nnqc::RandomStream;
using nnqc::mix64;

TEST_CASE("mix64 is deterministic and avalanche-y") {
  CHECK(mix64(0) == mix64(0));
  CHECK(mix64(1) != mix64(2));
  CHECK(mix64(3, 4) != mix64(4, 3));

  // Derived seeds for adjacent indices must not collide.
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(mix64(42, i));
  CHECK(seen.size() == 1000);
}

TEST_CASE("RandomStream reproduces its sequence for a fixed seed") {
  RandomStream a(123), b(123), c(124);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    all_equal = all_equal && va == b.next_u64();
    any_diff = any_diff || va != c.next_u64();
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("uniform_int covers its inclusive range") {
  RandomStream rs(9);
  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) {
    const int v = rs.uniform_int(2, 5);
    CHECK(v >= 2);
    CHECK(v <= 5);
    seen.insert(v);
  }
  CHECK(seen.size() == 4);
  CHECK(rs.uniform_int(7, 7) == 7);
}

TEST_CASE("uniform stays in [lo, hi)") {
  RandomStream rs(11);
  for (int i = 0; i < 1000; ++i) {
    const double v = rs.uniform(-1.0, 2.0);
    CHECK(v >= -1.0);
    CHECK(v < 2.0);
  }
}

TEST_CASE("normal has roughly standard moments") {
  RandomStream rs(5);
  const int n = 20000;
  double sum = 0, sumsq = 0;
  for (int i = 0; i < n; ++i) {
    const double v = rs.normal();
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("shuffle permutes without loss") {
  RandomStream rs(8);
  std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
  auto w = v;
  rs.shuffle(w);
  CHECK(w != v);  // overwhelmingly likely for 8 elements
  std::sort(w.begin(), w.end());
  CHECK(w == v);
}
