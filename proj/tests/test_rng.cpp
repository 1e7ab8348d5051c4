#include <doctest.h>

#include "rpo/rng.hpp"

using namespace rpo;

TEST_CASE("derived streams are reproducible and key-sensitive") {
  RngStream a = RngStream::derive(42, {7, 3});
  RngStream b = RngStream::derive(42, {7, 3});
  RngStream c = RngStream::derive(42, {7, 4});
  for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());
  bool any_diff = false;
  RngStream a2 = RngStream::derive(42, {7, 3});
  for (int i = 0; i < 16; ++i) any_diff |= a2.next_u64() != c.next_u64();
  CHECK(any_diff);
}

TEST_CASE("uniform stays in [0,1) and uniform_int covers its range") {
  RngStream rng(123);
  bool saw_lo = false, saw_hi = false;
  for (int i = 0; i < 2000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const int64_t v = rng.uniform_int(-2, 2);
    CHECK(v >= -2);
    CHECK(v <= 2);
    saw_lo |= v == -2;
    saw_hi |= v == 2;
  }
  CHECK(saw_lo);
  CHECK(saw_hi);
}

TEST_CASE("categorical respects weights") {
  RngStream rng(9);
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 3000; ++i) counts[rng.categorical({0.0, 1.0, 3.0})]++;
  CHECK(counts[0] == 0);
  CHECK(counts[2] > counts[1]);
}

TEST_CASE("permutation is a bijection") {
  RngStream rng(5);
  auto perm = rng.permutation(100);
  std::vector<bool> seen(100, false);
  for (size_t i : perm) {
    CHECK(!seen[i]);
    seen[i] = true;
  }
}
