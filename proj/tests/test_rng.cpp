#include "vci/rng.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"

using namespace vci;

TEST_CASE("identical seeds give identical streams") {
  RngStream a = RngStream::from_seed(42);
  RngStream b = RngStream::from_seed(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds and children diverge") {
  RngStream a = RngStream::from_seed(1);
  RngStream b = RngStream::from_seed(2);
  CHECK(a.next_u64() != b.next_u64());

  RngStream parent = RngStream::from_seed(7);
  RngStream c0 = parent.child(0);
  RngStream c1 = parent.child(1);
  CHECK(c0.next_u64() != c1.next_u64());

  // Forking a child must not consume parent draws.
  RngStream p1 = RngStream::from_seed(7);
  RngStream p2 = RngStream::from_seed(7);
  (void)p1.child(3);
  CHECK(p1.next_u64() == p2.next_u64());
}

TEST_CASE("named children are stable and distinct") {
  RngStream parent = RngStream::from_seed(5);
  CHECK(parent.child("alpha").next_u64() == parent.child("alpha").next_u64());
  CHECK(parent.child("alpha").next_u64() != parent.child("beta").next_u64());
}

TEST_CASE("uniform01 stays in [0, 1)") {
  RngStream s = RngStream::from_seed(3);
  for (int i = 0; i < 10000; ++i) {
    double u = s.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("uniform_int respects bounds and hits all values") {
  RngStream s = RngStream::from_seed(11);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) {
    uint64_t v = s.uniform_int(5);
    REQUIRE(v < 5);
    counts[static_cast<size_t>(v)]++;
  }
  // 4-sigma binomial band around 10000
  for (int c : counts) CHECK(std::abs(c - 10000) < 4 * std::sqrt(50000 * 0.2 * 0.8));
}

TEST_CASE("normal draws have standard moments") {
  RngStream s = RngStream::from_seed(17);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = s.normal();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / n));
}
