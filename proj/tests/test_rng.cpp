#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "bodycomp/rng.hpp"

using namespace bodycomp;

TEST_SUITE("rng") {

TEST_CASE("same seed reproduces the stream") {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("substreams are reproducible and distinct") {
  Rng a = Rng::substream(9, 4);
  Rng b = Rng::substream(9, 4);
  Rng c = Rng::substream(9, 5);
  CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng::substream(9, 4).next_u64() != c.next_u64());
  CHECK(Rng::substream(9, 1, 2).next_u64() ==
        Rng::substream(9, 1, 2).next_u64());
  CHECK(Rng::substream(9, 1, 2).next_u64() !=
        Rng::substream(9, 2, 1).next_u64());
}

TEST_CASE("uniform01 stays in range with mean 1/2") {
  Rng rng(7);
  double sum = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::fabs(sum / n - 0.5) < 0.01);
}

TEST_CASE("below is in range and roughly uniform") {
  Rng rng(11);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 50000; ++i) {
    const std::uint64_t v = rng.below(10);
    REQUIRE(v < 10);
    ++counts[v];
  }
  for (int c : counts) CHECK(std::fabs(c - 5000.0) < 400.0);
}

TEST_CASE("normal has mean 0 and sd 1") {
  Rng rng(13);
  const int n = 100000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::fabs(mean) < 0.02);
  CHECK(std::fabs(sd - 1.0) < 0.02);
}

TEST_CASE("shuffle is a deterministic permutation") {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> w = v;
  Rng a(3), b(3);
  a.shuffle(v);
  b.shuffle(w);
  CHECK(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> base(50);
  std::iota(base.begin(), base.end(), 0);
  CHECK(sorted == base);
}

}  // TEST_SUITE
