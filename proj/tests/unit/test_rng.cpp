#include "testing.hpp"

#include <array>

#include <cmath>
#include <set>

#include "forage/rng.hpp"

using namespace forage;

TEST_CASE("Rng.SameSeedSameStream") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) REQUIRE_EQ(a.bits(), b.bits());
}

TEST_CASE("Rng.DerivedSeedsDependOnOrderAndValue") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t g = 0; g < 50; ++g)
    for (std::uint64_t s = 0; s < 50; ++s) seen.insert(derive_seed({7, g, s}));
  CHECK_EQ(seen.size(), 2500u);
  CHECK_NE(derive_seed({1, 2}), derive_seed({2, 1}));
}

TEST_CASE("Rng.UniformStaysInUnitInterval") {
  Rng r(3);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    REQUIRE_GE(u, 0.0);
    REQUIRE_LT(u, 1.0);
    sum += u;
  }
  CHECK_NEAR(sum / n, 0.5, 0.005);
}

TEST_CASE("Rng.IndexCoversRangeEvenly") {
  Rng r(5);
  std::array<int, 7> counts{};
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[r.index(7)];
  for (int c : counts) CHECK_NEAR(c, n / 7.0, 5 * std::sqrt(n / 7.0));
}

TEST_CASE("Rng.NormalMoments") {
  Rng r(11);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    s += x;
    s2 += x * x;
  }
  CHECK_NEAR(s / n, 0.0, 0.01);
  CHECK_NEAR(s2 / n, 1.0, 0.02);
}

TEST_CASE("Rng.Fnv1aKnownVectors") {
  CHECK_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  CHECK_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  CHECK_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}
