#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "survpfn/rng.hpp"

using namespace survpfn;

TEST_CASE("splitmix64 reference values") {
  // First outputs of the reference SplitMix64 generator seeded with 0.
  std::uint64_t state = 0;
  auto next = [&] {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  CHECK(next() == 0xE220A8397B1DCDAFULL);
  CHECK(splitmix64(0) == 0xE220A8397B1DCDAFULL);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xCBF29CE484222325ULL);
  CHECK(fnv1a64("a") == 0xAF63DC4C8601EC8CULL);
  const unsigned char bytes[] = {'f', 'o', 'o', 'b', 'a', 'r'};
  CHECK(fnv1a64_bytes(bytes) == fnv1a64("foobar"));
  CHECK(fnv1a64("foobar") == 0x85944171F73967E8ULL);
}

TEST_CASE("streams are stateless and reproducible") {
  const RngStream root{42, 0};
  CHECK(root.child(3) == root.child(3));
  CHECK(root.child("event") == root.child("event"));
  CHECK_FALSE(root.child(3) == root.child(4));
  CHECK_FALSE(root.child("event") == root.child("censor"));

  Rng a(root.child(1)), b(root.child(1));
  for (int i = 0; i < 100; ++i) REQUIRE(a() == b());

  // Drawing from a parent never changes what a child produces.
  Rng parent(root);
  for (int i = 0; i < 17; ++i) parent();
  Rng c(root.child(1));
  Rng d(RngStream{42, 0}.child(1));
  CHECK(c() == d());
}

TEST_CASE("distinct child streams look independent") {
  const RngStream root{7, 0};
  Rng a(root.child(0)), b(root.child(1));
  const int n = 20000;
  double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < n; ++i) {
    const double x = a.uniform(), y = b.uniform();
    sa += x;
    sb += y;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  const double cov = sab / n - (sa / n) * (sb / n);
  const double corr = cov / std::sqrt((saa / n - sa * sa / n / n) * (sbb / n - sb * sb / n / n));
  CHECK(std::abs(corr) < 0.03);
  CHECK(std::abs(sa / n - 0.5) < 0.01);
}

TEST_CASE("distribution helpers") {
  Rng rng(RngStream{1, 2});
  double s = 0, ss = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    ss += z * z;
  }
  CHECK(std::abs(s / n) < 0.02);
  CHECK(std::abs(ss / n - 1.0) < 0.03);

  std::set<std::int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto k = rng.uniform_int(-2, 3);
    REQUIRE(k >= -2);
    REQUIRE(k <= 3);
    seen.insert(k);
  }
  CHECK(seen.size() == 6);
  CHECK(rng.uniform_int(5, 5) == 5);

  for (int i = 0; i < 1000; ++i) {
    const double v = rng.log_uniform(1e-3, 0.3);
    REQUIRE(v >= 1e-3 * (1 - 1e-12));
    REQUIRE(v <= 0.3 * (1 + 1e-12));
    const double u = rng.uniform_open();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
  }

  const std::vector<double> w{0.0, 3.0, 1.0};
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 8000; ++i) ++counts[rng.categorical(w)];
  CHECK(counts[0] == 0);
  CHECK(std::abs(counts[1] / 8000.0 - 0.75) < 0.02);
}
