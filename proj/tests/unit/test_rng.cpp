#include <doctest.h>

#include <cmath>
#include <vector>

#include "core/rng.hpp"

using namespace pfc;

TEST_CASE("philox4x32-10 known-answer vectors") {
  CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) ==
        PhiloxCounter{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                      {0xffffffff, 0xffffffff}) ==
        PhiloxCounter{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                      {0xa4093822, 0x299f31d0}) ==
        PhiloxCounter{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("first uniform is built from the first two words of block 0") {
  RandomStream rs(0, 0, 0);
  const std::uint64_t hi = 0x6627e8d5u >> 5, lo = 0xe169c58du >> 6;
  const double expected = (static_cast<double>((hi << 26) | lo) + 0.5) * 0x1.0p-53;
  CHECK(rs.uniform() == expected);
}

TEST_CASE("streams are reproducible and distinct") {
  RandomStream a(42, 7, 1), b(42, 7, 1), c(42, 8, 1), d(42, 7, 2), e(43, 7, 1);
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform();
    CHECK(x == b.uniform());
    CHECK(x != c.uniform());
    CHECK(x != d.uniform());
    CHECK(x != e.uniform());
  }
}

TEST_CASE("uniforms lie in the open unit interval with the right moments") {
  RandomStream rs(2024, 3);
  const int n = 200000;
  double sum = 0, sumsq = 0;
  int outside = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rs.uniform();
    outside += !(u > 0.0 && u < 1.0);
    sum += u;
    sumsq += u * u;
  }
  const double mean = sum / n, var = sumsq / n - mean * mean;
  CHECK(outside == 0);
  // 5 standard errors.
  CHECK(std::abs(mean - 0.5) < 5 * std::sqrt(1.0 / 12 / n));
  CHECK(std::abs(var - 1.0 / 12) < 5 * std::sqrt(1.0 / 180 / n));
}

TEST_CASE("normals have unit variance and no lag-1 correlation") {
  RandomStream rs(99, 0);
  const int n = 200000;
  std::vector<double> z(n);
  for (auto& v : z) v = rs.normal();
  double m = 0, v2 = 0, c1 = 0, k4 = 0;
  for (double x : z) m += x;
  m /= n;
  for (int i = 0; i < n; ++i) {
    v2 += (z[i] - m) * (z[i] - m);
    k4 += std::pow(z[i] - m, 4);
    if (i > 0) c1 += (z[i] - m) * (z[i - 1] - m);
  }
  v2 /= n;
  k4 /= n;
  c1 /= n;
  CHECK(std::abs(m) < 5 / std::sqrt(n));
  CHECK(std::abs(v2 - 1.0) < 5 * std::sqrt(2.0 / n));
  CHECK(std::abs(k4 / (v2 * v2) - 3.0) < 5 * std::sqrt(24.0 / n));
  CHECK(std::abs(c1) < 5 / std::sqrt(n));
}

TEST_CASE("normal(mean, sd) shifts and scales") {
  RandomStream a(5, 1), b(5, 1);
  for (int i = 0; i < 10; ++i) CHECK(a.normal(2.0, 3.0) == doctest::Approx(2.0 + 3.0 * b.normal()));
}

TEST_CASE("derived seeds differ across indices") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(1, 5) == derive_seed(1, 5));
}
