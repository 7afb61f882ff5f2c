#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mdrnn/numerics.hpp"

using namespace mdrnn;

TEST_CASE("tensor shape and volume agree") {
  Tensor t({2, 3, 4}, 1.5);
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK(t[23] == 1.5);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("ensure_finite rejects NaN and infinity") {
  Tensor t({3});
  CHECK_NOTHROW(ensure_finite(t, "t"));
  t[1] = std::nan("");
  CHECK_THROWS_AS(ensure_finite(t, "t"), NumericalError);
  t[1] = INFINITY;
  CHECK_THROWS_AS(ensure_finite(t, "t"), NumericalError);
}

TEST_CASE("gaussian_fill moments") {
  Rng rng(7);
  Tensor t({100000});
  gaussian_fill(t, 0.0, 1e-2, rng);
  const double n = static_cast<double>(t.size());
  const double mean = std::accumulate(t.values().begin(), t.values().end(), 0.0) / n;
  double var = 0.0;
  for (double v : t.values()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  CHECK(std::abs(mean) < 3 * 1e-2 / std::sqrt(n));
  CHECK(std::abs(sd - 1e-2) < 0.02 * 1e-2);
}

TEST_CASE("gaussian_fill edge cases") {
  Rng rng(1);
  Tensor t({1000});
  gaussian_fill(t, 3.0, 1e-9, rng);
  for (double v : t.values()) CHECK(std::abs(v - 3.0) <= 1e-8);
  CHECK_THROWS_AS(gaussian_fill(t, 0.0, 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_fill(t, 0.0, -1.0, rng), std::invalid_argument);

  Rng a(42), b(42);
  Tensor x({64}), y({64});
  gaussian_fill(x, 0.0, 1.0, a);
  gaussian_fill(y, 0.0, 1.0, b);
  CHECK(x == y);
}

TEST_CASE("bernoulli_mask") {
  Rng rng(3);
  const Tensor ones = bernoulli_mask({50}, 1.0, rng);
  for (double v : ones.values()) CHECK(v == 1.0);

  const Tensor m = bernoulli_mask({100000}, 0.5, rng);
  double k = 0.0;
  for (double v : m.values()) {
    CHECK((v == 0.0 || v == 1.0));
    k += v;
  }
  const double frac = k / 1e5;
  CHECK(frac >= 0.49);
  CHECK(frac <= 0.51);
  // Chi-square with one degree of freedom; 10.83 is the 0.001 critical value.
  const double e = 5e4;
  const double chi2 = (k - e) * (k - e) / e + ((1e5 - k) - e) * ((1e5 - k) - e) / e;
  CHECK(chi2 < 10.83);

  Rng a(9), b(9);
  CHECK(bernoulli_mask({128}, 0.5, a) == bernoulli_mask({128}, 0.5, b));
  CHECK_THROWS_AS(bernoulli_mask({4}, 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(bernoulli_mask({4}, 1.5, rng), std::invalid_argument);
}

TEST_CASE("log_sum_exp") {
  const double h = std::log(0.5);
  CHECK(std::abs(log_sum_exp(std::vector<double>{h, h})) < 1e-15);
  CHECK(log_sum_exp(std::vector<double>{-1000, -1000}) == doctest::Approx(-1000 + std::log(2.0)).epsilon(1e-15));
  CHECK(log_sum_exp(std::vector<double>{kLogZero, 1.25}) == 1.25);
  CHECK(log_sum_exp(std::vector<double>{kLogZero, kLogZero}) == kLogZero);
  CHECK(std::isfinite(log_sum_exp(std::vector<double>{700, 699})));
  CHECK_THROWS_AS(log_sum_exp(std::vector<double>{}), std::invalid_argument);
  CHECK(log_add(kLogZero, -3.0) == -3.0);
}

TEST_CASE("log_sum_exp shift invariance") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + rng.below(8));
    for (double& x : v) x = 40.0 * (rng.uniform() - 0.5);
    const double c = 600.0 * (rng.uniform() - 0.5);
    std::vector<double> w = v;
    for (double& x : w) x += c;
    CHECK(log_sum_exp(w) == doctest::Approx(log_sum_exp(v) + c).epsilon(1e-12));
  }
}

TEST_CASE("rng streams are independent and reproducible") {
  Rng base(5);
  Rng s1 = base.stream("dropout");
  Rng s2 = base.stream("shuffle");
  Rng s1b = base.stream("dropout");
  CHECK(base.counter() == 0);
  CHECK(s1.key() != s2.key());
  for (int i = 0; i < 10; ++i) CHECK(s1.next_u64() == s1b.next_u64());
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) ++counts[s2.below(7)];
  for (int c : counts) CHECK(c > 800);
}
