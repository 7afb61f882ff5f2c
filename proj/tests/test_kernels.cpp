#include <vector>

#include <omp.h>

#include "doctest.h"
#include "helpers.hpp"
#include "mdrnn/kernels.hpp"

using namespace mdrnn;
namespace k = mdrnn::kernels;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = 2.0 * rng.uniform() - 1.0;
  return v;
}

struct Shape {
  std::size_t m, p, n;
};

// Small shapes stay serial inside the OpenMP kernels; the large ones cross
// the parallel threshold.
// The OpenMP kernels go serial on a single thread; force a team so the
// parallel loops run even on one core.
struct Threads {
  int saved = omp_get_max_threads();
  explicit Threads(int n) { omp_set_num_threads(n); }
  ~Threads() { omp_set_num_threads(saved); }
};

const Shape kShapes[] = {{1, 1, 1}, {3, 5, 7}, {17, 9, 33}, {300, 40, 120}, {64, 250, 64}};

}  // namespace

TEST_CASE("gemm variants: OpenMP equals serial bit-for-bit and matches the definition") {
  const Threads team(4);
  Rng rng(21);
  for (const auto& s : kShapes) {
    const auto a = random_values(s.m * s.p, rng);
    const auto b = random_values(s.p * s.n, rng);
    const auto bt = random_values(s.n * s.p, rng);
    const auto at = random_values(s.p * s.m, rng);
    const auto c0 = random_values(s.m * s.n, rng);

    auto c_ref = c0, c_omp = c0;
    k::ref::gemm_acc({a.data(), s.m, s.p}, {b.data(), s.p, s.n}, {c_ref.data(), s.m, s.n});
    k::omp::gemm_acc({a.data(), s.m, s.p}, {b.data(), s.p, s.n}, {c_omp.data(), s.m, s.n});
    CHECK(c_ref == c_omp);
    for (std::size_t i = 0; i < s.m; i += 7)
      for (std::size_t j = 0; j < s.n; j += 5) {
        double e = c0[i * s.n + j];
        for (std::size_t q = 0; q < s.p; ++q) e += a[i * s.p + q] * b[q * s.n + j];
        CHECK(c_ref[i * s.n + j] == doctest::Approx(e).epsilon(1e-12));
      }

    c_ref = c0;
    c_omp = c0;
    k::ref::gemm_bt_acc({a.data(), s.m, s.p}, {bt.data(), s.n, s.p}, {c_ref.data(), s.m, s.n});
    k::omp::gemm_bt_acc({a.data(), s.m, s.p}, {bt.data(), s.n, s.p}, {c_omp.data(), s.m, s.n});
    CHECK(c_ref == c_omp);
    for (std::size_t i = 0; i < s.m; i += 7)
      for (std::size_t j = 0; j < s.n; j += 5) {
        double e = c0[i * s.n + j];
        for (std::size_t q = 0; q < s.p; ++q) e += a[i * s.p + q] * bt[j * s.p + q];
        CHECK(c_ref[i * s.n + j] == doctest::Approx(e).epsilon(1e-12));
      }

    c_ref = c0;
    c_omp = c0;
    k::ref::gemm_at_acc({at.data(), s.p, s.m}, {b.data(), s.p, s.n}, {c_ref.data(), s.m, s.n});
    k::omp::gemm_at_acc({at.data(), s.p, s.m}, {b.data(), s.p, s.n}, {c_omp.data(), s.m, s.n});
    CHECK(c_ref == c_omp);
    for (std::size_t i = 0; i < s.m; i += 7)
      for (std::size_t j = 0; j < s.n; j += 5) {
        double e = c0[i * s.n + j];
        for (std::size_t q = 0; q < s.p; ++q) e += at[q * s.m + i] * b[q * s.n + j];
        CHECK(c_ref[i * s.n + j] == doctest::Approx(e).epsilon(1e-12));
      }
  }
}

TEST_CASE("elementwise kernels: OpenMP equals serial bit-for-bit") {
  const Threads team(4);
  Rng rng(22);
  for (std::size_t n : {1u, 10u, 5000u, 70000u}) {
    const auto a = random_values(n, rng);
    const auto b = random_values(n, rng);
    const auto c = random_values(n, rng);
    std::vector<double> r(n), o(n);

    k::ref::multiply(a, b, r);
    k::omp::multiply(a, b, o);
    CHECK(r == o);
    k::ref::scale(a, 0.37, r);
    k::omp::scale(a, 0.37, o);
    CHECK(r == o);
    const double* ins[] = {a.data(), b.data(), c.data()};
    k::ref::sum_tanh(ins, r);
    k::omp::sum_tanh(ins, o);
    CHECK(r == o);
    CHECK(r[0] == std::tanh(a[0] + b[0] + c[0]));
  }
}

TEST_CASE("row kernels: OpenMP equals serial bit-for-bit") {
  const Threads team(4);
  Rng rng(23);
  for (const auto& s : kShapes) {
    const auto a = random_values(s.m * s.n, rng);
    const auto bias = random_values(s.n, rng);
    auto r = random_values(s.m * s.n, rng);
    auto o = r;
    k::ref::add_row_bias(bias, {r.data(), s.m, s.n});
    k::omp::add_row_bias(bias, {o.data(), s.m, s.n});
    CHECK(r == o);

    std::vector<double> sr(s.n, 1.0), so(s.n, 1.0);
    k::ref::column_sums_acc({a.data(), s.m, s.n}, sr);
    k::omp::column_sums_acc({a.data(), s.m, s.n}, so);
    CHECK(sr == so);

    std::vector<double> pr(s.m * s.n), po(s.m * s.n);
    k::ref::softmax_rows({a.data(), s.m, s.n}, {pr.data(), s.m, s.n});
    k::omp::softmax_rows({a.data(), s.m, s.n}, {po.data(), s.m, s.n});
    CHECK(pr == po);
    double total = 0.0;
    for (std::size_t j = 0; j < s.n; ++j) total += pr[j];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("backend dispatch and scoped override") {
  CHECK(k::backend() == k::Backend::OpenMP);
  {
    k::ScopedBackend serial(k::Backend::Serial);
    CHECK(k::backend() == k::Backend::Serial);
  }
  CHECK(k::backend() == k::Backend::OpenMP);
}
