#include <algorithm>
#include <cmath>

#include <omp.h>

#include "mdrnn/kernels.hpp"

// Each parallel loop owns disjoint output elements and walks the reduction
// index in the same order as the serial reference.

namespace mdrnn::kernels::omp {

namespace {
// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kMinParallelWork = 1 << 14;

bool worth_parallel(std::size_t work) { return work >= kMinParallelWork && omp_get_max_threads() > 1; }

long as_long(std::size_t n) { return static_cast<long>(n); }
}  // namespace

void gemm_acc(ConstMat a, ConstMat b, Mat c) {
  if (!worth_parallel(a.rows * a.cols * b.cols)) return ref::gemm_acc(a, b, c);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < as_long(a.rows); ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (std::size_t p = 0; p < a.cols; ++p) {
      const double aip = ai[p];
      const double* bp = b.row(p);
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_bt_acc(ConstMat a, ConstMat b, Mat c) {
  if (!worth_parallel(a.rows * a.cols * b.rows)) return ref::gemm_bt_acc(a, b, c);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < as_long(a.rows); ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

void gemm_at_acc(ConstMat a, ConstMat b, Mat c) {
  if (!worth_parallel(a.rows * a.cols * b.cols)) return ref::gemm_at_acc(a, b, c);
#pragma omp parallel for schedule(static)
  for (long k = 0; k < as_long(a.cols); ++k) {
    double* ck = c.row(k);
    for (std::size_t n = 0; n < a.rows; ++n) {
      const double ank = a.row(n)[k];
      const double* bn = b.row(n);
      for (std::size_t m = 0; m < b.cols; ++m) ck[m] += ank * bn[m];
    }
  }
}

void add_row_bias(std::span<const double> bias, Mat c) {
  if (!worth_parallel(c.rows * c.cols)) return ref::add_row_bias(bias, c);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < as_long(c.rows); ++i) {
    double* ci = c.row(i);
    for (std::size_t j = 0; j < c.cols; ++j) ci[j] += bias[j];
  }
}

void column_sums_acc(ConstMat a, std::span<double> out) {
  if (!worth_parallel(a.rows * a.cols)) return ref::column_sums_acc(a, out);
#pragma omp parallel for schedule(static)
  for (long j = 0; j < as_long(a.cols); ++j) {
    double s = out[j];
    for (std::size_t i = 0; i < a.rows; ++i) s += a.row(i)[j];
    out[j] = s;
  }
}

void sum_tanh(std::span<const double* const> inputs, std::span<double> out) {
  if (!worth_parallel(out.size() * inputs.size())) return ref::sum_tanh(inputs, out);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < as_long(out.size()); ++i) {
    double s = 0.0;
    for (const double* in : inputs) s += in[i];
    out[i] = std::tanh(s);
  }
}

void multiply(std::span<const double> a, std::span<const double> b, std::span<double> out) {
  if (!worth_parallel(out.size())) return ref::multiply(a, b, out);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < as_long(out.size()); ++i) out[i] = a[i] * b[i];
}

void scale(std::span<const double> a, double s, std::span<double> out) {
  if (!worth_parallel(out.size())) return ref::scale(a, s, out);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < as_long(out.size()); ++i) out[i] = s * a[i];
}

void softmax_rows(ConstMat logits, Mat out) {
  if (!worth_parallel(logits.rows * logits.cols)) return ref::softmax_rows(logits, out);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < as_long(logits.rows); ++i) {
    const double* x = logits.row(i);
    double* y = out.row(i);
    const double m = *std::max_element(x, x + logits.cols);
    double z = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      y[j] = std::exp(x[j] - m);
      z += y[j];
    }
    for (std::size_t j = 0; j < logits.cols; ++j) y[j] /= z;
  }
}

}  // namespace mdrnn::kernels::omp
