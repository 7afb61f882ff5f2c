#include <algorithm>
#include <cmath>

#include "mdrnn/kernels.hpp"

namespace mdrnn::kernels::ref {

void gemm_acc(ConstMat a, ConstMat b, Mat c) {
  for (std::size_t i = 0; i < a.rows; ++i) {
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
  for (std::size_t i = 0; i < a.rows; ++i) {
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
  for (std::size_t n = 0; n < a.rows; ++n) {
    const double* an = a.row(n);
    const double* bn = b.row(n);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double ank = an[k];
      double* ck = c.row(k);
      for (std::size_t m = 0; m < b.cols; ++m) ck[m] += ank * bn[m];
    }
  }
}

void add_row_bias(std::span<const double> bias, Mat c) {
  for (std::size_t i = 0; i < c.rows; ++i) {
    double* ci = c.row(i);
    for (std::size_t j = 0; j < c.cols; ++j) ci[j] += bias[j];
  }
}

void column_sums_acc(ConstMat a, std::span<double> out) {
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    for (std::size_t j = 0; j < a.cols; ++j) out[j] += ai[j];
  }
}

void sum_tanh(std::span<const double* const> inputs, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (const double* in : inputs) s += in[i];
    out[i] = std::tanh(s);
  }
}

void multiply(std::span<const double> a, std::span<const double> b, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
}

void scale(std::span<const double> a, double s, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a[i];
}

void softmax_rows(ConstMat logits, Mat out) {
  for (std::size_t i = 0; i < logits.rows; ++i) {
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

}  // namespace mdrnn::kernels::ref
