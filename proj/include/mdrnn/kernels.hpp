#pragma once

// Dense kernels behind every layer. Each kernel exists twice: a plain serial
// reference (`ref`) and an OpenMP version (`omp`) that partitions output
// elements across threads but accumulates every element in the same order, so
// the two agree bit-for-bit. The unqualified entry points dispatch on the
// process-wide backend.

#include <cstddef>
#include <span>

namespace mdrnn::kernels {

/// Row-major matrix view.
struct Mat {
  double* data;
  std::size_t rows;
  std::size_t cols;
  double* row(std::size_t r) const { return data + r * cols; }
};

struct ConstMat {
  const double* data;
  std::size_t rows;
  std::size_t cols;
  ConstMat(const double* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {}
  ConstMat(Mat m) : data(m.data), rows(m.rows), cols(m.cols) {}  // NOLINT
  const double* row(std::size_t r) const { return data + r * cols; }
};

enum class Backend { Serial, OpenMP };

void set_backend(Backend backend);
Backend backend();

/// RAII backend override, restored on scope exit.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : saved_(backend()) { set_backend(b); }
  ~ScopedBackend() { set_backend(saved_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend saved_;
};

// c += a * b
void gemm_acc(ConstMat a, ConstMat b, Mat c);
// c += a * b^T
void gemm_bt_acc(ConstMat a, ConstMat b, Mat c);
// c += a^T * b
void gemm_at_acc(ConstMat a, ConstMat b, Mat c);
void add_row_bias(std::span<const double> bias, Mat c);
void column_sums_acc(ConstMat a, std::span<double> out);
// out = tanh(sum of inputs)
void sum_tanh(std::span<const double* const> inputs, std::span<double> out);
void multiply(std::span<const double> a, std::span<const double> b, std::span<double> out);
void scale(std::span<const double> a, double s, std::span<double> out);
// Row-wise softmax with max subtraction.
void softmax_rows(ConstMat logits, Mat out);

namespace ref {
void gemm_acc(ConstMat a, ConstMat b, Mat c);
void gemm_bt_acc(ConstMat a, ConstMat b, Mat c);
void gemm_at_acc(ConstMat a, ConstMat b, Mat c);
void add_row_bias(std::span<const double> bias, Mat c);
void column_sums_acc(ConstMat a, std::span<double> out);
void sum_tanh(std::span<const double* const> inputs, std::span<double> out);
void multiply(std::span<const double> a, std::span<const double> b, std::span<double> out);
void scale(std::span<const double> a, double s, std::span<double> out);
void softmax_rows(ConstMat logits, Mat out);
}  // namespace ref

namespace omp {
void gemm_acc(ConstMat a, ConstMat b, Mat c);
void gemm_bt_acc(ConstMat a, ConstMat b, Mat c);
void gemm_at_acc(ConstMat a, ConstMat b, Mat c);
void add_row_bias(std::span<const double> bias, Mat c);
void column_sums_acc(ConstMat a, std::span<double> out);
void sum_tanh(std::span<const double* const> inputs, std::span<double> out);
void multiply(std::span<const double> a, std::span<const double> b, std::span<double> out);
void scale(std::span<const double> a, double s, std::span<double> out);
void softmax_rows(ConstMat logits, Mat out);
}  // namespace omp

}  // namespace mdrnn::kernels
