#include "mdrnn/kernels.hpp"

#include <atomic>

namespace mdrnn::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::OpenMP};
bool use_omp() { return g_backend.load(std::memory_order_relaxed) == Backend::OpenMP; }
}  // namespace

void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }
Backend backend() { return g_backend.load(std::memory_order_relaxed); }

void gemm_acc(ConstMat a, ConstMat b, Mat c) {
  use_omp() ? omp::gemm_acc(a, b, c) : ref::gemm_acc(a, b, c);
}
void gemm_bt_acc(ConstMat a, ConstMat b, Mat c) {
  use_omp() ? omp::gemm_bt_acc(a, b, c) : ref::gemm_bt_acc(a, b, c);
}
void gemm_at_acc(ConstMat a, ConstMat b, Mat c) {
  use_omp() ? omp::gemm_at_acc(a, b, c) : ref::gemm_at_acc(a, b, c);
}
void add_row_bias(std::span<const double> bias, Mat c) {
  use_omp() ? omp::add_row_bias(bias, c) : ref::add_row_bias(bias, c);
}
void column_sums_acc(ConstMat a, std::span<double> out) {
  use_omp() ? omp::column_sums_acc(a, out) : ref::column_sums_acc(a, out);
}
void sum_tanh(std::span<const double* const> inputs, std::span<double> out) {
  use_omp() ? omp::sum_tanh(inputs, out) : ref::sum_tanh(inputs, out);
}
void multiply(std::span<const double> a, std::span<const double> b, std::span<double> out) {
  use_omp() ? omp::multiply(a, b, out) : ref::multiply(a, b, out);
}
void scale(std::span<const double> a, double s, std::span<double> out) {
  use_omp() ? omp::scale(a, s, out) : ref::scale(a, s, out);
}
void softmax_rows(ConstMat logits, Mat out) {
  use_omp() ? omp::softmax_rows(logits, out) : ref::softmax_rows(logits, out);
}

}  // namespace mdrnn::kernels
