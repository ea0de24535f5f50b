#include "fairlab/kernels.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

namespace fairlab::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double squared_distance_scalar(const double* a, const double* b,
                               std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* w, const double* b, const double* x, double* y,
                 std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    y[r] = (b != nullptr ? b[r] : 0.0) + dot_scalar(w + r * cols, x, cols);
  }
}

void gemv_t_acc_scalar(const double* w, const double* g, double* x_grad,
                       std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    if (g[r] != 0.0) axpy_scalar(g[r], w + r * cols, x_grad, cols);
  }
}

void outer_acc_scalar(const double* g, const double* x, double* w,
                      std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    if (g[r] != 0.0) axpy_scalar(g[r], x, w + r * cols, cols);
  }
}

void adam_scalar(double* param, const double* grad, double* m, double* v,
                 std::size_t n, double beta1, double beta2, double step_size,
                 double v_correction, double eps) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    param[i] -= step_size * m[i] / (std::sqrt(v[i] / v_correction) + eps);
  }
}

constexpr KernelTable kScalarTable{
    dot_scalar,       squared_distance_scalar, axpy_scalar, gemv_scalar,
    gemv_t_acc_scalar, outer_acc_scalar,       adam_scalar,
};

Isa detect() { return cpu_has_avx2() && avx2_table() != nullptr ? Isa::kAvx2 : Isa::kScalar; }

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

const KernelTable& scalar_table() { return kScalarTable; }

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (isa == Isa::kAvx2 && (!cpu_has_avx2() || avx2_table() == nullptr)) {
    throw std::invalid_argument("AVX2 kernels are not available on this host");
  }
  current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) {
  return isa == Isa::kAvx2 ? "avx2" : "scalar";
}

const KernelTable& active() {
  if (active_isa() == Isa::kAvx2) return *avx2_table();
  return kScalarTable;
}

}  // namespace fairlab::kernels
