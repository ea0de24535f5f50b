#pragma once

// Dense double-precision inner loops shared by every trainer.
//
// Each kernel has a portable scalar reference and an AVX2+FMA variant. The
// variant is chosen once at startup from CPUID; tests pin either path with
// ScopedIsa and check that both agree.

#include <cstddef>
#include <span>
#include <string_view>

namespace fairlab::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y = W x + b   (W is rows x cols, row-major; b may be null)
  void (*gemv)(const double* w, const double* b, const double* x, double* y,
               std::size_t rows, std::size_t cols);
  // x_grad += W^T g
  void (*gemv_t_acc)(const double* w, const double* g, double* x_grad,
                     std::size_t rows, std::size_t cols);
  // W += g x^T
  void (*outer_acc)(const double* g, const double* x, double* w,
                    std::size_t rows, std::size_t cols);
  // Adam moment update and parameter step; step_size already includes the
  // bias correction of the first moment, v_correction is 1 - beta2^t.
  void (*adam)(double* param, const double* grad, double* m, double* v,
               std::size_t n, double beta1, double beta2, double step_size,
               double v_correction, double eps);
};

const KernelTable& scalar_table();
// Null when the build has no AVX2 translation unit.
const KernelTable* avx2_table();

bool cpu_has_avx2();
Isa active_isa();
void set_isa(Isa isa);  // throws std::invalid_argument if unsupported
std::string_view isa_name(Isa isa);

const KernelTable& active();

// Pins the dispatch for the lifetime of the object.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { set_isa(isa); }
  ~ScopedIsa() { set_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

// Span-level conveniences over the active table.
inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline double squared_distance(std::span<const double> a,
                               std::span<const double> b) {
  return active().squared_distance(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace fairlab::kernels
