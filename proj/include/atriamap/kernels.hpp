#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Dense double-precision kernels used by the RBM and VAE inner loops. Every
// kernel has a scalar reference implementation; an AVX2/FMA variant is
// compiled on x86-64 and selected at startup when the CPU supports it.
// Matrices are row-major.
namespace atriamap::kernels {

enum class Backend { Scalar, Avx2 };

struct KernelTable {
  /// sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  /// y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  /// y = a * x + b * y
  void (*axpby)(double a, const double* x, double b, double* y, std::size_t n);
  /// y = A x, A is rows x cols
  void (*gemv)(const double* A, std::size_t rows, std::size_t cols, const double* x, double* y);
  /// y += A^T x, A is rows x cols; rows with x[i] == 0 are skipped
  void (*gemv_t_acc)(const double* A, std::size_t rows, std::size_t cols, const double* x, double* y);
  /// A += alpha * u v^T, A is rows x cols
  void (*ger)(double* A, std::size_t rows, std::size_t cols, double alpha, const double* u,
              const double* v);
};

const KernelTable& scalar_table();
/// Null when the variant was not compiled in or the CPU lacks the features.
const KernelTable* avx2_table();

bool available(Backend b);
Backend active_backend();
/// Throws std::invalid_argument if the backend is unavailable.
void set_backend(Backend b);
const KernelTable& active();

std::string_view to_string(Backend b);
Backend parse_backend(std::string_view name);  // "scalar", "avx2", "auto"

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}
inline void axpby(double a, std::span<const double> x, double b, std::span<double> y) {
  active().axpby(a, x.data(), b, y.data(), x.size());
}
inline void gemv(std::span<const double> A, std::size_t rows, std::size_t cols,
                 std::span<const double> x, std::span<double> y) {
  active().gemv(A.data(), rows, cols, x.data(), y.data());
}
inline void gemv_t_acc(std::span<const double> A, std::size_t rows, std::size_t cols,
                       std::span<const double> x, std::span<double> y) {
  active().gemv_t_acc(A.data(), rows, cols, x.data(), y.data());
}
inline void ger(std::span<double> A, std::size_t rows, std::size_t cols, double alpha,
                std::span<const double> u, std::span<const double> v) {
  active().ger(A.data(), rows, cols, alpha, u.data(), v.data());
}

}  // namespace atriamap::kernels
