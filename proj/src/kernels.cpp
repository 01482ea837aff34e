#include "cfsm/kernels.hpp"

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cfsm::kernels {

namespace {

using Index = std::ptrdiff_t;

// Small problems stay on one thread; the fork/join cost dominates below this.
constexpr std::size_t kParallelMinWork = 1 << 15;

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.rows(), "matmul", a, b);
  const std::size_t n = a.rows(), m = b.cols(), k = a.cols();
  Matrix c(n, m);
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
#pragma omp parallel for schedule(static) if (n * m * k >= kParallelMinWork)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    double* crow = C + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.cols(), "matmul_nt", a, b);
  const std::size_t n = a.rows(), m = b.rows(), k = a.cols();
  Matrix c(n, m);
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
#pragma omp parallel for schedule(static) if (n * m * k >= kParallelMinWork)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const double* arow = A + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = B + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      C[i * m + j] = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows(), "matmul_tn", a, b);
  const std::size_t n = a.cols(), m = b.cols(), k = a.rows();
  Matrix c(n, m);
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  // Row i of the result accumulates A[p][i]·B[p][:] over p in increasing order.
#pragma omp parallel for schedule(static) if (n * m * k >= kParallelMinWork)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    double* crow = C + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double api = A[p * n + i];
      if (api == 0.0) continue;
      const double* brow = B + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += api * brow[j];
    }
  }
  return c;
}

Matrix pairwise_sq_dists(const Matrix& x) {
  const std::size_t n = x.rows(), d = x.cols();
  Matrix out(n, n);
  const double* X = x.data();
#pragma omp parallel for schedule(static) if (n * n * d >= kParallelMinWork)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (static_cast<std::size_t>(i) == j) continue;
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) {
        const double diff = X[i * d + p] - X[j * d + p];
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
  return out;
}

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.rows(), "matmul", a, b);
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) { return matmul(a, b.transposed()); }

Matrix matmul_tn(const Matrix& a, const Matrix& b) { return matmul(a.transposed(), b); }

Matrix pairwise_sq_dists(const Matrix& x) {
  const std::size_t n = x.rows();
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < x.cols(); ++p) {
        const double diff = x(i, p) - x(j, p);
        s += diff * diff;
      }
      out(i, j) = out(j, i) = s;
    }
  return out;
}

}  // namespace serial

}  // namespace cfsm::kernels
