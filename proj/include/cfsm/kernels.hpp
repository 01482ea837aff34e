#pragma once

#include "cfsm/matrix.hpp"

// Dense kernels behind the tape and the graph builder. The default versions
// split work over output rows with OpenMP; each output element is reduced in
// the same order regardless of thread count, so results are bitwise stable.
// kernels::serial holds straightforward reference loops used by the tests and
// the benchmark.
namespace cfsm::kernels {

Matrix matmul(const Matrix& a, const Matrix& b);     // A·B
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // A·Bᵀ
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // Aᵀ·B

/// D_ij = ‖x_i − x_j‖², exact zeros on the diagonal.
Matrix pairwise_sq_dists(const Matrix& x);

/// Current OpenMP thread budget (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

namespace serial {
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix pairwise_sq_dists(const Matrix& x);
}  // namespace serial

}  // namespace cfsm::kernels
