#pragma once

#include <cstddef>
#include <optional>

#include "cfsm/matrix.hpp"
#include "cfsm/tape.hpp"

namespace cfsm::graph {

/// kNN heat-kernel graph configuration. An unset bandwidth means "median
/// pairwise distance of the batch".
struct GraphSpec {
  std::size_t k = 8;
  std::optional<double> sigma;
  bool normalized = false;
  bool symmetrize = true;  // false keeps mutual neighbours only
  /// Divide Tr(FᵀLF) by the batch size.
  bool normalize_by_n = false;
  /// Let gradients reach the activations the graph was built on.
  bool full_gradient = false;

  void validate() const;
};

struct Laplacian {
  Matrix L;
  Matrix W;
};

/// Result of graph construction with the discrete choices it made, so the
/// same graph can be re-used when probing a loss with finite differences.
struct BuiltGraph {
  Matrix W;
  Matrix mask;  // 1 where an edge exists
  double sigma = 1.0;
  std::size_t k = 1;
};

double median_pairwise_distance(const Matrix& x);

/// Throws DataError for N < 2 and ContractError for k ≥ N or an invalid spec.
/// (The training objective clamps k to N−1 before calling.)
BuiltGraph build_similarity_graph(const Matrix& x, const GraphSpec& spec);

Laplacian laplacian(const Matrix& w, bool normalized);

/// Tr(FᵀLF) on plain values.
double graph_energy(const Matrix& f, const Matrix& l);

/// Tr(FᵀLF) on the tape with L held constant.
ad::Var graph_loss(ad::Var f, const Laplacian& lap);

/// ½ Σ_ij W_ij ‖f_i − f_j‖² with W rebuilt on the tape from `basis` under the
/// edge mask and bandwidth already chosen in `g`. Equal in value to
/// graph_loss with the unnormalized Laplacian, but differentiable in `basis`.
ad::Var graph_loss_through_basis(ad::Var f, ad::Var basis, const BuiltGraph& g);

}  // namespace cfsm::graph
