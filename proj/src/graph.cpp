#include "cfsm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cfsm/kernels.hpp"

namespace cfsm::graph {

void GraphSpec::validate() const {
  if (k < 1) throw ContractError("graph spec: k must be >= 1");
  if (sigma && !(*sigma > 0.0)) throw ContractError("graph spec: sigma must be > 0");
  if (full_gradient && normalized)
    throw ConfigError("graph spec: full_gradient is only defined for the unnormalized Laplacian");
}

double median_pairwise_distance(const Matrix& x) {
  const Matrix d2 = kernels::pairwise_sq_dists(x);
  std::vector<double> d;
  d.reserve(x.rows() * (x.rows() - 1) / 2);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = i + 1; j < x.rows(); ++j) d.push_back(std::sqrt(d2(i, j)));
  if (d.empty()) return 0.0;
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + mid, d.end());
  double m = d[mid];
  if (d.size() % 2 == 0) {
    const double lower = *std::max_element(d.begin(), d.begin() + mid);
    m = 0.5 * (m + lower);
  }
  return m;
}

BuiltGraph build_similarity_graph(const Matrix& x, const GraphSpec& spec) {
  spec.validate();
  const std::size_t n = x.rows();
  if (n < 2) throw DataError("similarity graph needs at least 2 rows, got " + std::to_string(n));
  if (spec.k >= n) {
    throw ContractError("graph spec: k=" + std::to_string(spec.k) +
                        " must be smaller than the batch size " + std::to_string(n));
  }

  const Matrix d2 = kernels::pairwise_sq_dists(x);
  double sigma = spec.sigma.value_or(0.0);
  if (!spec.sigma) {
    sigma = median_pairwise_distance(x);
    if (!(sigma > 0.0)) sigma = 1.0;  // all rows coincide; any bandwidth gives weight 1
  }

  BuiltGraph g;
  g.sigma = sigma;
  g.k = spec.k;
  g.mask = Matrix(n, n);
  g.W = Matrix(n, n);

  std::vector<std::size_t> order;
  Matrix knn(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    order.erase(order.begin() + static_cast<std::ptrdiff_t>(i));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.k),
                      order.end(), [&](std::size_t a, std::size_t b) {
                        if (d2(i, a) != d2(i, b)) return d2(i, a) < d2(i, b);
                        return a < b;
                      });
    for (std::size_t r = 0; r < spec.k; ++r) knn(i, order[r]) = 1.0;
  }
  // Either direction (symmetrize) or mutual neighbours only.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const bool edge = spec.symmetrize ? (knn(i, j) != 0.0 || knn(j, i) != 0.0)
                                        : (knn(i, j) != 0.0 && knn(j, i) != 0.0);
      if (edge) g.mask(i, j) = 1.0;
    }

  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (g.mask(i, j) != 0.0) g.W(i, j) = std::exp(-d2(i, j) * inv);
  return g;
}

Laplacian laplacian(const Matrix& w, bool normalized) {
  if (w.rows() != w.cols()) throw ContractError("laplacian: W must be square, got " + w.shape_str());
  const std::size_t n = w.rows();
  for (std::size_t i = 0; i < n; ++i) {
    if (w(i, i) != 0.0) throw ContractError("laplacian: W must have a zero diagonal");
    for (std::size_t j = 0; j < n; ++j) {
      if (w(i, j) < 0.0) throw ContractError("laplacian: W has a negative weight");
      if (w(i, j) != w(j, i)) throw ContractError("laplacian: W is not symmetric");
    }
  }

  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) deg[i] += w(i, j);

  Laplacian out{Matrix(n, n), w};
  if (!normalized) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) out.L(i, j) = -w(i, j);
      out.L(i, i) = deg[i];
    }
    return out;
  }
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (deg[i] > 0.0) inv_sqrt[i] = 1.0 / std::sqrt(deg[i]);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.L(i, j) = -inv_sqrt[i] * w(i, j) * inv_sqrt[j];
    out.L(i, i) = 1.0;
  }
  return out;
}

double graph_energy(const Matrix& f, const Matrix& l) {
  require_shape(f.rows() == l.rows() && l.rows() == l.cols(), "graph_energy", f, l);
  const Matrix lf = kernels::matmul(l, f);
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += f.values()[i] * lf.values()[i];
  return s;
}

ad::Var graph_loss(ad::Var f, const Laplacian& lap) {
  require_shape(f.rows() == lap.L.rows(), "graph_loss", f.value(), lap.L);
  ad::Var l = f.tape().constant(lap.L);
  return ad::sum(ad::mul(f, ad::matmul(l, f)));
}

ad::Var graph_loss_through_basis(ad::Var f, ad::Var basis, const BuiltGraph& g) {
  require_shape(f.rows() == basis.rows() && f.rows() == g.mask.rows(), "graph_loss_through_basis",
                f.value(), basis.value());
  ad::Tape& t = f.tape();
  ad::Var mask = t.constant(g.mask);
  ad::Var kernel = ad::exp(ad::scale(ad::pairwise_sq_dists(basis), -1.0 / (2.0 * g.sigma * g.sigma)));
  ad::Var w = ad::mul(mask, kernel);
  return ad::scale(ad::sum(ad::mul(w, ad::pairwise_sq_dists(f))), 0.5);
}

}  // namespace cfsm::graph
