#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"

#include "cfsm/graph.hpp"
#include "cfsm/rng.hpp"

using namespace cfsm;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (double& v : m.values()) v = nd(rng);
  return m;
}

// ½ Σ_ij W_ij ‖f_i − f_j‖² by direct loops.
double pair_energy(const Matrix& w, const Matrix& f) {
  double s = 0;
  for (std::size_t i = 0; i < f.rows(); ++i)
    for (std::size_t j = 0; j < f.rows(); ++j) {
      double d = 0;
      for (std::size_t c = 0; c < f.cols(); ++c) d += (f(i, c) - f(j, c)) * (f(i, c) - f(j, c));
      s += w(i, j) * d;
    }
  return 0.5 * s;
}

}  // namespace

TEST_CASE("three points on a line") {
  Matrix x{{0.0}, {1.0}, {3.0}};
  graph::GraphSpec spec;
  spec.k = 1;
  spec.sigma = 1.0;
  auto g = graph::build_similarity_graph(x, spec);
  CHECK(g.W(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  CHECK(g.W(1, 0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  CHECK(g.W(1, 2) == doctest::Approx(std::exp(-2.0)).epsilon(1e-15));
  CHECK(g.W(0, 2) == 0.0);
  CHECK(g.W(2, 0) == 0.0);
}

TEST_CASE("mutual neighbours drop one-sided edges") {
  Matrix x{{0.0}, {1.0}, {3.0}};
  graph::GraphSpec spec;
  spec.k = 1;
  spec.sigma = 1.0;
  spec.symmetrize = false;
  auto g = graph::build_similarity_graph(x, spec);
  CHECK(g.W(0, 1) > 0.0);
  CHECK(g.W(1, 2) == 0.0);
}

TEST_CASE("identical rows and far rows") {
  graph::GraphSpec spec;
  spec.k = 1;
  auto g = graph::build_similarity_graph(Matrix{{2.0, 1.0}, {2.0, 1.0}}, spec);
  CHECK(g.W(0, 1) == 1.0);
  spec.sigma = 1.0;
  auto far = graph::build_similarity_graph(Matrix{{0.0}, {1e3}}, spec);
  CHECK(far.W(0, 1) < 1e-300);
}

TEST_CASE("graph builder errors") {
  graph::GraphSpec spec;
  spec.k = 1;
  CHECK_THROWS_AS(graph::build_similarity_graph(Matrix{{1.0}}, spec), DataError);
  spec.k = 3;
  CHECK_THROWS_AS(graph::build_similarity_graph(Matrix{{1.0}, {2.0}, {3.0}}, spec), ContractError);
}

TEST_CASE("median bandwidth") {
  // distances 1, 3, 2 → median 2
  CHECK(graph::median_pairwise_distance(Matrix{{0.0}, {1.0}, {3.0}}) == 2.0);
  // distances 1, 2, 3, 1, 2, 1 → sorted 1,1,1,2,2,3 → (1+2)/2
  CHECK(graph::median_pairwise_distance(Matrix{{0.0}, {1.0}, {2.0}, {3.0}}) == 1.5);
}

TEST_CASE("laplacian by hand") {
  auto lap = graph::laplacian(Matrix{{0, 1}, {1, 0}}, false);
  CHECK(lap.L == Matrix{{1, -1}, {-1, 1}});
  CHECK(graph::laplacian(Matrix(3, 3), false).L == Matrix(3, 3));
  auto n = graph::laplacian(Matrix{{0, 2}, {2, 0}}, true);
  CHECK(n.L(0, 0) == 1.0);
  CHECK(n.L(0, 1) == doctest::Approx(-1.0));
}

TEST_CASE("laplacian rejects bad W") {
  CHECK_THROWS_AS(graph::laplacian(Matrix{{0, 1}, {2, 0}}, false), ContractError);
  CHECK_THROWS_AS(graph::laplacian(Matrix{{0, -1}, {-1, 0}}, false), ContractError);
}

TEST_CASE("graph loss examples") {
  ad::Tape t;
  auto lap = graph::laplacian(Matrix{{0, 1}, {1, 0}}, false);
  auto f = t.leaf(Matrix{{1, 0}, {0, 0}});
  CHECK(graph::graph_loss(f, lap).value().item() == doctest::Approx(1.0).epsilon(1e-15));
  auto same = t.leaf(Matrix{{0.3, -2.0}, {0.3, -2.0}});
  CHECK(std::abs(graph::graph_loss(same, lap).value().item()) < 1e-10);
  auto empty = graph::laplacian(Matrix(2, 2), false);
  CHECK(graph::graph_loss(f, empty).value().item() == 0.0);
  auto bad = t.leaf(Matrix(3, 2));
  CHECK_THROWS_AS(graph::graph_loss(bad, lap), DimensionError);
}

TEST_CASE("energy identity, row sums and PSD on random graphs") {
  Rng rng = make_stream(11, "test");
  std::uniform_int_distribution<std::size_t> nd(3, 32), kd(1, 6);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = nd(rng);
    Matrix basis = random_matrix(n, 3, rng), f = random_matrix(n, 4, rng);
    graph::GraphSpec spec;
    spec.k = std::min(kd(rng), n - 1);
    auto g = graph::build_similarity_graph(basis, spec);
    auto lap = graph::laplacian(g.W, false);
    CHECK(graph::graph_energy(f, lap.L) == doctest::Approx(pair_energy(g.W, f)).epsilon(1e-9));
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) s += lap.L(i, j);
      CHECK(std::abs(s) < 1e-10);
    }
    Matrix x = random_matrix(n, 1, rng);
    CHECK(graph::graph_energy(x, lap.L) >= -1e-10);
    CHECK(graph::graph_energy(x, graph::laplacian(g.W, true).L) >= -1e-10);
  }
}

TEST_CASE("permutation equivariance") {
  Rng rng = make_stream(12, "test");
  Matrix basis = random_matrix(10, 3, rng), f = random_matrix(10, 4, rng);
  std::vector<std::size_t> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  graph::GraphSpec spec;
  spec.k = 3;
  auto g = graph::build_similarity_graph(basis, spec);
  auto gp = graph::build_similarity_graph(basis.select_rows(perm), spec);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) CHECK(gp.W(i, j) == doctest::Approx(g.W(perm[i], perm[j])).epsilon(1e-14));
  double e = graph::graph_energy(f, graph::laplacian(g.W, false).L);
  double ep = graph::graph_energy(f.select_rows(perm), graph::laplacian(gp.W, false).L);
  CHECK(std::abs(e - ep) < 1e-10);
}

TEST_CASE("stop-gradient: no gradient reaches the basis") {
  Rng rng = make_stream(13, "test");
  Matrix bv = random_matrix(6, 2, rng), fv = random_matrix(6, 3, rng);
  graph::GraphSpec spec;
  spec.k = 2;
  auto g = graph::build_similarity_graph(bv, spec);
  auto lap = graph::laplacian(g.W, false);

  ad::Tape t;
  auto b = t.leaf(bv);
  auto f = t.leaf(fv);
  auto plain = graph::graph_loss(f, lap);
  auto through = graph::graph_loss_through_basis(f, b, g);
  CHECK(plain.value().item() == doctest::Approx(through.value().item()).epsilon(1e-12));
  t.backward(plain);
  CHECK(b.grad() == Matrix(6, 2));

  ad::Tape t2;
  auto b2 = t2.leaf(bv);
  auto f2 = t2.leaf(fv);
  t2.backward(graph::graph_loss_through_basis(f2, b2, g));
  CHECK(max_abs_diff(f2.grad(), f.grad()) < 1e-12);
  double norm = 0;
  for (double v : b2.grad().values()) norm += std::abs(v);
  CHECK(norm > 0.0);
}
