#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"

#include "cfsm/log.hpp"
#include "cfsm/losses.hpp"
#include "cfsm/rng.hpp"

using namespace cfsm;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (double& v : m.values()) v = nd(rng);
  return m;
}

double value_of(const std::function<ad::Var(ad::Tape&)>& fn) {
  ad::Tape t;
  return fn(t).value().item();
}

double xent(const Matrix& logits, const std::vector<int>& labels, double eps) {
  return value_of([&](ad::Tape& t) { return losses::supervised_xent(t.constant(logits), labels, eps); });
}

double fent(const Matrix& fc, bool binary = false) {
  return value_of([&](ad::Tape& t) { return losses::factorisation_entropy(t.constant(fc), binary); });
}

// Batch-hard hinge by exhaustive search over every anchor/positive/negative.
double brute_triplet(const Matrix& f, const std::vector<int>& y, double m) {
  auto d = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t c = 0; c < f.cols(); ++c) s += (f(i, c) - f(j, c)) * (f(i, c) - f(j, c));
    return std::sqrt(s);
  };
  double total = 0;
  int count = 0;
  for (std::size_t a = 0; a < f.rows(); ++a) {
    double dp = -1, dn = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < f.rows(); ++j) {
      if (j == a) continue;
      if (y[j] == y[a]) dp = std::max(dp, d(a, j));
      else dn = std::min(dn, d(a, j));
    }
    if (dp < 0 || std::isinf(dn)) continue;
    total += std::max(0.0, dp - dn + m);
    ++count;
  }
  return count ? total / count : 0.0;
}

data::Batch mixed_batch(Rng& rng, std::size_t per_domain, std::size_t dim, bool semi) {
  data::Batch b;
  b.x = random_matrix(2 * per_domain, dim, rng);
  for (std::size_t i = 0; i < 2 * per_domain; ++i) {
    const bool src = i < per_domain;
    b.domain.push_back(src ? data::Domain::Source : data::Domain::Target);
    const bool lab = src || (semi && i == per_domain);
    b.labelled.push_back(lab ? 1 : 0);
    b.labels.push_back(lab ? static_cast<int>(i % 2) : -1);
    b.origin.push_back(i);
  }
  return b;
}

model::ModelParams small_model(Rng& rng, bool target_head, bool decoder) {
  model::ArchSpec a;
  a.input_dim = 5;
  a.hidden = {6};
  a.feature_dim = 4;
  a.cfs_dim = 3;
  a.source_classes = 2;
  a.target_classes = target_head ? 2 : 0;
  a.decoder = decoder;
  auto p = model::initialise(a, rng);
  p.for_each([&](const std::string& name, Matrix& m) {
    if (name.back() == 'b')
      for (double& v : m.values()) v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
  });
  return p;
}

}  // namespace

TEST_CASE("supervised cross-entropy examples") {
  CHECK(xent(Matrix(1, 4), {2}, 0.0) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(xent(Matrix{{60.0, 0.0}}, {0}, 0.0) < 1e-20);
  CHECK(xent(Matrix(1, 2), {1}, 0.1) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  // logits (1, 2, 0.5), label 0, ε = 0.2
  const double l[3] = {1.0, 2.0, 0.5};
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  const double q[3] = {0.8 + 0.2 / 3, 0.2 / 3, 0.2 / 3};
  double expect = 0;
  for (int c = 0; c < 3; ++c) expect -= q[c] * (l[c] - std::log(z));
  CHECK(xent(Matrix{{1.0, 2.0, 0.5}}, {0}, 0.2) == doctest::Approx(expect).epsilon(1e-14));

  CHECK_THROWS_AS(xent(Matrix(1, 3), {3}, 0.0), DataError);
  CHECK_THROWS_AS(xent(Matrix(1, 3), {-1}, 0.0), DataError);
}

TEST_CASE("smoothed loss floor at the optimum prediction") {
  const double eps = 0.1;
  const int C = 5;
  // the smoothed loss is minimised at p = q
  Matrix logits(1, C);
  for (int c = 0; c < C; ++c) logits(0, c) = std::log(c == 0 ? 1 - eps + eps / C : eps / C);
  const double floor = -(1 - eps) * std::log(1 - eps + eps / C) - (C - 1) * (eps / C) * std::log(eps / C) -
                       (eps / C) * std::log(1 - eps + eps / C);
  CHECK(xent(logits, {0}, eps) == doctest::Approx(floor).epsilon(1e-12));
  CHECK(xent(logits, {0}, eps) > xent(logits, {0}, 0.0) - 1.0);
  Matrix sharp(1, C);
  sharp(0, 0) = 50.0;
  CHECK(xent(sharp, {0}, eps) > floor);
}

TEST_CASE("factorisation entropy examples") {
  CHECK(fent(Matrix{{0.5, 0.5}}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(fent(Matrix(3, 4, 1.0)) == 0.0);
  CHECK(fent(Matrix{{0.5, 0.5}}, true) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(fent(Matrix{{1.2, 0.5}}), ContractError);
  CHECK_THROWS_AS(fent(Matrix{{-0.1, 0.5}}), ContractError);
}

TEST_CASE("factorisation entropy bounds and monotonicity") {
  Rng rng = make_stream(21, "test");
  std::uniform_real_distribution<double> u(1e-9, 1.0 - 1e-9);
  for (int rep = 0; rep < 200; ++rep) {
    Matrix fc(4, 6);
    for (double& v : fc.values()) v = u(rng);
    const double h = fent(fc);
    CHECK(h >= 0.0);
    CHECK(h <= 6.0 / std::exp(1.0) + 1e-12);
  }
  Matrix at(1, 3, 1.0 / std::exp(1.0));
  CHECK(fent(at) == doctest::Approx(3.0 / std::exp(1.0)).epsilon(1e-14));
  for (double target : {0.0, 1.0}) {
    double prev = fent(at);
    for (int s = 1; s <= 50; ++s) {
      Matrix m = at;
      const double p = 1.0 / std::exp(1.0) + (target - 1.0 / std::exp(1.0)) * s / 50.0;
      m(0, 1) = std::clamp(p, 1e-12, 1.0);
      const double h = fent(m);
      CHECK(h < prev);
      prev = h;
    }
  }
}

TEST_CASE("target prediction entropy") {
  auto ent = [](const Matrix& l) {
    return value_of([&](ad::Tape& t) { return losses::target_prediction_entropy(t.constant(l)); });
  };
  CHECK(ent(Matrix(2, 10)) == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  CHECK(ent(Matrix{{80.0, 0.0, 0.0}}) < 1e-30);
  CHECK(ent(Matrix{{std::log(3.0), 0.0}}) == doctest::Approx(-(0.75 * std::log(0.75) + 0.25 * std::log(0.25))).epsilon(1e-14));
  Rng rng = make_stream(22, "test");
  for (int rep = 0; rep < 50; ++rep) {
    const double h = ent(random_matrix(3, 4, rng));
    CHECK(h >= 0.0);
    CHECK(h <= std::log(4.0) + 1e-12);
  }
}

TEST_CASE("triplet loss examples") {
  auto tl = [](const Matrix& f, const std::vector<int>& y, double m) {
    return value_of([&](ad::Tape& t) { return losses::triplet_loss(t.constant(f), y, m); });
  };
  // points 0, 1, 5 labelled A, A, B
  Matrix line{{0.0}, {1.0}, {5.0}};
  CHECK(tl(line, {0, 0, 1}, 0.3) == doctest::Approx(brute_triplet(line, {0, 0, 1}, 0.3)));
  CHECK(tl(line, {0, 0, 1}, 0.3) == 0.0);
  // 0, 2 (A) and 1 (B): anchor 0 has d⁺=2, d⁻=1; anchor 2 has d⁺=2, d⁻=1
  Matrix mid{{0.0}, {2.0}, {1.0}};
  CHECK(tl(mid, {0, 0, 1}, 0.3) == doctest::Approx(1.3).epsilon(1e-6));
  // equal distances everywhere → margin
  Matrix sq{{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}};
  Matrix tie{{0.0}, {1.0}, {0.0}, {1.0}};
  CHECK(tl(tie, {0, 1, 1, 0}, 0.3) == doctest::Approx(brute_triplet(tie, {0, 1, 1, 0}, 0.3)));
  Matrix eq{{0.0, 0.0}, {0.0, 0.0}, {0.0, 0.0}};
  CHECK(tl(eq, {0, 0, 1}, 0.3) == doctest::Approx(0.3).epsilon(1e-6));

  log::set_quiet(true);
  const auto before = log::warning_count();
  CHECK(tl(sq, {1, 1, 1, 1}, 0.3) == 0.0);
  CHECK(log::warning_count() == before + 1);
  log::set_quiet(false);
}

TEST_CASE("triplet loss against brute force on random batches") {
  Rng rng = make_stream(23, "test");
  std::uniform_int_distribution<int> lab(0, 3);
  for (int rep = 0; rep < 50; ++rep) {
    Matrix f = random_matrix(10, 3, rng);
    std::vector<int> y(10);
    for (int& v : y) v = lab(rng);
    const double got = value_of([&](ad::Tape& t) { return losses::triplet_loss(t.constant(f), y, 0.3); });
    CHECK(got == doctest::Approx(brute_triplet(f, y, 0.3)).epsilon(1e-6));
  }
}

TEST_CASE("composite reduces to supervised with zero betas") {
  Rng rng = make_stream(24, "test");
  auto p = small_model(rng, false, false);
  auto b = mixed_batch(rng, 3, 5, false);
  losses::ObjectiveOptions o;
  o.scenario = ScenarioKind::UDA;
  o.variant = Variant::CFSM;
  o.weights.beta_c = 0.0;
  o.weights.beta_m = 0.0;
  o.weights.beta_tgt_ent = 0.0;
  auto ev = losses::evaluate_objective(p, b, o);
  CHECK(ev.report.total == doctest::Approx(ev.report.terms.at(losses::kSupervised)).epsilon(1e-15));
}

TEST_CASE("identical rows zero the graph term") {
  Rng rng = make_stream(25, "test");
  auto p = small_model(rng, false, false);
  auto b = mixed_batch(rng, 3, 5, false);
  Matrix row = random_matrix(1, 5, rng);
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t c = 0; c < 5; ++c) b.x(i, c) = row(0, c);
  losses::ObjectiveOptions o;
  o.scenario = ScenarioKind::UnsupDLSTL;
  o.variant = Variant::CFSM;
  o.graph.k = 2;
  auto ev = losses::evaluate_objective(p, b, o);
  CHECK(std::abs(ev.report.terms.at(losses::kGraph)) < 1e-10);
  const auto& t = ev.report.terms;
  CHECK(ev.report.total == doctest::Approx(t.at(losses::kSupervised) + t.at(losses::kTriplet) +
                                           o.weights.beta_c * t.at(losses::kFactorisation))
                               .epsilon(1e-10));
}

TEST_CASE("composite total equals standalone terms") {
  Rng rng = make_stream(26, "test");
  for (int rep = 0; rep < 5; ++rep) {
    auto p = small_model(rng, true, false);
    auto b = mixed_batch(rng, 3, 5, true);
    losses::ObjectiveOptions o;
    o.scenario = ScenarioKind::SemiDLSTL;
    o.variant = Variant::CFSM;
    o.weights = {0.3, 0.7, 1.0, 1.0, 0.1, 0.3};
    o.graph.k = 2;
    auto ev = losses::evaluate_objective(p, b, o);

    // standalone recomputation from a plain forward pass
    auto fv = model::forward(p, b.x);
    std::vector<std::size_t> src{0, 1, 2};
    ad::Tape t;
    std::vector<int> ys{0, 1, 0};
    Matrix sl = fv.source_logits.select_rows(src);
    double sup = losses::supervised_xent(t.constant(sl), ys, 0.1).value().item();
    std::vector<std::size_t> tl{3};
    sup += losses::supervised_xent(t.constant(fv.target_logits->select_rows(tl)), {1}, 0.1).value().item();
    const double ent = losses::factorisation_entropy(t.constant(fv.fc)).value().item();
    graph::GraphSpec gs;
    gs.k = 2;
    auto g = graph::build_similarity_graph(fv.fc, gs);
    const double gl = graph::graph_energy(fv.features, graph::laplacian(g.W, false).L);

    CHECK(ev.report.terms.at(losses::kSupervised) == doctest::Approx(sup).epsilon(1e-12));
    CHECK(ev.report.terms.at(losses::kFactorisation) == doctest::Approx(ent).epsilon(1e-12));
    CHECK(ev.report.terms.at(losses::kGraph) == doctest::Approx(gl).epsilon(1e-10));
    CHECK(std::abs(ev.report.total - (sup + 0.3 * ent + 0.7 * gl)) < 1e-10);
    CHECK(std::abs(ev.report.total - ev.report.weighted_sum()) < 1e-10);
  }
}

TEST_CASE("unsupervised scenarios reject target labels") {
  Rng rng = make_stream(27, "test");
  auto p = small_model(rng, false, false);
  auto b = mixed_batch(rng, 3, 5, true);
  losses::ObjectiveOptions o;
  o.scenario = ScenarioKind::UnsupDLSTL;
  o.graph.k = 2;
  CHECK_THROWS_AS(losses::evaluate_objective(p, b, o), ConfigError);
}

TEST_CASE("hidden target labels never reach the loss") {
  Rng rng = make_stream(28, "test");
  auto p = small_model(rng, false, false);
  auto b = mixed_batch(rng, 4, 5, false);
  losses::ObjectiveOptions o;
  o.scenario = ScenarioKind::UnsupDLSTL;
  o.graph.k = 3;
  auto clean = losses::evaluate_objective(p, b, o);
  for (std::size_t i = 4; i < 8; ++i) b.labels[i] = 123456;
  auto poisoned = losses::evaluate_objective(p, b, o);
  CHECK(clean.report.total == poisoned.report.total);
  CHECK(clean.grads == poisoned.grads);
}

TEST_CASE("auto balance") {
  auto rep = [](double s, double e, double g) {
    losses::LossReport r;
    r.terms = {{losses::kSupervised, s}, {losses::kFactorisation, e}, {losses::kGraph, g}};
    return r;
  };
  std::vector<losses::LossReport> w{rep(3.0, 0.1, 0.05), rep(2.0, 0.5, 0.02), rep(1.0, 0.9, 0.01)};
  auto out = losses::auto_balance(w, {});
  CHECK(out.beta_c == 10.0);
  CHECK(out.beta_m == 100.0);
  auto eq = losses::auto_balance({rep(1, 1, 1)}, {});
  CHECK(eq.beta_c == 1.0);
  CHECK(eq.beta_m == 1.0);

  log::set_quiet(true);
  const auto before = log::warning_count();
  auto z = losses::auto_balance({rep(1, 0, 0.5)}, {});
  log::set_quiet(false);
  CHECK(z.beta_c == 0.0);
  CHECK(z.beta_m == 1.0);
  CHECK(log::warning_count() == before + 1);

  // targets restrict which β changes
  auto keep = losses::auto_balance(w, {}, {false, true});
  CHECK(keep.beta_c == losses::LossWeights{}.beta_c);
  CHECK_THROWS_AS(losses::auto_balance({}, {}), ContractError);
}

TEST_CASE("snap to power of ten") {
  CHECK(losses::snap_power_of_ten(4.0) == 10.0);
  CHECK(losses::snap_power_of_ten(3.0) == 1.0);
  CHECK(losses::snap_power_of_ten(0.02) == doctest::Approx(0.01));
  CHECK(losses::snap_power_of_ten(0.0) == 0.0);
}
