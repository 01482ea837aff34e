#include "cfsm/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "cfsm/data.hpp"
#include "cfsm/graph.hpp"
#include "cfsm/losses.hpp"
#include "cfsm/model.hpp"
#include "cfsm/rng.hpp"

namespace cfsm::gradcheck {

namespace {

Matrix uniform(std::size_t r, std::size_t c, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.values()) v = u(rng);
  return m;
}

// Uniform in ±[gap, hi], keeping relu inputs away from the kink.
Matrix away_from_zero(std::size_t r, std::size_t c, double gap, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(gap, hi);
  std::bernoulli_distribution sign(0.5);
  Matrix m(r, c);
  for (double& v : m.values()) v = sign(rng) ? u(rng) : -u(rng);
  return m;
}

// Reduces a matrix-valued op to a scalar with a fixed random projection.
ad::Var project(ad::Var y, const Matrix& r) { return ad::sum(ad::mul(y, y.tape().constant(r))); }

struct OpCase {
  std::string name;
  std::function<std::pair<ScalarFn, std::vector<Matrix>>(Rng&)> make;
};

std::vector<OpCase> op_cases() {
  std::vector<OpCase> c;
  auto unary = [&](std::string name, double lo, double hi, std::function<ad::Var(ad::Var)> op,
                   std::size_t out_rows = 3, std::size_t out_cols = 4) {
    c.push_back({name, [=](Rng& rng) {
                   Matrix x = uniform(3, 4, lo, hi, rng);
                   Matrix r = uniform(out_rows, out_cols, -1, 1, rng);
                   ScalarFn fn = [=](ad::Tape&, const std::vector<ad::Var>& v) { return project(op(v[0]), r); };
                   return std::pair{fn, std::vector<Matrix>{x}};
                 }});
  };
  auto binary = [&](std::string name, std::function<ad::Var(ad::Var, ad::Var)> op) {
    c.push_back({name, [=](Rng& rng) {
                   Matrix a = uniform(3, 4, -1, 1, rng), b = uniform(3, 4, -1, 1, rng);
                   Matrix r = uniform(3, 4, -1, 1, rng);
                   ScalarFn fn = [=](ad::Tape&, const std::vector<ad::Var>& v) { return project(op(v[0], v[1]), r); };
                   return std::pair{fn, std::vector<Matrix>{a, b}};
                 }});
  };

  c.push_back({"matmul", [](Rng& rng) {
                 Matrix a = uniform(3, 4, -1, 1, rng), b = uniform(4, 2, -1, 1, rng), r = uniform(3, 2, -1, 1, rng);
                 ScalarFn fn = [=](ad::Tape&, const std::vector<ad::Var>& v) { return project(ad::matmul(v[0], v[1]), r); };
                 return std::pair{fn, std::vector<Matrix>{a, b}};
               }});
  c.push_back({"matmul_nt", [](Rng& rng) {
                 Matrix a = uniform(3, 4, -1, 1, rng), b = uniform(2, 4, -1, 1, rng), r = uniform(3, 2, -1, 1, rng);
                 ScalarFn fn = [=](ad::Tape&, const std::vector<ad::Var>& v) { return project(ad::matmul_nt(v[0], v[1]), r); };
                 return std::pair{fn, std::vector<Matrix>{a, b}};
               }});
  binary("add", [](ad::Var a, ad::Var b) { return ad::add(a, b); });
  binary("sub", [](ad::Var a, ad::Var b) { return ad::sub(a, b); });
  binary("mul", [](ad::Var a, ad::Var b) { return ad::mul(a, b); });
  c.push_back({"add_rowvec", [](Rng& rng) {
                 Matrix a = uniform(3, 4, -1, 1, rng), b = uniform(1, 4, -1, 1, rng), r = uniform(3, 4, -1, 1, rng);
                 ScalarFn fn = [=](ad::Tape&, const std::vector<ad::Var>& v) { return project(ad::add_rowvec(v[0], v[1]), r); };
                 return std::pair{fn, std::vector<Matrix>{a, b}};
               }});
  unary("scale", -1, 1, [](ad::Var x) { return ad::scale(x, -1.7); });
  unary("add_scalar", -1, 1, [](ad::Var x) { return ad::add_scalar(x, 0.3); });
  unary("log", 0.5, 2.0, [](ad::Var x) { return ad::log(x); });
  unary("exp", -1, 1, [](ad::Var x) { return ad::exp(x); });
  unary("sqrt", 0.5, 2.0, [](ad::Var x) { return ad::sqrt(x); });
  c.push_back({"relu", [](Rng& rng) {
                 Matrix x = away_from_zero(3, 4, 0.05, 1.0, rng), r = uniform(3, 4, -1, 1, rng);
                 ScalarFn fn = [=](ad::Tape&, const std::vector<ad::Var>& v) { return project(ad::relu(v[0]), r); };
                 return std::pair{fn, std::vector<Matrix>{x}};
               }});
  unary("sigmoid", -3, 3, [](ad::Var x) { return ad::sigmoid(x); });
  unary("sum", -1, 1, [](ad::Var x) { return ad::sum(x); }, 1, 1);
  unary("mean", -1, 1, [](ad::Var x) { return ad::mean(x); }, 1, 1);
  c.push_back({"row_sum", [](Rng& rng) {
                 Matrix x = uniform(3, 4, -1, 1, rng), r = uniform(3, 1, -1, 1, rng);
                 ScalarFn fn = [=](ad::Tape&, const std::vector<ad::Var>& v) { return project(ad::row_sum(v[0]), r); };
                 return std::pair{fn, std::vector<Matrix>{x}};
               }});
  unary("log_softmax", -2, 2, [](ad::Var x) { return ad::log_softmax(x); });
  c.push_back({"gather_rows", [](Rng& rng) {
                 Matrix x = uniform(3, 4, -1, 1, rng), r = uniform(4, 4, -1, 1, rng);
                 ScalarFn fn = [=](ad::Tape&, const std::vector<ad::Var>& v) {
                   return project(ad::gather_rows(v[0], {2, 0, 2, 1}), r);
                 };
                 return std::pair{fn, std::vector<Matrix>{x}};
               }});
  c.push_back({"pairwise_sq_dists", [](Rng& rng) {
                 Matrix x = uniform(5, 3, -1, 1, rng), r = uniform(5, 5, -1, 1, rng);
                 ScalarFn fn = [=](ad::Tape&, const std::vector<ad::Var>& v) { return project(ad::pairwise_sq_dists(v[0]), r); };
                 return std::pair{fn, std::vector<Matrix>{x}};
               }});

  // Loss terms.
  c.push_back({"supervised_xent", [](Rng& rng) {
                 Matrix x = uniform(5, 3, -2, 2, rng);
                 std::vector<int> labels{0, 2, 1, 1, 0};
                 ScalarFn fn = [=](ad::Tape&, const std::vector<ad::Var>& v) {
                   return losses::supervised_xent(v[0], labels, 0.1);
                 };
                 return std::pair{fn, std::vector<Matrix>{x}};
               }});
  c.push_back({"factorisation_entropy", [](Rng& rng) {
                 Matrix x = uniform(4, 5, 0.05, 0.95, rng);
                 ScalarFn fn = [](ad::Tape&, const std::vector<ad::Var>& v) { return losses::factorisation_entropy(v[0]); };
                 return std::pair{fn, std::vector<Matrix>{x}};
               }});
  c.push_back({"factorisation_entropy.binary", [](Rng& rng) {
                 Matrix x = uniform(4, 5, 0.05, 0.95, rng);
                 ScalarFn fn = [](ad::Tape&, const std::vector<ad::Var>& v) {
                   return losses::factorisation_entropy(v[0], true);
                 };
                 return std::pair{fn, std::vector<Matrix>{x}};
               }});
  c.push_back({"target_prediction_entropy", [](Rng& rng) {
                 Matrix x = uniform(5, 4, -2, 2, rng);
                 ScalarFn fn = [](ad::Tape&, const std::vector<ad::Var>& v) { return losses::target_prediction_entropy(v[0]); };
                 return std::pair{fn, std::vector<Matrix>{x}};
               }});
  c.push_back({"triplet_loss", [](Rng& rng) {
                 Matrix x = uniform(8, 3, -1, 1, rng);
                 std::vector<int> labels{0, 0, 1, 1, 2, 2, 0, 1};
                 const losses::Triplets mined = losses::mine_batch_hard(x, labels);
                 ScalarFn fn = [=](ad::Tape&, const std::vector<ad::Var>& v) {
                   return losses::triplet_loss(v[0], labels, 0.3, &mined);
                 };
                 return std::pair{fn, std::vector<Matrix>{x}};
               }});
  for (bool normalized : {false, true}) {
    c.push_back({normalized ? "graph_loss.normalized" : "graph_loss", [normalized](Rng& rng) {
                   Matrix basis = uniform(6, 2, 0, 1, rng);
                   graph::GraphSpec spec;
                   spec.k = 3;
                   const graph::Laplacian lap = graph::laplacian(graph::build_similarity_graph(basis, spec).W, normalized);
                   Matrix f = uniform(6, 3, -1, 1, rng);
                   ScalarFn fn = [=](ad::Tape&, const std::vector<ad::Var>& v) { return graph::graph_loss(v[0], lap); };
                   return std::pair{fn, std::vector<Matrix>{f}};
                 }});
  }
  c.push_back({"graph_loss_through_basis", [](Rng& rng) {
                 Matrix basis = uniform(6, 2, 0, 1, rng);
                 graph::GraphSpec spec;
                 spec.k = 3;
                 const graph::BuiltGraph g = graph::build_similarity_graph(basis, spec);
                 Matrix f = uniform(6, 3, -1, 1, rng);
                 ScalarFn fn = [=](ad::Tape&, const std::vector<ad::Var>& v) {
                   return graph::graph_loss_through_basis(v[0], v[1], g);
                 };
                 return std::pair{fn, std::vector<Matrix>{f, basis}};
               }});
  c.push_back({"reconstruction_loss", [](Rng& rng) {
                 Matrix fhat = uniform(4, 3, -1, 1, rng);
                 const Matrix f = uniform(4, 3, -1, 1, rng);
                 ScalarFn fn = [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                   return model::reconstruction_loss(v[0], t.constant(f));
                 };
                 return std::pair{fn, std::vector<Matrix>{fhat}};
               }});
  return c;
}

struct CompositeCase {
  std::string name;
  ScenarioKind scenario;
  Variant variant;
  bool full_gradient = false;
  bool binary_entropy = false;
  bool normalize_by_n = false;
};

std::vector<CompositeCase> composite_cases() {
  return {
      {"composite.UDA.CFSM", ScenarioKind::UDA, Variant::CFSM},
      {"composite.UDA.JointFT", ScenarioKind::UDA, Variant::JointFT},
      {"composite.UDA.AE", ScenarioKind::UDA, Variant::AE},
      {"composite.SemiDLSTL.CFSM", ScenarioKind::SemiDLSTL, Variant::CFSM},
      {"composite.SemiDLSTL.FTTarget", ScenarioKind::SemiDLSTL, Variant::FTTarget},
      {"composite.UnsupDLSTL.CFSM", ScenarioKind::UnsupDLSTL, Variant::CFSM},
      {"composite.UnsupDLSTL.CFSMClassicGraph", ScenarioKind::UnsupDLSTL, Variant::CFSMClassicGraph},
      {"composite.UnsupDLSTL.SourcePlusRegs", ScenarioKind::UnsupDLSTL, Variant::SourcePlusRegs},
      {"composite.UnsupDLSTL.CFSM.full_gradient", ScenarioKind::UnsupDLSTL, Variant::CFSM, true, true, true},
  };
}

data::Batch composite_batch(const CompositeCase& cc, const model::ArchSpec& arch, Rng& rng) {
  const VariantPlan plan = plan_for(cc.scenario, cc.variant);
  data::Batch b;
  auto add_rows = [&](data::Domain dom, std::size_t n, bool labelled, std::size_t classes) {
    for (std::size_t i = 0; i < n; ++i) {
      b.domain.push_back(dom);
      b.labelled.push_back(labelled ? 1 : 0);
      b.labels.push_back(labelled ? static_cast<int>(i % classes) : -1);
      b.origin.push_back(i);
    }
  };
  if (plan.source_stream) add_rows(data::Domain::Source, 6, true, arch.source_classes);
  if (plan.target_stream) {
    const bool labelled = plan.target_supervised;
    if (labelled) add_rows(data::Domain::Target, 3, true, arch.target_classes);
    if (plan.source_stream || !labelled) add_rows(data::Domain::Target, 3, false, 1);
    if (!plan.source_stream && labelled) add_rows(data::Domain::Target, 3, true, arch.target_classes);
  }
  b.x = uniform(b.size(), arch.input_dim, -1, 1, rng);
  return b;
}

double composite_value(const model::ModelParams& p, const data::Batch& b, const losses::ObjectiveOptions& o,
                       const losses::Frozen& frozen) {
  ad::Tape tape;
  const model::BoundParams bound = model::bind(tape, p);
  return losses::composite_objective(tape, bound, b, o, &frozen).total.value().item();
}

double check_composite(const CompositeCase& cc, Rng& rng, double h) {
  model::ArchSpec arch;
  arch.input_dim = 5;
  arch.hidden = {6};
  arch.feature_dim = 4;
  arch.cfs_dim = 3;
  arch.source_classes = 3;
  arch.target_classes = cc.scenario == ScenarioKind::SemiDLSTL ? 3 : 0;
  arch.decoder = cc.variant == Variant::AE;

  model::ModelParams p = model::initialise(arch, rng);
  // Non-zero biases so every bias gradient is exercised.
  p.for_each([&](const std::string&, Matrix& m) {
    if (m.rows() == 1) m = uniform(1, m.cols(), -0.1, 0.1, rng);
  });
  const data::Batch b = composite_batch(cc, arch, rng);

  losses::ObjectiveOptions o;
  o.scenario = cc.scenario;
  o.variant = cc.variant;
  o.weights.beta_c = 0.5;
  o.weights.beta_m = 0.3;
  o.weights.beta_tgt_ent = 0.7;
  o.weights.beta_ae = 0.4;
  o.weights.label_smoothing = 0.1;
  o.graph.k = 4;
  o.graph.full_gradient = cc.full_gradient;
  o.graph.normalize_by_n = cc.normalize_by_n;
  o.binary_entropy = cc.binary_entropy;

  const losses::Evaluation ev = losses::evaluate_objective(p, b, o);
  std::vector<Matrix> analytic;
  ev.grads.visit([&](const std::string&, const Matrix& g) { analytic.push_back(g); });

  double worst = 0.0;
  std::size_t idx = 0;
  model::ModelParams probe = p;
  probe.for_each([&](const std::string&, Matrix& m) {
    Matrix numeric(m.rows(), m.cols());
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double orig = m.values()[j];
      m.values()[j] = orig + h;
      const double up = composite_value(probe, b, o, ev.frozen);
      m.values()[j] = orig - h;
      const double down = composite_value(probe, b, o, ev.frozen);
      m.values()[j] = orig;
      numeric.values()[j] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(analytic.at(idx), numeric));
    ++idx;
  });
  return worst;
}

}  // namespace

bool Report::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::string Report::failing() const {
  std::string s;
  for (const CheckResult& c : checks) {
    if (c.passed) continue;
    if (!s.empty()) s += ", ";
    s += c.name;
  }
  return s;
}

double relative_error(const Matrix& analytic, const Matrix& numeric) {
  require_shape(analytic.same_shape(numeric), "relative_error", analytic, numeric);
  double diff = 0.0, a = 0.0, n = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic.values()[i] - numeric.values()[i]));
    a = std::max(a, std::abs(analytic.values()[i]));
    n = std::max(n, std::abs(numeric.values()[i]));
  }
  return diff / std::max({a, n, 1e-8});
}

double check_function(const ScalarFn& fn, const std::vector<Matrix>& inputs, double h) {
  std::vector<Matrix> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Matrix& m : inputs) vars.push_back(tape.leaf(m));
    tape.backward(fn(tape, vars));
    for (const ad::Var& v : vars) analytic.push_back(v.grad());
  }
  auto value_at = [&](const std::vector<Matrix>& xs) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Matrix& m : xs) vars.push_back(tape.constant(m));
    return fn(tape, vars).value().item();
  };
  double worst = 0.0;
  std::vector<Matrix> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    Matrix numeric(probe[k].rows(), probe[k].cols());
    for (std::size_t j = 0; j < probe[k].size(); ++j) {
      const double orig = probe[k].values()[j];
      probe[k].values()[j] = orig + h;
      const double up = value_at(probe);
      probe[k].values()[j] = orig - h;
      const double down = value_at(probe);
      probe[k].values()[j] = orig;
      numeric.values()[j] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(analytic[k], numeric));
  }
  return worst;
}

Report run_suite(const Options& opts) {
  const auto start = std::chrono::steady_clock::now();
  Report rep;
  rep.tolerance = opts.tolerance;
  for (const OpCase& oc : op_cases()) {
    Rng rng = make_stream(opts.seed, "gradcheck." + oc.name);
    CheckResult r{oc.name, opts.instances, 0.0, false};
    for (std::size_t i = 0; i < opts.instances; ++i) {
      auto [fn, inputs] = oc.make(rng);
      r.max_rel_error = std::max(r.max_rel_error, check_function(fn, inputs, opts.h));
    }
    r.passed = r.max_rel_error < opts.tolerance;
    rep.checks.push_back(r);
  }
  for (const CompositeCase& cc : composite_cases()) {
    Rng rng = make_stream(opts.seed, "gradcheck." + cc.name);
    CheckResult r{cc.name, opts.instances, 0.0, false};
    for (std::size_t i = 0; i < opts.instances; ++i)
      r.max_rel_error = std::max(r.max_rel_error, check_composite(cc, rng, opts.h));
    r.passed = r.max_rel_error < opts.tolerance;
    rep.checks.push_back(r);
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace cfsm::gradcheck
