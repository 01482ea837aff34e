#include "cfsm/tape.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

#include "cfsm/kernels.hpp"

namespace cfsm::ad {

namespace {

thread_local std::map<std::string, double, std::less<>> g_faults;

Matrix zeros_like(const Matrix& m) { return Matrix(m.rows(), m.cols()); }

void require_same(const char* op, const Matrix& a, const Matrix& b) {
  require_shape(a.same_shape(b), op, a, b);
}

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
}

template <typename F>
Matrix map_values(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  auto in = a.values();
  auto o = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(Matrix value, std::string name) {
  if (!value.all_finite()) throw NumericError("non-finite leaf value '" + name + "'");
  Node n;
  n.op = "leaf";
  n.name = std::move(name);
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = "const";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::record(std::string_view op, std::vector<std::size_t> inputs, Matrix value,
                 Backprop backprop) {
  if (!value.all_finite()) throw NumericError("non-finite output from op '" + std::string(op) + "'");
  Node n;
  n.op = std::string(op);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [&](std::size_t i) { return nodes_.at(i).requires_grad; });
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  if (n.requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Matrix& Tape::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (!swept_) throw ContractError("gradient requested before backward()");
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return;
  require_same("gradient accumulate", n.value, g);
  auto dst = n.grad.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("backward() on a foreign node");
  const Matrix& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward() seed must be scalar (1x1), got " + lv.shape_str());
  }
  for (Node& n : nodes_) n.grad = zeros_like(n.value);
  swept_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad(0, 0) = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backprop) continue;
    if (auto it = g_faults.find(n.op); it != g_faults.end()) {
      Matrix g = n.grad;
      for (double& v : g.values()) v *= it->second;
      n.backprop(*this, g);
    } else {
      n.backprop(*this, n.grad);
    }
  }
}

void inject_gradient_fault(std::string_view op, double factor) {
  g_faults[std::string(op)] = factor;
}

void clear_gradient_faults() { g_faults.clear(); }

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Matrix v = kernels::matmul(a.value(), b.value());
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("matmul", {ia, ib}, std::move(v), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, kernels::matmul_nt(g, t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, kernels::matmul_tn(t.value(ia), g));
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  Matrix v = kernels::matmul_nt(a.value(), b.value());
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("matmul_nt", {ia, ib}, std::move(v), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, kernels::matmul(g, t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, kernels::matmul_tn(g, t.value(ia)));
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same("add", a.value(), b.value());
  Matrix v = a.value();
  auto o = v.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("add", {ia, ib}, std::move(v), [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same("sub", a.value(), b.value());
  Matrix v = a.value();
  auto o = v.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("sub", {ia, ib}, std::move(v), [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) t.accumulate(ib, map_values(g, [](double x) { return -x; }));
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same("mul", a.value(), b.value());
  Matrix v = a.value();
  auto o = v.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("mul", {ia, ib}, std::move(v), [ia, ib](Tape& t, const Matrix& g) {
    auto gv = g.values();
    if (t.requires_grad(ia)) {
      Matrix ga = g;
      auto x = ga.values();
      auto other = t.value(ib).values();
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = gv[i] * other[i];
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ib)) {
      Matrix gb = g;
      auto x = gb.values();
      auto other = t.value(ia).values();
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = gv[i] * other[i];
      t.accumulate(ib, gb);
    }
  });
}

Var add_rowvec(Var a, Var bias) {
  require_same_tape(a, bias);
  const Matrix& bv = bias.value();
  require_shape(bv.rows() == 1 && bv.cols() == a.cols(), "add_rowvec", a.value(), bv);
  Matrix v = a.value();
  for (std::size_t r = 0; r < v.rows(); ++r) {
    auto row = v.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv(0, c);
  }
  const auto ia = a.id(), ib = bias.id();
  return a.tape().record("add_rowvec", {ia, ib}, std::move(v), [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) {
      Matrix gb(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
      t.accumulate(ib, gb);
    }
  });
}

Var scale(Var a, double s) {
  Matrix v = map_values(a.value(), [s](double x) { return x * s; });
  const auto ia = a.id();
  return a.tape().record("scale", {ia}, std::move(v), [ia, s](Tape& t, const Matrix& g) {
    t.accumulate(ia, map_values(g, [s](double x) { return x * s; }));
  });
}

Var add_scalar(Var a, double s) {
  Matrix v = map_values(a.value(), [s](double x) { return x + s; });
  const auto ia = a.id();
  return a.tape().record("add_scalar", {ia}, std::move(v),
                         [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g); });
}

Var log(Var a) {
  for (double x : a.value().values())
    if (!(x > 0.0)) throw ContractError("log of non-positive value");
  Matrix v = map_values(a.value(), [](double x) { return std::log(x); });
  const auto ia = a.id();
  return a.tape().record("log", {ia}, std::move(v), [ia](Tape& t, const Matrix& g) {
    Matrix d = g;
    auto x = t.value(ia).values();
    auto dv = d.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] /= x[i];
    t.accumulate(ia, d);
  });
}

Var exp(Var a) {
  Matrix v = map_values(a.value(), [](double x) { return std::exp(x); });
  const auto ia = a.id();
  const auto out = a.tape().size();
  return a.tape().record("exp", {ia}, std::move(v), [ia, out](Tape& t, const Matrix& g) {
    Matrix d = g;
    auto y = t.value(out).values();
    auto dv = d.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= y[i];
    t.accumulate(ia, d);
  });
}

Var sqrt(Var a) {
  for (double x : a.value().values())
    if (!(x > 0.0)) throw ContractError("sqrt requires strictly positive input");
  Matrix v = map_values(a.value(), [](double x) { return std::sqrt(x); });
  const auto ia = a.id();
  const auto out = a.tape().size();
  return a.tape().record("sqrt", {ia}, std::move(v), [ia, out](Tape& t, const Matrix& g) {
    Matrix d = g;
    auto y = t.value(out).values();
    auto dv = d.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= 0.5 / y[i];
    t.accumulate(ia, d);
  });
}

Var relu(Var a) {
  Matrix v = map_values(a.value(), [](double x) { return x > 0.0 ? x : 0.0; });
  const auto ia = a.id();
  return a.tape().record("relu", {ia}, std::move(v), [ia](Tape& t, const Matrix& g) {
    Matrix d = g;
    auto x = t.value(ia).values();
    auto dv = d.values();
    for (std::size_t i = 0; i < dv.size(); ++i)
      if (!(x[i] > 0.0)) dv[i] = 0.0;
    t.accumulate(ia, d);
  });
}

Var sigmoid(Var a) {
  Matrix v = map_values(a.value(), [](double x) {
    const double y = 1.0 / (1.0 + std::exp(-x));
    return std::clamp(y, kSigmoidClip, 1.0 - kSigmoidClip);
  });
  const auto ia = a.id();
  const auto out = a.tape().size();
  return a.tape().record("sigmoid", {ia}, std::move(v), [ia, out](Tape& t, const Matrix& g) {
    Matrix d = g;
    auto y = t.value(out).values();
    auto dv = d.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= y[i] * (1.0 - y[i]);
    t.accumulate(ia, d);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  const auto ia = a.id();
  return a.tape().record("sum", {ia}, Matrix::scalar(s), [ia](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    t.accumulate(ia, Matrix(x.rows(), x.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ContractError("mean of empty matrix");
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  const auto ia = a.id();
  return a.tape().record("mean", {ia}, Matrix::scalar(s / n), [ia, n](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    t.accumulate(ia, Matrix(x.rows(), x.cols(), g(0, 0) / n));
  });
}

Var row_sum(Var a) {
  const Matrix& x = a.value();
  Matrix v(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (double e : x.row(r)) v(r, 0) += e;
  const auto ia = a.id();
  return a.tape().record("row_sum", {ia}, std::move(v), [ia](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    Matrix d(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (double& e : d.row(r)) e = g(r, 0);
    t.accumulate(ia, d);
  });
}

Var log_softmax(Var a) {
  const Matrix& x = a.value();
  Matrix v(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (double e : in) s += std::exp(e - mx);
    const double lse = mx + std::log(s);
    auto o = v.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = in[c] - lse;
  }
  const auto ia = a.id();
  const auto out = a.tape().size();
  return a.tape().record("log_softmax", {ia}, std::move(v), [ia, out](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(out);
    Matrix d(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double gs = 0.0;
      for (double e : g.row(r)) gs += e;
      for (std::size_t c = 0; c < y.cols(); ++c) d(r, c) = g(r, c) - std::exp(y(r, c)) * gs;
    }
    t.accumulate(ia, d);
  });
}

Var gather_rows(Var a, std::vector<std::size_t> idx) {
  Matrix v = a.value().select_rows(idx);
  const auto ia = a.id();
  return a.tape().record("gather_rows", {ia}, std::move(v),
                         [ia, idx = std::move(idx)](Tape& t, const Matrix& g) {
                           const Matrix& x = t.value(ia);
                           Matrix d(x.rows(), x.cols());
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                             auto dst = d.row(idx[i]);
                             auto src = g.row(i);
                             for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
                           }
                           t.accumulate(ia, d);
                         });
}

Var pairwise_sq_dists(Var a) {
  Matrix v = kernels::pairwise_sq_dists(a.value());
  const auto ia = a.id();
  return a.tape().record("pairwise_sq_dists", {ia}, std::move(v), [ia](Tape& t, const Matrix& g) {
    // ∂D_ij/∂x_i = 2(x_i − x_j); both G_ij and G_ji touch the pair.
    const Matrix& x = t.value(ia);
    const std::size_t n = x.rows();
    Matrix d(n, x.cols());
    for (std::size_t i = 0; i < n; ++i) {
      auto di = d.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double w = 2.0 * (g(i, j) + g(j, i));
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < di.size(); ++c) di[c] += w * (x(i, c) - x(j, c));
      }
    }
    t.accumulate(ia, d);
  });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

}  // namespace cfsm::ad
