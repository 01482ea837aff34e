#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfsm/matrix.hpp"

namespace cfsm::ad {

/// Lower bound (and 1 - upper bound) applied to sigmoid outputs so that a
/// later log never sees 0.
inline constexpr double kSigmoidClip = 1e-7;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run reverse-mode tape. Nodes are appended in creation order,
/// which is already a topological order, so backward() is a single reverse
/// sweep with a fixed accumulation order.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, std::string name = {});
  Var constant(Matrix value);

  /// Used by op implementations. `backprop` receives the node's upstream
  /// gradient and must call accumulate() on its inputs.
  Var record(std::string_view op, std::vector<std::size_t> inputs, Matrix value,
             Backprop backprop);

  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  const Matrix& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  const std::string& name(std::size_t id) const { return nodes_.at(id).name; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void accumulate(std::size_t id, const Matrix& g);

 private:
  struct Node {
    std::string op;
    std::string name;
    std::vector<std::size_t> inputs;
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backprop backprop;
  };
  std::vector<Node> nodes_;
  bool swept_ = false;
};

// Differentiable operations. Binary elementwise ops require equal shapes.
Var matmul(Var a, Var b);     // A·B
Var matmul_nt(Var a, Var b);  // A·Bᵀ
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_rowvec(Var a, Var bias);  // adds a 1×C row to every row of A
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var log(Var a);
Var exp(Var a);
Var sqrt(Var a);
Var relu(Var a);  // max(·, 0)
Var sigmoid(Var a);
Var sum(Var a);       // → 1×1
Var mean(Var a);      // → 1×1
Var row_sum(Var a);   // → N×1
Var log_softmax(Var a);  // row-wise
Var gather_rows(Var a, std::vector<std::size_t> idx);
/// D_ij = ‖a_i − a_j‖².
Var pairwise_sq_dists(Var a);
/// Constant copy of the value; no gradient flows back.
Var stop_gradient(Var a);

/// Test hook: scales the gradient emitted by every node of the named op by
/// `factor`. Used to demonstrate that the gradient checker catches faults.
void inject_gradient_fault(std::string_view op, double factor);
void clear_gradient_faults();

}  // namespace cfsm::ad
