#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cfsm/matrix.hpp"
#include "cfsm/tape.hpp"

namespace cfsm::gradcheck {

struct Options {
  std::size_t instances = 20;
  double h = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

struct CheckResult {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct Report {
  std::vector<CheckResult> checks;
  double tolerance = 0.0;
  double seconds = 0.0;

  bool passed() const;
  /// Names of the failing checks, comma separated.
  std::string failing() const;
};

/// ‖a − n‖∞ / max(‖a‖∞, ‖n‖∞, 1e-8).
double relative_error(const Matrix& analytic, const Matrix& numeric);

/// Scalar function of a list of input matrices, built on a fresh tape.
using ScalarFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

/// Largest relative error over the inputs between the tape gradient and
/// central differences of `fn` at `inputs`.
double check_function(const ScalarFn& fn, const std::vector<Matrix>& inputs, double h);

/// Every differentiable tape op and loss term, then the composite objective
/// of every scenario (and the variants with distinct terms).
Report run_suite(const Options& opts = {});

}  // namespace cfsm::gradcheck
