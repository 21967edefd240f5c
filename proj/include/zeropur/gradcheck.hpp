#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "zeropur/tape.hpp"

namespace zp {

/// A scalar-valued function of one tensor, expressed on a tape.
using ScalarFunction = std::function<Var(Tape&, Var)>;

struct GradCheckResult {
  /// max_i |analytic_i - numeric_i| / max(|analytic|_inf, |numeric|_inf)
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the tape gradient of `f` at `x` with central differences of step `h`.
/// The caller keeps `x` away from kinks (relu zeros, max-pool ties).
GradCheckResult grad_check(const ScalarFunction& f, const Tensor& x, double h);

/// Finite-difference step and pass threshold for each precision.
double gradcheck_step(DType dtype);
double gradcheck_threshold(DType dtype);

/// One registered op check: builds the function and a kink-free input for a seed.
struct OpCheck {
  std::string name;
  std::function<std::pair<ScalarFunction, Tensor>(std::uint64_t seed, DType dtype)> make;
};

/// Checks for every differentiable op (and every differentiable input of each op).
const std::vector<OpCheck>& op_checks();

struct OpCheckSummary {
  std::string name;
  DType dtype;
  double worst = 0.0;
  bool passed = false;
};

/// Runs every registered check for each dtype over seeds [0, seeds).
std::vector<OpCheckSummary> run_op_checks(std::size_t seeds, std::span<const DType> dtypes);

}  // namespace zp
