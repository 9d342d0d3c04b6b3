#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "pama/tape.hpp"

namespace pama {

/// Scalar objective over a list of parameter variables recorded on `tape`.
using ObjectiveFn = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of `f` against central differences.
///
/// The error for one coordinate is |analytic - numeric| / max(1, |numeric|);
/// the report carries the maximum over every coordinate of every parameter.
/// `f` must be deterministic. Throws NumericError if f is not finite.
GradCheckReport grad_check(const ObjectiveFn& f, std::vector<Tensor> params, double eps = 1e-5);

}  // namespace pama
