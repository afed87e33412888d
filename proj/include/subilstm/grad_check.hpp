#pragma once

#include <functional>
#include <vector>

#include "subilstm/tensor.hpp"

namespace subi {

// Scalar function of a parameter list. The harness owns all tape handling:
// it watches the parameters for the analytic pass and hands f plain tensors
// for the finite-difference probes, so f must read params only through the
// vector it is given.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_param = 0;
  std::int64_t worst_coord = 0;
};

// Central finite differences against reverse-mode gradients, every
// coordinate of every parameter. Relative error is
// |analytic - numeric| / max(1, |analytic|, |numeric|).
// Throws if f evaluates non-finite at any probe point.
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& params, double eps);

double grad_check_max_err(const ScalarFn& f, const std::vector<Tensor>& params, double eps);

}  // namespace subi
