#include "pama/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pama/errors.hpp"

namespace pama {

namespace {

double evaluate(const ObjectiveFn& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.constant(p));
  const Var loss = f(tape, vars);
  const Tensor& v = loss.value();
  if (v.size() != 1) throw UsageError("grad_check objective must return a scalar");
  if (!std::isfinite(v[0])) throw NumericError("grad_check objective is not finite");
  return v[0];
}

}  // namespace

GradCheckReport grad_check(const ObjectiveFn& f, std::vector<Tensor> params, double eps) {
  if (!(eps > 0.0)) throw UsageError("grad_check eps must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(tape.leaf(p, true));
    const Var loss = f(tape, vars);
    if (loss.value().size() == 1 && !std::isfinite(loss.value()[0])) {
      throw NumericError("grad_check objective is not finite");
    }
    tape.backward(loss);
    for (const Var& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + eps;
      const double up = evaluate(f, params);
      params[p][i] = saved - eps;
      const double down = evaluate(f, params);
      params[p][i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[p][i] - numeric) / std::max(1.0, std::abs(numeric));
      ++report.coordinates;
      if (err > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = err;
        report.worst_param = p;
        report.worst_index = i;
        report.analytic = analytic[p][i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace pama
