#include "funcspace/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "funcspace/errors.hpp"

namespace funcspace::diff {

namespace {

double eval_scalar(const GraphFn& fn, std::span<const Tensor> point) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(point.size());
  for (const Tensor& t : point) vars.push_back(tape.variable(t));
  const Var y = fn(tape, vars);
  if (y.value().size() != 1) {
    throw ShapeError("finite_diff_check: function output must be scalar, got " +
                     shape_str(y.value().shape()));
  }
  return y.value()[0];
}

}  // namespace

Tensor gradient(const GraphFn& fn, std::span<const Tensor> point,
                std::size_t wrt) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(point.size());
  for (const Tensor& t : point) vars.push_back(tape.variable(t));
  const Var y = fn(tape, vars);
  if (y.value().size() != 1) {
    throw ShapeError("gradient: function output must be scalar");
  }
  tape.backward(y);
  const Tensor& g = tape.grad(vars[wrt]);
  if (g.empty()) return Tensor::zeros(point[wrt].shape());
  return g;
}

GradCheckReport finite_diff_check(const GraphFn& fn,
                                  std::span<const Tensor> point, double step,
                                  double tolerance) {
  if (step <= 0.0) throw ConfigError("finite_diff_check: step must be > 0");

  // Reverse-mode gradients, one pass.
  std::vector<Tensor> ad_grads;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : point) vars.push_back(tape.variable(t));
    const Var y = fn(tape, vars);
    if (y.value().size() != 1) {
      throw ShapeError("finite_diff_check: function output must be scalar");
    }
    tape.backward(y);
    for (std::size_t i = 0; i < point.size(); ++i) {
      const Tensor& g = tape.grad(vars[i]);
      ad_grads.push_back(g.empty() ? Tensor::zeros(point[i].shape()) : g);
    }
  }

  std::vector<Tensor> probe(point.begin(), point.end());
  GradCheckReport report;
  for (std::size_t i = 0; i < point.size(); ++i) {
    for (std::size_t c = 0; c < point[i].size(); ++c) {
      const double saved = probe[i][c];
      probe[i][c] = saved + step;
      const double hi = eval_scalar(fn, probe);
      probe[i][c] = saved - step;
      const double lo = eval_scalar(fn, probe);
      probe[i][c] = saved;

      const double fd = (hi - lo) / (2.0 * step);
      const double ad = ad_grads[i][c];
      const double denom = std::max({std::fabs(ad), std::fabs(fd), 1e-4});
      const double rel = std::fabs(ad - fd) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = i;
        report.worst_component = c;
      }
    }
  }
  report.pass = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace funcspace::diff
