#pragma once

#include <functional>
#include <span>
#include <vector>

#include "funcspace/tape.hpp"

namespace funcspace::diff {

// A scalar-valued graph builder: given a tape and one leaf Var per point
// tensor, returns the scalar output node.
using GraphFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool pass = false;
  std::size_t worst_input = 0;
  std::size_t worst_component = 0;
};

// Compares reverse-mode gradients against central finite differences,
// component by component. Relative error uses
//   |ad - fd| / max(|ad|, |fd|, 1e-4)
// so that near-zero gradients are judged on an absolute scale.
GradCheckReport finite_diff_check(const GraphFn& fn,
                                  std::span<const Tensor> point, double step,
                                  double tolerance);

// Reverse-mode gradient of fn at point with respect to input `wrt`.
Tensor gradient(const GraphFn& fn, std::span<const Tensor> point,
                std::size_t wrt);

}  // namespace funcspace::diff
