#pragma once

// Central finite-difference gradient checking used across the test suites.
// Deliberately independent of the tape's backward implementations.

#include <cmath>
#include <functional>
#include <vector>

#include "blm/rng.hpp"
#include "blm/tape.hpp"
#include "blm/tensor.hpp"

namespace gradcheck {

// Builds a scalar from tape leaves made of `inputs`. Returns the root id.
using ScalarFn =
    std::function<blm::Tape::Id(blm::Tape&, const std::vector<blm::Tape::Id>&)>;

inline double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
  return std::fabs(a - b) / denom;
}

// Max relative error between tape gradients and central differences over every
// entry of every input. step 1e-4, double precision throughout.
inline double max_grad_rel_err(std::vector<blm::Tensor> inputs, const ScalarFn& fn,
                               double step = 1e-4) {
  auto eval = [&](const std::vector<blm::Tensor>& xs) {
    blm::Tape tape;
    std::vector<blm::Tape::Id> ids;
    ids.reserve(xs.size());
    for (const auto& x : xs) ids.push_back(tape.leaf(x));
    return tape.val(fn(tape, ids)).at(0, 0);
  };

  blm::Tape tape;
  std::vector<blm::Tape::Id> ids;
  for (const auto& x : inputs) ids.push_back(tape.leaf(x));
  blm::Tape::Id root = fn(tape, ids);
  tape.backward(root);

  double worst = 0.0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    for (size_t i = 0; i < inputs[k].v.size(); ++i) {
      const double orig = inputs[k].v[i];
      inputs[k].v[i] = orig + step;
      const double fp = eval(inputs);
      inputs[k].v[i] = orig - step;
      const double fm = eval(inputs);
      inputs[k].v[i] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      worst = std::max(worst, rel_err(fd, tape.grad(ids[k]).v[i]));
    }
  }
  return worst;
}

}  // namespace gradcheck
