#pragma once

// shared pipeline fixtures for the dint desk plant

#include "sacbf/learn.hpp"
#include "sacbf/sampling.hpp"

namespace fixtures {

using namespace sacbf;

// exact state-action barrier of the double integrator, built from the
// closed-form reachability value; satisfies the certificate conditions
// without discretization error
inline SacbfBundle exact_dint_bundle(int action_points = 21) {
  auto [sys, cs] = make_double_integrator();
  auto step = sys.step;
  auto h = [cs](const VectorXd& x) { return cs.h(x); };
  SacbfBundle b = make_function_bundle(
      [step, h](const VectorXd& x, const VectorXd& u) {
        return std::max(h(x), double_integrator_bstar(step(x, u)));
      },
      sample_input_grid(cs, {action_points}), SacbfMethod::Rl);
  return b;
}

// saturating stabilizer, the dint expert
inline Policy dint_lqr() {
  return [](const VectorXd& x) {
    return VectorXd(
        VectorXd::Constant(1, std::clamp(-1.2 * x(0) - 1.8 * x(1), -1.0, 1.0)));
  };
}

}  // namespace fixtures
