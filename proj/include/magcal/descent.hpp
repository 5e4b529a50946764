#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace magcal {

struct DescentOptions {
  double armijo = 1e-4;
  /// Stop once an accepted step moves the parameters less than this.
  double tolerance = 1e-10;
  int max_iterations = 500;
  double initial_step = 1.0;
  bool record_history = false;
};

struct DescentResult {
  Eigen::VectorXd x;
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Cost after every accepted step, starting with the initial cost.
  std::vector<double> history;
};

/// Steepest descent with Armijo backtracking (halving). `objective(x, grad)`
/// returns the cost and, when grad is non-null, writes the gradient.
/// `project(x)` maps a trial point back onto the feasible set (for example,
/// renormalizing a quaternion block); the objective must be invariant under
/// it. The step length doubles after each accepted step so well-conditioned
/// problems are not throttled by an early short step.
template <typename Objective, typename Projection>
DescentResult gradient_descent(Objective&& objective, Eigen::VectorXd x0, Projection&& project,
                               const DescentOptions& options = {}) {
  DescentResult result;
  project(x0);
  Eigen::VectorXd grad(x0.size());
  double cost = objective(x0, &grad);
  if (options.record_history) result.history.push_back(cost);

  double step = options.initial_step;
  Eigen::VectorXd trial(x0.size());
  for (int it = 0; it < options.max_iterations; ++it) {
    const double g2 = grad.squaredNorm();
    if (g2 == 0.0) {
      result.converged = true;
      break;
    }
    bool accepted = false;
    double trial_cost = cost;
    // Backtrack until the Armijo condition holds or the step is negligible.
    while (step * std::sqrt(g2) >= 1e-3 * options.tolerance) {
      trial = x0 - step * grad;
      project(trial);
      trial_cost = objective(trial, nullptr);
      if (trial_cost <= cost - options.armijo * step * g2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      result.converged = true;
      break;
    }
    const double moved = (trial - x0).norm();
    x0 = trial;
    cost = objective(x0, &grad);
    ++result.iterations;
    if (options.record_history) result.history.push_back(cost);
    if (moved < options.tolerance) {
      result.converged = true;
      break;
    }
    step = std::min(2.0 * step, 1e12);
  }
  result.x = std::move(x0);
  result.cost = cost;
  return result;
}

}  // namespace magcal
