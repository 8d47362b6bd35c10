#pragma once

#include <functional>
#include <vector>

namespace sepmodel {

// Objective for maximization.  Fills value and gradient at x; returns
// false when x is infeasible (value treated as -infinity), which makes
// the line search retreat instead of aborting.
using AscentObjective =
    std::function<bool(const std::vector<double>& x, double& value,
                       std::vector<double>& grad)>;

struct AscentOptions {
  int max_iters = 500;
  double tol = 1e-8;         // relative improvement threshold
  int stall_iters = 3;       // consecutive small improvements to stop
  double grad_tol = 1e-6;    // infinity-norm gradient threshold
  int history = 8;           // L-BFGS memory
};

struct AscentResult {
  std::vector<double> x;
  double value = 0.0;
  std::vector<double> trace;  // objective at every accepted iterate
  bool converged = false;
  int iterations = 0;
};

// Limited-memory quasi-Newton ascent with Armijo backtracking.  Every
// accepted iterate improves the objective, so the trace is nondecreasing.
AscentResult lbfgs_maximize(const AscentObjective& objective,
                            std::vector<double> x0,
                            const AscentOptions& options = {});

// Worst relative disagreement between the objective's gradient and a
// central finite difference, coordinate by coordinate.
double check_gradient(const AscentObjective& objective,
                      const std::vector<double>& point, double step = 1e-5);

}  // namespace sepmodel
