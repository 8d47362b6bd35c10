#include "sepmodel/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

#include "sepmodel/errors.hpp"

namespace sepmodel {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

}  // namespace

AscentResult lbfgs_maximize(const AscentObjective& objective,
                            std::vector<double> x0,
                            const AscentOptions& options) {
  const std::size_t dim = x0.size();
  AscentResult result;
  result.x = std::move(x0);

  std::vector<double> grad(dim);
  double value;
  if (!objective(result.x, value, grad) || !std::isfinite(value))
    throw ConvergenceError("objective is infeasible at the starting point");
  result.value = value;
  result.trace.push_back(value);

  struct Pair {
    std::vector<double> s, y;
    double rho;
  };
  std::deque<Pair> memory;

  std::vector<double> direction(dim), x_new(dim), grad_new(dim), alpha_buf;
  int stalled = 0;

  for (int iter = 0; iter < options.max_iters; ++iter) {
    result.iterations = iter + 1;

    if (inf_norm(grad) < options.grad_tol) {
      result.converged = true;
      break;
    }

    // Two-loop recursion on the ascent direction.
    direction = grad;
    alpha_buf.assign(memory.size(), 0.0);
    for (std::size_t i = memory.size(); i-- > 0;) {
      const Pair& p = memory[i];
      alpha_buf[i] = p.rho * dot(p.s, direction);
      for (std::size_t k = 0; k < dim; ++k)
        direction[k] -= alpha_buf[i] * p.y[k];
    }
    if (!memory.empty()) {
      const Pair& last = memory.back();
      const double yy = dot(last.y, last.y);
      if (yy > 0.0) {
        const double scale = dot(last.s, last.y) / yy;
        for (double& d : direction) d *= scale;
      }
    }
    for (std::size_t i = 0; i < memory.size(); ++i) {
      const Pair& p = memory[i];
      const double beta = p.rho * dot(p.y, direction);
      for (std::size_t k = 0; k < dim; ++k)
        direction[k] += (alpha_buf[i] - beta) * p.s[k];
    }

    double slope = dot(grad, direction);
    if (!(slope > 0.0)) {
      // Curvature information went bad; fall back to steepest ascent.
      direction = grad;
      slope = dot(grad, grad);
      memory.clear();
      if (!(slope > 0.0)) {
        result.converged = true;
        break;
      }
    }

    // Armijo backtracking.
    const double c1 = 1e-4;
    double step = 1.0;
    bool accepted = false;
    double value_new = value;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t k = 0; k < dim; ++k)
        x_new[k] = result.x[k] + step * direction[k];
      double v;
      if (objective(x_new, v, grad_new) && std::isfinite(v) &&
          v >= value + c1 * step * slope) {
        value_new = v;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // line search exhausted; report best point so far

    Pair pair;
    pair.s.resize(dim);
    pair.y.resize(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      pair.s[k] = x_new[k] - result.x[k];
      pair.y[k] = grad[k] - grad_new[k];  // minimization convention on -f
    }
    const double sy = dot(pair.s, pair.y);
    if (sy > 1e-12) {
      pair.rho = 1.0 / sy;
      memory.push_back(std::move(pair));
      if (static_cast<int>(memory.size()) > options.history)
        memory.pop_front();
    }

    const double improvement =
        (value_new - value) / std::max(1.0, std::fabs(value_new));
    result.x = x_new;
    value = value_new;
    grad = grad_new;
    result.value = value;
    result.trace.push_back(value);

    if (improvement < options.tol) {
      if (++stalled >= options.stall_iters) {
        result.converged = true;
        break;
      }
    } else {
      stalled = 0;
    }
  }

  return result;
}

double check_gradient(const AscentObjective& objective,
                      const std::vector<double>& point, double step) {
  std::vector<double> grad(point.size());
  double value;
  if (!objective(point, value, grad) || !std::isfinite(value))
    throw DomainError("objective is not finite at the evaluation point");

  double worst = 0.0;
  std::vector<double> x = point;
  std::vector<double> scratch(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    double lo, hi;
    x[i] = point[i] + step;
    if (!objective(x, hi, scratch) || !std::isfinite(hi))
      throw DomainError("objective not finite at +h perturbation of coordinate " +
                        std::to_string(i));
    x[i] = point[i] - step;
    if (!objective(x, lo, scratch) || !std::isfinite(lo))
      throw DomainError("objective not finite at -h perturbation of coordinate " +
                        std::to_string(i));
    x[i] = point[i];
    const double fd = (hi - lo) / (2.0 * step);
    const double denom = std::max({1.0, std::fabs(fd), std::fabs(grad[i])});
    worst = std::max(worst, std::fabs(fd - grad[i]) / denom);
  }
  return worst;
}

}  // namespace sepmodel
