#include "sepmodel/coxian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace sepmodel {

void FitConfig::validate() const {
  if (!(delta > 0.0)) throw ParamError("delta must be > 0");
  if (!(gamma_floor > 0.0)) throw ParamError("gamma_floor must be > 0");
  if (eta_beta < 0.0 || eta_b < 0.0 || eta_g < 0.0 || eta_rho < 0.0)
    throw ParamError("regularization weights must be >= 0");
  if (max_iters < 1) throw ParamError("max_iters must be >= 1");
  if (!(tol > 0.0)) throw ParamError("tol must be > 0");
}

void validate_params(const CoxianParams& params, double delta,
                     double gamma_floor) {
  const std::size_t n = params.beta.size();
  if (n < 1) throw ParamError("order must be >= 1");
  if (params.gamma.size() != n)
    throw ParamError("beta and gamma must have equal length");
  double sum = 0.0;
  for (double b : params.beta) {
    if (!std::isfinite(b) || b < 0.0)
      throw ParamError("beta entries must be finite and >= 0");
    sum += b;
  }
  if (std::fabs(sum - 1.0) > 1e-9)
    throw ParamError("beta must sum to 1 (got " + std::to_string(sum) + ")");
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (!(params.gamma[i] - params.gamma[i + 1] >= delta - 1e-12))
      throw ParamError("gamma must decrease by at least delta between states");
  }
  if (!(params.gamma[n - 1] >= gamma_floor - 1e-12))
    throw ParamError("slowest gamma is below the floor");
  for (double g : params.gamma)
    if (!std::isfinite(g)) throw ParamError("gamma entries must be finite");
  if (params.exit_p) {
    const double p = *params.exit_p;
    if (!std::isfinite(p) || p < 0.0 || p > 1.0)
      throw ParamError("exit_p must lie in [0,1]");
  }
}

GeneratorMatrix to_generator(const CoxianParams& params) {
  validate_params(params);
  const int n = params.order();
  GeneratorMatrix gen;
  gen.alpha = params.beta;
  gen.q.assign(static_cast<std::size_t>(n) * n, 0.0);
  gen.a.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    gen.q[static_cast<std::size_t>(i) * n + i] = -params.gamma[i];
    if (i == 0)
      gen.a[0] = params.gamma[0];
    else
      gen.q[static_cast<std::size_t>(i) * n + (i - 1)] = params.gamma[i];
  }
  return gen;
}

namespace {

// e^M by scaling-and-squaring with a truncated Taylor series.  Sized for
// tiny matrices (n <= 3 in practice): scale until the inf-norm is <= 0.5,
// then take 18 series terms.
std::vector<double> expm(std::vector<double> m, int n) {
  for (double v : m)
    if (!std::isfinite(v)) throw DomainError("matrix exponential of non-finite matrix");
  double norm = 0.0;
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) row += std::fabs(m[static_cast<std::size_t>(i) * n + j]);
    norm = std::max(norm, row);
  }
  int squarings = 0;
  while (norm > 0.5) {
    norm *= 0.5;
    ++squarings;
  }
  const double scale = std::ldexp(1.0, -squarings);
  for (double& v : m) v *= scale;

  const std::size_t nn = static_cast<std::size_t>(n) * n;
  std::vector<double> result(nn, 0.0);
  for (int i = 0; i < n; ++i) result[static_cast<std::size_t>(i) * n + i] = 1.0;
  std::vector<double> term = result;
  std::vector<double> next(nn);
  for (int k = 1; k <= 18; ++k) {
    // term <- term * m / k
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int l = 0; l < n; ++l)
          s += term[static_cast<std::size_t>(i) * n + l] *
               m[static_cast<std::size_t>(l) * n + j];
        next[static_cast<std::size_t>(i) * n + j] = s / k;
      }
    }
    term.swap(next);
    for (std::size_t i = 0; i < nn; ++i) result[i] += term[i];
  }
  for (int s = 0; s < squarings; ++s) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int l = 0; l < n; ++l)
          acc += result[static_cast<std::size_t>(i) * n + l] *
                 result[static_cast<std::size_t>(l) * n + j];
        next[static_cast<std::size_t>(i) * n + j] = acc;
      }
    }
    result.swap(next);
  }
  return result;
}

void check_generator(const GeneratorMatrix& gen) {
  const int n = gen.order();
  if (n < 1 || gen.q.size() != static_cast<std::size_t>(n) * n ||
      gen.a.size() != static_cast<std::size_t>(n))
    throw ParamError("generator dimensions disagree");
  for (double v : gen.alpha)
    if (!std::isfinite(v)) throw DomainError("non-finite alpha");
  for (double v : gen.q)
    if (!std::isfinite(v)) throw DomainError("non-finite Q");
  for (double v : gen.a)
    if (!std::isfinite(v)) throw DomainError("non-finite a");
}

}  // namespace

double general_ph_pdf(const GeneratorMatrix& gen, double t) {
  check_generator(gen);
  if (t < 0.0) throw DomainError("time must be >= 0");
  const int n = gen.order();
  std::vector<double> qt(gen.q);
  for (double& v : qt) v *= t;
  const std::vector<double> e = expm(std::move(qt), n);
  double result = 0.0;
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) row += e[static_cast<std::size_t>(i) * n + j] * gen.a[j];
    result += gen.alpha[i] * row;
  }
  return result;
}

double general_ph_cdf(const GeneratorMatrix& gen, double t) {
  check_generator(gen);
  if (t < 0.0) throw DomainError("time must be >= 0");
  const int n = gen.order();
  std::vector<double> qt(gen.q);
  for (double& v : qt) v *= t;
  const std::vector<double> e = expm(std::move(qt), n);
  double surv = 0.0;
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) row += e[static_cast<std::size_t>(i) * n + j];
    surv += gen.alpha[i] * row;
  }
  return 1.0 - surv;
}

CoxianDist::CoxianDist(const CoxianParams& params, double delta,
                       double gamma_floor)
    : n_(params.order()), beta_(params.beta), gamma_(params.gamma) {
  validate_params(params, delta, gamma_floor);

  // Branch-k density: sum_{j<=k} coef_[k][j] e^{-gamma_j t} with
  //   coef_[k][j] = (prod_{l<=k} gamma_l) / prod_{l<=k, l!=j} (gamma_l - gamma_j).
  coef_.assign(n_, {});
  scoef_.assign(n_, {});
  for (int k = 0; k < n_; ++k) {
    coef_[k].assign(k + 1, 0.0);
    scoef_[k].assign(k + 1, 0.0);
    double rate_product = 1.0;
    for (int l = 0; l <= k; ++l) rate_product *= gamma_[l];
    for (int j = 0; j <= k; ++j) {
      double denom = 1.0;
      for (int l = 0; l <= k; ++l)
        if (l != j) denom *= gamma_[l] - gamma_[j];
      coef_[k][j] = rate_product / denom;
      scoef_[k][j] = coef_[k][j] / gamma_[j];
    }
  }

  wpdf_.assign(n_, 0.0);
  wsurv_.assign(n_, 0.0);
  for (int k = 0; k < n_; ++k)
    for (int j = 0; j <= k; ++j) {
      wpdf_[j] += beta_[k] * coef_[k][j];
      wsurv_[j] += beta_[k] * scoef_[k][j];
    }

  // d coef_[k][j] / d gamma_i (zero for i > k):
  //   i != j: coef * (1/gamma_i - 1/(gamma_i - gamma_j))
  //   i == j: coef * (1/gamma_j + sum_{l<=k, l!=j} 1/(gamma_l - gamma_j))
  dpdf_.assign(n_, std::vector<double>(n_, 0.0));
  dsurv_.assign(n_, std::vector<double>(n_, 0.0));
  for (int k = 0; k < n_; ++k) {
    for (int i = 0; i <= k; ++i) {
      for (int j = 0; j <= k; ++j) {
        double dc;
        if (i != j) {
          dc = coef_[k][j] * (1.0 / gamma_[i] - 1.0 / (gamma_[i] - gamma_[j]));
        } else {
          double s = 1.0 / gamma_[j];
          for (int l = 0; l <= k; ++l)
            if (l != j) s += 1.0 / (gamma_[l] - gamma_[j]);
          dc = coef_[k][j] * s;
        }
        dpdf_[i][j] += beta_[k] * dc;
        double ds = dc / gamma_[j];
        if (i == j) ds -= coef_[k][j] / (gamma_[j] * gamma_[j]);
        dsurv_[i][j] += beta_[k] * ds;
      }
    }
  }
}

double CoxianDist::pdf(double t) const {
  if (t < 0.0) throw DomainError("time must be >= 0");
  double f = 0.0;
  for (int j = 0; j < n_; ++j) f += wpdf_[j] * std::exp(-gamma_[j] * t);
  return std::max(f, 0.0);
}

double CoxianDist::survival(double t) const {
  if (t < 0.0) throw DomainError("time must be >= 0");
  double s = 0.0;
  for (int j = 0; j < n_; ++j) s += wsurv_[j] * std::exp(-gamma_[j] * t);
  return std::clamp(s, 0.0, 1.0);
}

double CoxianDist::cdf(double t) const { return 1.0 - survival(t); }

double CoxianDist::mean() const {
  double m = 0.0;
  double branch_mean = 0.0;
  for (int k = 0; k < n_; ++k) {
    branch_mean += 1.0 / gamma_[k];
    m += beta_[k] * branch_mean;
  }
  return m;
}

double CoxianDist::quantile(double q) const {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("quantile level outside (0,1)");
  double hi = mean();
  if (hi <= 0.0) hi = 1.0;
  while (cdf(hi) < q) hi *= 2.0;
  double lo = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (cdf(mid) < q)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-14 * std::max(1.0, hi)) break;
  }
  return 0.5 * (lo + hi);
}

std::pair<int, double> CoxianDist::sample_branch(Rng& rng) const {
  const double u = rng.uniform();
  int branch = n_ - 1;
  double acc = 0.0;
  for (int k = 0; k < n_; ++k) {
    acc += beta_[k];
    if (u < acc) {
      branch = k;
      break;
    }
  }
  double t = 0.0;
  for (int l = 0; l <= branch; ++l) t += rng.exponential(gamma_[l]);
  return {branch, t};
}

double CoxianDist::sample(Rng& rng) const { return sample_branch(rng).second; }

double CoxianDist::passive_posterior(double t) const {
  if (n_ != 2) throw DomainError("passive posterior requires order 2");
  if (t < 0.0) throw DomainError("time must be >= 0");
  // beta_2 * S_2(t) / S(t) with S_2 the two-stage branch survival.
  double s2 = 0.0;
  for (int j = 0; j < 2; ++j) s2 += scoef_[1][j] * std::exp(-gamma_[j] * t);
  const double s = survival(t);
  if (s < 1e-300)
    throw DomainError("survival underflow in passive posterior tail");
  return std::clamp(beta_[1] * s2 / s, 0.0, 1.0);
}

void CoxianDist::pdf_grad(double t, double& value, std::span<double> d_beta,
                          std::span<double> d_gamma) const {
  if (t < 0.0) throw DomainError("time must be >= 0");
  double e[8];
  for (int j = 0; j < n_; ++j) e[j] = std::exp(-gamma_[j] * t);
  value = 0.0;
  for (int j = 0; j < n_; ++j) value += wpdf_[j] * e[j];
  for (int k = 0; k < n_; ++k) {
    double fk = 0.0;
    for (int j = 0; j <= k; ++j) fk += coef_[k][j] * e[j];
    d_beta[k] = fk;
  }
  for (int i = 0; i < n_; ++i) {
    double g = -wpdf_[i] * t * e[i];
    for (int j = 0; j < n_; ++j) g += dpdf_[i][j] * e[j];
    d_gamma[i] = g;
  }
}

void CoxianDist::survival_grad(double t, double& value, std::span<double> d_beta,
                               std::span<double> d_gamma) const {
  if (t < 0.0) throw DomainError("time must be >= 0");
  double e[8];
  for (int j = 0; j < n_; ++j) e[j] = std::exp(-gamma_[j] * t);
  value = 0.0;
  for (int j = 0; j < n_; ++j) value += wsurv_[j] * e[j];
  for (int k = 0; k < n_; ++k) {
    double sk = 0.0;
    for (int j = 0; j <= k; ++j) sk += scoef_[k][j] * e[j];
    d_beta[k] = sk;
  }
  for (int i = 0; i < n_; ++i) {
    double g = -wsurv_[i] * t * e[i];
    for (int j = 0; j < n_; ++j) g += dsurv_[i][j] * e[j];
    d_gamma[i] = g;
  }
}

double coxian_pdf(const CoxianParams& params, double t) {
  return CoxianDist(params).pdf(t);
}

double coxian_cdf(const CoxianParams& params, double t) {
  return CoxianDist(params).cdf(t);
}

double coxian_mean(const CoxianParams& params) {
  return CoxianDist(params).mean();
}

double coxian_quantile(const CoxianParams& params, double q) {
  return CoxianDist(params).quantile(q);
}

double coxian_sample(const CoxianParams& params, Rng& rng) {
  return CoxianDist(params).sample(rng);
}

double passive_posterior(const CoxianParams& params, double t) {
  return CoxianDist(params).passive_posterior(t);
}

std::vector<double> q_to_beta(const std::vector<double>& q) {
  if (q.empty()) throw ParamError("q must be nonempty");
  for (double v : q)
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw ParamError("q entries must lie in [0,1]");
  if (std::fabs(q.back() - 1.0) > 1e-12)
    throw ParamError("terminal q entry must equal 1");
  std::vector<double> beta(q.size());
  double remaining = 1.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    beta[i] = q[i] * remaining;
    remaining *= 1.0 - q[i];
  }
  return beta;
}

std::vector<double> beta_to_q(const std::vector<double>& beta) {
  if (beta.empty()) throw ParamError("beta must be nonempty");
  double sum = 0.0;
  for (double b : beta) {
    if (!std::isfinite(b) || b < 0.0) throw ParamError("beta entries must be >= 0");
    sum += b;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw ParamError("beta must sum to 1");
  std::vector<double> q(beta.size());
  double remaining = 1.0;
  for (std::size_t i = 0; i < beta.size(); ++i) {
    if (remaining < 1e-14) {
      if (beta[i] > 1e-14)
        throw ParamError("degenerate tail: mass left after the simplex emptied");
      q[i] = 1.0;  // 0/0 convention keeps the terminal invariant
    } else {
      q[i] = std::clamp(beta[i] / remaining, 0.0, 1.0);
    }
    remaining -= beta[i];
  }
  q.back() = 1.0;
  return q;
}

}  // namespace sepmodel
