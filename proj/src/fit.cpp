#include "sepmodel/fit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>

#include "sepmodel/rng.hpp"
#include "sepmodel/stats.hpp"

namespace sepmodel {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) {
  const double c = std::clamp(p, 1e-9, 1.0 - 1e-9);
  return std::log(c / (1.0 - c));
}

// Stick-breaking map from n-1 free logits to the simplex.
std::vector<double> stick_to_beta(std::span<const double> u, int n) {
  std::vector<double> beta(static_cast<std::size_t>(n));
  double remaining = 1.0;
  for (int i = 0; i < n - 1; ++i) {
    const double q = sigmoid(u[static_cast<std::size_t>(i)]);
    beta[static_cast<std::size_t>(i)] = q * remaining;
    remaining *= 1.0 - q;
  }
  beta[static_cast<std::size_t>(n - 1)] = remaining;
  return beta;
}

// dL/du from dL/dbeta through the stick-breaking Jacobian.
void stick_chain(std::span<const double> u, std::span<const double> d_beta,
                 int n, std::span<double> d_u) {
  std::vector<double> q(static_cast<std::size_t>(n - 1));
  std::vector<double> prod(static_cast<std::size_t>(n), 1.0);  // prod_{l<k}(1-q_l)
  for (int i = 0; i < n - 1; ++i) {
    q[static_cast<std::size_t>(i)] = sigmoid(u[static_cast<std::size_t>(i)]);
    prod[static_cast<std::size_t>(i + 1)] =
        prod[static_cast<std::size_t>(i)] * (1.0 - q[static_cast<std::size_t>(i)]);
  }
  std::vector<double> beta(static_cast<std::size_t>(n));
  for (int k = 0; k < n - 1; ++k)
    beta[static_cast<std::size_t>(k)] =
        q[static_cast<std::size_t>(k)] * prod[static_cast<std::size_t>(k)];
  beta[static_cast<std::size_t>(n - 1)] = prod[static_cast<std::size_t>(n - 1)];
  for (int i = 0; i < n - 1; ++i) {
    const double qi = q[static_cast<std::size_t>(i)];
    double s = d_beta[static_cast<std::size_t>(i)] * prod[static_cast<std::size_t>(i)];
    for (int k = i + 1; k < n; ++k)
      s -= d_beta[static_cast<std::size_t>(k)] *
           beta[static_cast<std::size_t>(k)] / (1.0 - qi);
    d_u[static_cast<std::size_t>(i)] = s * qi * (1.0 - qi);
  }
}

std::vector<double> beta_to_stick(const std::vector<double>& beta) {
  const int n = static_cast<int>(beta.size());
  const std::vector<double> q = beta_to_q(beta);
  std::vector<double> u(static_cast<std::size_t>(n - 1));
  for (int i = 0; i < n - 1; ++i)
    u[static_cast<std::size_t>(i)] = logit(q[static_cast<std::size_t>(i)]);
  return u;
}

// Log-gap map: gamma[n-1] = floor + e^{z_{n-1}}, gamma[i] = gamma[i+1] +
// delta + e^{z_i}.
std::vector<double> gaps_to_gamma(std::span<const double> z, int n,
                                  const FitConfig& config) {
  std::vector<double> gamma(static_cast<std::size_t>(n));
  gamma[static_cast<std::size_t>(n - 1)] =
      config.gamma_floor + std::exp(z[static_cast<std::size_t>(n - 1)]);
  for (int i = n - 2; i >= 0; --i)
    gamma[static_cast<std::size_t>(i)] = gamma[static_cast<std::size_t>(i + 1)] +
                                         config.delta +
                                         std::exp(z[static_cast<std::size_t>(i)]);
  return gamma;
}

void gaps_chain(std::span<const double> z, std::span<const double> d_gamma,
                int n, std::span<double> d_z) {
  // gamma_i depends on z_l for every l >= i.
  double acc = 0.0;
  for (int l = 0; l < n; ++l) {
    acc += d_gamma[static_cast<std::size_t>(l)];
    d_z[static_cast<std::size_t>(l)] =
        acc * std::exp(z[static_cast<std::size_t>(l)]);
  }
}

std::vector<double> gamma_to_gaps(const std::vector<double>& gamma,
                                  const FitConfig& config) {
  const int n = static_cast<int>(gamma.size());
  std::vector<double> z(static_cast<std::size_t>(n));
  z[static_cast<std::size_t>(n - 1)] = std::log(
      std::max(gamma[static_cast<std::size_t>(n - 1)] - config.gamma_floor, 1e-12));
  for (int i = 0; i < n - 1; ++i)
    z[static_cast<std::size_t>(i)] =
        std::log(std::max(gamma[static_cast<std::size_t>(i)] -
                              gamma[static_cast<std::size_t>(i + 1)] - config.delta,
                          1e-12));
  return z;
}

}  // namespace

std::vector<double> featureless_to_unconstrained(const CoxianParams& params,
                                                 double exit_p,
                                                 const FitConfig& config) {
  const int n = params.order();
  std::vector<double> theta;
  theta.reserve(static_cast<std::size_t>(2 * n));
  for (double u : beta_to_stick(params.beta)) theta.push_back(u);
  for (double z : gamma_to_gaps(params.gamma, config)) theta.push_back(z);
  theta.push_back(logit(exit_p));
  return theta;
}

CoxianParams unconstrained_to_featureless(const std::vector<double>& theta,
                                          int order, const FitConfig& config) {
  if (theta.size() != static_cast<std::size_t>(2 * order))
    throw ParamError("unconstrained vector has the wrong length");
  const std::span<const double> view(theta);
  CoxianParams params;
  params.beta = stick_to_beta(view.first(static_cast<std::size_t>(order - 1)), order);
  params.gamma = gaps_to_gamma(
      view.subspan(static_cast<std::size_t>(order - 1), static_cast<std::size_t>(order)),
      order, config);
  params.exit_p = sigmoid(theta.back());
  return params;
}

AscentObjective featureless_objective(const ObservationSet& obs, int order,
                                      const FitConfig& config) {
  return [obs, order, config](const std::vector<double>& theta, double& value,
                              std::vector<double>& grad) -> bool {
    const int n = order;
    CoxianParams params;
    try {
      params = unconstrained_to_featureless(theta, n, config);
    } catch (const Error&) {
      return false;
    }
    FeaturelessGrad fg;
    try {
      value = featureless_loglik_grad(params, *params.exit_p, obs, fg);
    } catch (const LogDomainError&) {
      return false;
    }
    if (!std::isfinite(value)) return false;
    grad.assign(theta.size(), 0.0);
    const std::span<const double> view(theta);
    const std::span<const double> u = view.first(static_cast<std::size_t>(n - 1));
    const std::span<const double> z =
        view.subspan(static_cast<std::size_t>(n - 1), static_cast<std::size_t>(n));
    std::span<double> gout(grad);
    stick_chain(u, fg.d_beta, n, gout.first(static_cast<std::size_t>(n - 1)));
    gaps_chain(z, fg.d_gamma, n,
               gout.subspan(static_cast<std::size_t>(n - 1), static_cast<std::size_t>(n)));
    const double p = *params.exit_p;
    grad.back() = fg.d_p * p * (1.0 - p);
    return true;
  };
}

FitResult fit_featureless(const ObservationSet& obs, const FitConfig& config,
                          std::uint64_t seed, int order, int starts) {
  config.validate();
  if (obs.empty()) throw ParamError("observation set is empty");
  if (order < 1 || order > 3) throw ParamError("order must be between 1 and 3");
  if (starts < 1) throw ParamError("need at least one start");

  // Heuristic center: fast state near the median gap, geometric decay below.
  std::vector<double> times;
  times.reserve(obs.uncensored.size());
  for (const auto& o : obs.uncensored) times.push_back(std::max(o.t, 1e-3));
  const double med = times.empty() ? 30.0 : empirical_quantile(times, 0.5);

  CoxianParams center;
  center.gamma.assign(static_cast<std::size_t>(order), 0.0);
  center.gamma[0] = std::max(1.0 / std::max(med, 1e-3), config.gamma_floor * 4.0);
  for (int i = 1; i < order; ++i)
    center.gamma[static_cast<std::size_t>(i)] =
        center.gamma[static_cast<std::size_t>(i - 1)] / 8.0;
  // Repair from the slow end so the center is strictly feasible.
  center.gamma[static_cast<std::size_t>(order - 1)] = std::max(
      center.gamma[static_cast<std::size_t>(order - 1)], config.gamma_floor * 2.0);
  for (int i = order - 2; i >= 0; --i)
    center.gamma[static_cast<std::size_t>(i)] =
        std::max(center.gamma[static_cast<std::size_t>(i)],
                 center.gamma[static_cast<std::size_t>(i + 1)] + 2.0 * config.delta);
  center.beta.assign(static_cast<std::size_t>(order), 0.0);
  if (order == 1) {
    center.beta = {1.0};
  } else if (order == 2) {
    center.beta = {0.75, 0.25};
  } else {
    center.beta = {0.7, 0.2, 0.1};
  }
  const double p0 = 0.1;
  const std::vector<double> theta_center =
      featureless_to_unconstrained(center, p0, config);

  const AscentObjective objective = featureless_objective(obs, order, config);
  AscentOptions options;
  options.max_iters = config.max_iters;
  options.tol = config.tol;

  std::vector<AscentResult> runs(static_cast<std::size_t>(starts));
  std::vector<char> failed(static_cast<std::size_t>(starts), 0);
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < starts; ++s) {
    std::vector<double> theta = theta_center;
    if (s > 0) {
      Rng rng(derive_seed(seed, "multistart", static_cast<std::uint64_t>(s)));
      for (int i = 0; i < order - 1; ++i)
        theta[static_cast<std::size_t>(i)] += rng.uniform(-1.0, 1.0);
      for (int i = 0; i < order; ++i)
        theta[static_cast<std::size_t>(order - 1 + i)] += rng.uniform(-0.5, 0.5);
      theta.back() += rng.uniform(-1.0, 1.0);
    }
    try {
      runs[static_cast<std::size_t>(s)] = lbfgs_maximize(objective, theta, options);
    } catch (const Error&) {
      failed[static_cast<std::size_t>(s)] = 1;
    }
  }

  int best = -1;
  for (int s = 0; s < starts; ++s) {
    if (failed[static_cast<std::size_t>(s)]) continue;
    if (best < 0 || runs[static_cast<std::size_t>(s)].value >
                        runs[static_cast<std::size_t>(best)].value)
      best = s;
  }
  if (best < 0)
    throw ConvergenceError("every start failed its line search");

  const AscentResult& winner = runs[static_cast<std::size_t>(best)];
  FitResult result;
  result.params = unconstrained_to_featureless(winner.x, order, config);
  result.objective_trace = winner.trace;
  result.converged = winner.converged;
  result.iterations = winner.iterations;
  result.seed = seed;
  return result;
}

namespace {

// Shared state for the block-coordinate contextual fit.
class ContextualProblem {
 public:
  ContextualProblem(const ObservationSet& obs,
                    const std::vector<ClientFeatures>& features,
                    const CoxianParams& featureless, const FitConfig& config)
      : features_(features),
        config_(config),
        n_(featureless.order()),
        m_(static_cast<int>(features.front().x.size())),
        nv_(features.size()),
        index_(group_by_client(obs, static_cast<int>(features.size()))),
        intercept_beta_(featureless.beta),
        intercept_gamma_(featureless.gamma) {
    if (!featureless.exit_p)
      throw ParamError("contextual fit needs the featureless exit probability");
    rho0_ = logit(*featureless.exit_p);
    for (const auto& f : features_)
      if (static_cast<int>(f.x.size()) != m_)
        throw ParamError("inconsistent feature vector length");
  }

  int dim() const { return 2 * n_ * m_ + m_; }
  int order() const { return n_; }
  int feature_count() const { return m_; }
  std::size_t client_count() const { return nv_; }

  RegressionCoefficients unpack(const std::vector<double>& theta) const {
    RegressionCoefficients coeffs;
    coeffs.b.assign(static_cast<std::size_t>(n_),
                    std::vector<double>(static_cast<std::size_t>(m_ + 1), 0.0));
    coeffs.g = coeffs.b;
    coeffs.rho.assign(static_cast<std::size_t>(m_ + 1), 0.0);
    for (int i = 0; i < n_; ++i) {
      coeffs.b[static_cast<std::size_t>(i)][0] =
          intercept_beta_[static_cast<std::size_t>(i)];
      coeffs.g[static_cast<std::size_t>(i)][0] =
          intercept_gamma_[static_cast<std::size_t>(i)];
      for (int j = 0; j < m_; ++j) {
        coeffs.b[static_cast<std::size_t>(i)][static_cast<std::size_t>(j + 1)] =
            theta[b_index(i, j)];
        coeffs.g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j + 1)] =
            theta[g_index(i, j)];
      }
    }
    coeffs.rho[0] = rho0_;
    for (int j = 0; j < m_; ++j)
      coeffs.rho[static_cast<std::size_t>(j + 1)] = theta[rho_index(j)];
    return coeffs;
  }

  // Affine beta map (no projection; residuals are free).
  std::vector<double> affine_beta(const std::vector<double>& theta,
                                  std::size_t v) const {
    std::vector<double> out(static_cast<std::size_t>(n_));
    for (int i = 0; i < n_; ++i) {
      double s = intercept_beta_[static_cast<std::size_t>(i)];
      for (int j = 0; j < m_; ++j)
        s += theta[b_index(i, j)] * features_[v].x[static_cast<std::size_t>(j)];
      out[static_cast<std::size_t>(i)] = s;
    }
    return out;
  }

  // Affine gamma map followed by the feasibility projection; active[i] is
  // true when the raw affine value survived (needed for the chain rule).
  std::vector<double> projected_gamma(const std::vector<double>& theta,
                                      std::size_t v,
                                      std::vector<char>* active) const {
    std::vector<double> raw(static_cast<std::size_t>(n_));
    for (int i = 0; i < n_; ++i) {
      double s = intercept_gamma_[static_cast<std::size_t>(i)];
      for (int j = 0; j < m_; ++j)
        s += theta[g_index(i, j)] * features_[v].x[static_cast<std::size_t>(j)];
      raw[static_cast<std::size_t>(i)] = s;
    }
    std::vector<double> gamma(static_cast<std::size_t>(n_));
    if (active) active->assign(static_cast<std::size_t>(n_), 1);
    const int last = n_ - 1;
    if (raw[static_cast<std::size_t>(last)] >= config_.gamma_floor) {
      gamma[static_cast<std::size_t>(last)] = raw[static_cast<std::size_t>(last)];
    } else {
      gamma[static_cast<std::size_t>(last)] = config_.gamma_floor;
      if (active) (*active)[static_cast<std::size_t>(last)] = 0;
    }
    for (int i = last - 1; i >= 0; --i) {
      const double lower = gamma[static_cast<std::size_t>(i + 1)] + config_.delta;
      if (raw[static_cast<std::size_t>(i)] >= lower) {
        gamma[static_cast<std::size_t>(i)] = raw[static_cast<std::size_t>(i)];
      } else {
        gamma[static_cast<std::size_t>(i)] = lower;
        if (active) (*active)[static_cast<std::size_t>(i)] = 0;
      }
    }
    return gamma;
  }

  double exit_p_of(const std::vector<double>& theta, std::size_t v) const {
    double eta = rho0_;
    for (int j = 0; j < m_; ++j)
      eta += theta[rho_index(j)] * features_[v].x[static_cast<std::size_t>(j)];
    return sigmoid(eta);
  }

  // Full objective value at (theta, per-client beta).
  double value(const std::vector<double>& theta,
               const std::vector<std::vector<double>>& beta_v) const {
    double v;
    if (!evaluate(theta, beta_v, v, nullptr))
      throw LogDomainError("contextual objective underflow", 0, false);
    return v;
  }

  // Objective and gradient w.r.t. the coefficient vector, per-client beta
  // held fixed.  Returns false on log-domain underflow.
  bool evaluate(const std::vector<double>& theta,
                const std::vector<std::vector<double>>& beta_v, double& value,
                std::vector<double>* grad) const {
    constexpr std::size_t kClientsPerBlock = 64;
    const std::size_t nblocks = (nv_ + kClientsPerBlock - 1) / kClientsPerBlock;
    const int width = dim() + 1;  // gradient + value column
    std::vector<double> partial(nblocks * static_cast<std::size_t>(width), 0.0);
    std::vector<char> block_ok(nblocks, 1);
    std::exception_ptr failure;

#pragma omp parallel for schedule(static)
    for (std::int64_t blk = 0; blk < static_cast<std::int64_t>(nblocks); ++blk) {
      try {
        double* acc = partial.data() + static_cast<std::size_t>(blk) * width;
        const std::size_t begin = static_cast<std::size_t>(blk) * kClientsPerBlock;
        const std::size_t end = std::min(begin + kClientsPerBlock, nv_);
        std::vector<char> active;
        for (std::size_t v = begin; v < end; ++v) {
          const auto& unc = index_.uncensored[v];
          const auto& cen = index_.censored[v];
          const std::vector<double>& x = features_[v].x;

          // Residual penalty couples b even for clients with no data.
          const std::vector<double> affine = affine_beta(theta, v);
          for (int i = 0; i < n_; ++i) {
            const double eps =
                beta_v[v][static_cast<std::size_t>(i)] - affine[static_cast<std::size_t>(i)];
            acc[width - 1] -= config_.eta_beta * eps * eps;
            if (grad) {
              for (int j = 0; j < m_; ++j)
                acc[b_index(i, j)] += 2.0 * config_.eta_beta * eps *
                                      x[static_cast<std::size_t>(j)];
            }
          }
          if (unc.empty() && cen.empty()) continue;

          const std::vector<double> gamma = projected_gamma(theta, v, &active);
          const double p = exit_p_of(theta, v);
          CoxianParams params;
          params.beta = beta_v[v];
          params.gamma = gamma;
          const CoxianDist dist(params, config_.delta, config_.gamma_floor);
          const ClientGradient cg = client_loglik_grad(dist, p, unc, cen);
          acc[width - 1] += cg.loglik;
          if (grad) {
            // gamma chain through the projection.
            double carry = 0.0;
            for (int i = 0; i < n_; ++i) {
              const double weight = cg.d_gamma[static_cast<std::size_t>(i)] + carry;
              if (active[static_cast<std::size_t>(i)]) {
                for (int j = 0; j < m_; ++j)
                  acc[g_index(i, j)] += weight * x[static_cast<std::size_t>(j)];
                carry = 0.0;
              } else {
                carry = weight;  // clamped entry follows the one below it
              }
            }
            const double dp = cg.d_p * p * (1.0 - p);
            for (int j = 0; j < m_; ++j)
              acc[rho_index(j)] += dp * x[static_cast<std::size_t>(j)];
          }
        }
      } catch (const LogDomainError&) {
        feasible = false;
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
    if (!feasible) return false;

    // Deterministic column-wise combine.
    std::vector<double> column(nblocks);
    const auto sum_column = [&](int col) {
      for (std::size_t r = 0; r < nblocks; ++r)
        column[r] = partial[r * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)];
      return pairwise_sum(column);
    };

    value = sum_column(width - 1);
    if (grad) grad->assign(static_cast<std::size_t>(dim()), 0.0);

    // Coefficient regularization (intercepts are fixed and excluded).
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < m_; ++j) {
        const double b = theta[b_index(i, j)];
        const double g = theta[g_index(i, j)];
        value -= config_.eta_b * b * b + config_.eta_g * g * g;
      }
    for (int j = 0; j < m_; ++j) {
      const double r = theta[rho_index(j)];
      value -= config_.eta_rho * r * r;
    }
    if (!std::isfinite(value)) return false;

    if (grad) {
      for (int c = 0; c < dim(); ++c) (*grad)[static_cast<std::size_t>(c)] = sum_column(c);
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < m_; ++j) {
          (*grad)[b_index(i, j)] -= 2.0 * config_.eta_b * theta[b_index(i, j)];
          (*grad)[g_index(i, j)] -= 2.0 * config_.eta_g * theta[g_index(i, j)];
        }
      for (int j = 0; j < m_; ++j)
        (*grad)[rho_index(j)] -= 2.0 * config_.eta_rho * theta[rho_index(j)];
    }
    return true;
  }

  // Separable per-client update of beta_v by ascent on stick logits.
  void update_client(const std::vector<double>& theta, std::size_t v,
                     std::vector<double>& beta) const {
    if (n_ == 1) return;
    const auto& unc = index_.uncensored[v];
    const auto& cen = index_.censored[v];
    const std::vector<double> affine = affine_beta(theta, v);
    std::vector<char> active;
    const std::vector<double> gamma = projected_gamma(theta, v, &active);
    const double p = exit_p_of(theta, v);

    const AscentObjective objective = [&](const std::vector<double>& u,
                                          double& value,
                                          std::vector<double>& grad) -> bool {
      const std::vector<double> bv = stick_to_beta(u, n_);
      std::vector<double> d_beta(static_cast<std::size_t>(n_), 0.0);
      value = 0.0;
      if (!unc.empty() || !cen.empty()) {
        CoxianParams params;
        params.beta = bv;
        params.gamma = gamma;
        try {
          const CoxianDist dist(params, config_.delta, config_.gamma_floor);
          const ClientGradient cg = client_loglik_grad(dist, p, unc, cen);
          value = cg.loglik;
          d_beta = cg.d_beta;
        } catch (const Error&) {
          return false;
        }
      }
      for (int i = 0; i < n_; ++i) {
        const double eps =
            bv[static_cast<std::size_t>(i)] - affine[static_cast<std::size_t>(i)];
        value -= config_.eta_beta * eps * eps;
        d_beta[static_cast<std::size_t>(i)] -= 2.0 * config_.eta_beta * eps;
      }
      grad.assign(u.size(), 0.0);
      stick_chain(u, d_beta, n_, grad);
      return std::isfinite(value);
    };

    AscentOptions options;
    options.max_iters = 30;
    options.tol = 1e-10;
    try {
      const AscentResult res = lbfgs_maximize(objective, beta_to_stick(beta), options);
      beta = stick_to_beta(res.x, n_);
    } catch (const Error&) {
      // Keep the previous feasible beta when the subproblem cannot start.
    }
  }

  std::size_t b_index(int i, int j) const {
    return static_cast<std::size_t>(i * m_ + j);
  }
  std::size_t g_index(int i, int j) const {
    return static_cast<std::size_t>(n_ * m_ + i * m_ + j);
  }
  std::size_t rho_index(int j) const {
    return static_cast<std::size_t>(2 * n_ * m_ + j);
  }

 private:
  const std::vector<ClientFeatures>& features_;
  FitConfig config_;
  int n_;
  int m_;
  std::size_t nv_;
  ClientIndex index_;
  std::vector<double> intercept_beta_;
  std::vector<double> intercept_gamma_;
  double rho0_ = 0.0;
};

}  // namespace

FitResult fit_contextual(const ObservationSet& obs,
                         const std::vector<ClientFeatures>& features,
                         const CoxianParams& featureless,
                         const FitConfig& config, std::uint64_t seed) {
  config.validate();
  validate_params(featureless, config.delta, config.gamma_floor);
  if (features.empty()) throw ParamError("contextual fit needs client features");
  if (obs.empty()) throw ParamError("observation set is empty");

  const ContextualProblem problem(obs, features, featureless, config);
  const int n = problem.order();

  std::vector<double> theta(static_cast<std::size_t>(problem.dim()), 0.0);
  std::vector<std::vector<double>> beta_v(problem.client_count(),
                                          featureless.beta);

  AscentOptions inner;
  inner.max_iters = std::min(config.max_iters, 80);
  inner.tol = config.tol;

  FitResult result;
  result.seed = seed;
  double joint = problem.value(theta, beta_v);
  result.objective_trace.push_back(joint);

  const int max_rounds = 40;
  for (int round = 0; round < max_rounds; ++round) {
    result.iterations = round + 1;

    // Coefficient block.
    const AscentObjective coeff_objective =
        [&](const std::vector<double>& th, double& value,
            std::vector<double>& grad) -> bool {
      return problem.evaluate(th, beta_v, value, &grad);
    };
    const AscentResult res = lbfgs_maximize(coeff_objective, theta, inner);
    theta = res.x;

    // Client blocks (separable given the coefficients).
    if (n > 1) {
      const std::int64_t nv = static_cast<std::int64_t>(problem.client_count());
#pragma omp parallel for schedule(static)
      for (std::int64_t v = 0; v < nv; ++v)
        problem.update_client(theta, static_cast<std::size_t>(v),
                              beta_v[static_cast<std::size_t>(v)]);
    }

    const double next = problem.value(theta, beta_v);
    result.objective_trace.push_back(next);
    const double improvement = (next - joint) / std::max(1.0, std::fabs(next));
    joint = next;
    if (improvement < config.tol) {
      result.converged = true;
      break;
    }
  }

  result.coeffs = problem.unpack(theta);
  return result;
}

BootstrapTable bootstrap_significance(
    const ObservationSet& obs, const std::vector<ClientFeatures>& features,
    const CoxianParams& featureless, const FitConfig& config, int replicates,
    std::uint64_t seed, const std::vector<std::string>& feature_names) {
  if (replicates < 1) throw ParamError("need at least one replicate");
  const std::size_t nv = features.size();
  if (nv == 0) throw ParamError("bootstrap needs client features");
  const int n = featureless.order();
  const int m = static_cast<int>(features.front().x.size());
  if (!feature_names.empty() && static_cast<int>(feature_names.size()) != m)
    throw ParamError("feature_names length disagrees with features");
  const ClientIndex index = group_by_client(obs, static_cast<int>(nv));

  // Stats per feature: rho, b1, one per gamma row, delta, sojourn change.
  const int nstats = 3 + n;
  const auto stat_name = [&](int s, int j) {
    const std::string feat = feature_names.empty()
                                 ? "x" + std::to_string(j + 1)
                                 : feature_names[static_cast<std::size_t>(j)];
    if (s == 0) return "rho[" + feat + "]";
    if (s == 1) return "b1[" + feat + "]";
    if (s < 2 + n) return "g" + std::to_string(s - 1) + "[" + feat + "]";
    if (s == 2 + n) return "delta[" + feat + "]";
    return "sojourn[" + feat + "]";
  };

  std::vector<std::vector<char>> positive(
      static_cast<std::size_t>(replicates),
      std::vector<char>(static_cast<std::size_t>(nstats * m), 0));
  std::vector<char> failed(static_cast<std::size_t>(replicates), 0);

#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < replicates; ++r) {
    try {
      Rng rng(derive_seed(seed, "bootstrap", static_cast<std::uint64_t>(r)));
      std::vector<ClientFeatures> feats;
      feats.reserve(nv);
      ObservationSet sample;
      for (std::size_t k = 0; k < nv; ++k) {
        const std::size_t c = rng.uniform_int(nv);
        feats.push_back(features[c]);
        for (double t : index.uncensored[c])
          sample.uncensored.push_back({t, static_cast<int>(k)});
        for (double t : index.censored[c])
          sample.censored.push_back({t, static_cast<int>(k)});
      }
      const FitResult fit =
          fit_contextual(sample, feats, featureless, config,
                         derive_seed(seed, "fit", static_cast<std::uint64_t>(r)));
      const RegressionCoefficients& coeffs = *fit.coeffs;
      auto& row = positive[static_cast<std::size_t>(r)];
      for (int j = 0; j < m; ++j) {
        int s = 0;
        row[static_cast<std::size_t>(s++ * m + j)] =
            coeffs.rho[static_cast<std::size_t>(j + 1)] > 0.0;
        row[static_cast<std::size_t>(s++ * m + j)] =
            coeffs.b[0][static_cast<std::size_t>(j + 1)] > 0.0;
        for (int i = 0; i < n; ++i)
          row[static_cast<std::size_t>(s++ * m + j)] =
              coeffs.g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j + 1)] > 0.0;
        row[static_cast<std::size_t>(s++ * m + j)] =
            delta_inter_arrival(coeffs, j + 1, config) > 0.0;
        row[static_cast<std::size_t>(s++ * m + j)] =
            delta_sojourn(coeffs, j + 1, config) > 0.0;
      }
    } catch (const Error&) {
      failed[static_cast<std::size_t>(r)] = 1;
    }
  }

  BootstrapTable table;
  table.replicates = replicates;
  for (char f : failed) table.failed += f;
  if (10 * table.failed > replicates)
    throw ConvergenceError("more than 10% of bootstrap replicates failed (" +
                           std::to_string(table.failed) + "/" +
                           std::to_string(replicates) + ")");

  for (int s = 0; s < nstats; ++s) {
    for (int j = 0; j < m; ++j) {
      BootstrapRow row;
      row.coefficient = stat_name(s, j);
      for (int r = 0; r < replicates; ++r)
        if (!failed[static_cast<std::size_t>(r)])
          row.positive_count +=
              positive[static_cast<std::size_t>(r)][static_cast<std::size_t>(s * m + j)];
      row.significant = 10 * row.positive_count >= 9 * replicates ||
                        10 * row.positive_count <= replicates;
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

}  // namespace sepmodel
