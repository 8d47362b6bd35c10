#include "sepmodel/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>

#include "sepmodel/stats.hpp"

namespace sepmodel {

namespace {

constexpr std::size_t kBlock = 1024;
constexpr double kLogFloor = 1e-300;

// Evaluate per-index terms in fixed-size blocks (OpenMP across blocks) and
// combine the block sums pairwise.  The partition depends only on the
// element count, so results are identical for any thread count.
template <typename TermFn>
double blocked_sum(std::size_t count, const TermFn& term) {
  if (count == 0) return 0.0;
  const std::int64_t nblocks =
      static_cast<std::int64_t>((count + kBlock - 1) / kBlock);
  std::vector<double> partial(static_cast<std::size_t>(nblocks), 0.0);
  std::exception_ptr failure;
#pragma omp parallel for schedule(static)
  for (std::int64_t blk = 0; blk < nblocks; ++blk) {
    try {
      const std::size_t begin = static_cast<std::size_t>(blk) * kBlock;
      const std::size_t end = std::min(begin + kBlock, count);
      double s = 0.0;
      for (std::size_t i = begin; i < end; ++i) s += term(i);
      partial[static_cast<std::size_t>(blk)] = s;
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return pairwise_sum(partial);
}

double log_guarded(double value, std::size_t index, bool censored,
                   const char* what) {
  if (!(value > kLogFloor))
    throw LogDomainError(std::string(what) + " underflowed the log domain at " +
                             (censored ? "censored" : "uncensored") +
                             " observation " + std::to_string(index),
                         index, censored);
  return std::log(value);
}

}  // namespace

void validate_observations(const ObservationSet& obs, int client_count) {
  std::vector<char> censored_seen(static_cast<std::size_t>(client_count), 0);
  for (const auto& o : obs.uncensored) {
    if (!std::isfinite(o.t) || o.t < 0.0)
      throw ParamError("uncensored times must be finite and >= 0");
    if (o.client < 0 || o.client >= client_count)
      throw ParamError("uncensored client index out of range");
  }
  for (const auto& o : obs.censored) {
    if (!std::isfinite(o.t) || o.t < 0.0)
      throw ParamError("censored times must be finite and >= 0");
    if (o.client < 0 || o.client >= client_count)
      throw ParamError("censored client index out of range");
    if (censored_seen[static_cast<std::size_t>(o.client)]++)
      throw ParamError("client " + std::to_string(o.client) +
                       " carries more than one censored gap");
  }
}

void validate_coefficients(const RegressionCoefficients& coeffs) {
  const int n = coeffs.order();
  if (n < 1) throw ParamError("coefficients need at least one state row");
  const std::size_t cols = coeffs.b.front().size();
  if (cols < 1) throw ParamError("coefficient rows need an intercept column");
  for (const auto& row : coeffs.b)
    if (row.size() != cols) throw ParamError("ragged b matrix");
  if (coeffs.g.size() != static_cast<std::size_t>(n))
    throw ParamError("b and g must have the same number of rows");
  for (const auto& row : coeffs.g)
    if (row.size() != cols) throw ParamError("ragged g matrix");
  if (coeffs.rho.size() != cols)
    throw ParamError("rho length must match coefficient columns");
  for (const auto& row : coeffs.b)
    for (double v : row)
      if (!std::isfinite(v)) throw ParamError("non-finite b entry");
  for (const auto& row : coeffs.g)
    for (double v : row)
      if (!std::isfinite(v)) throw ParamError("non-finite g entry");
  for (double v : coeffs.rho)
    if (!std::isfinite(v)) throw ParamError("non-finite rho entry");
  if (!coeffs.feature_names.empty() &&
      coeffs.feature_names.size() != cols - 1)
    throw ParamError("feature_names length must match coefficient columns");
}

double featureless_loglik(const CoxianParams& params, double exit_p,
                          const ObservationSet& obs) {
  if (!(exit_p >= 0.0 && exit_p <= 1.0))
    throw ParamError("exit probability must lie in [0,1]");
  const CoxianDist dist(params);
  const double unc = blocked_sum(obs.uncensored.size(), [&](std::size_t i) {
    const auto& o = obs.uncensored[i];
    return log_guarded(dist.pdf(o.t), i, false, "density") +
           log_guarded(1.0 - exit_p, i, false, "stay probability");
  });
  const double cen = blocked_sum(obs.censored.size(), [&](std::size_t i) {
    const auto& o = obs.censored[i];
    const double term = dist.survival(o.t) * (1.0 - exit_p) + exit_p;
    return log_guarded(term, i, true, "censored term");
  });
  return unc + cen;
}

double featureless_loglik_serial(const CoxianParams& params, double exit_p,
                                 const ObservationSet& obs) {
  if (!(exit_p >= 0.0 && exit_p <= 1.0))
    throw ParamError("exit probability must lie in [0,1]");
  const CoxianDist dist(params);
  double total = 0.0;
  for (std::size_t i = 0; i < obs.uncensored.size(); ++i) {
    total += log_guarded(dist.pdf(obs.uncensored[i].t), i, false, "density");
    total += log_guarded(1.0 - exit_p, i, false, "stay probability");
  }
  for (std::size_t i = 0; i < obs.censored.size(); ++i) {
    const double term =
        dist.survival(obs.censored[i].t) * (1.0 - exit_p) + exit_p;
    total += log_guarded(term, i, true, "censored term");
  }
  return total;
}

double featureless_loglik_grad(const CoxianParams& params, double exit_p,
                               const ObservationSet& obs,
                               FeaturelessGrad& grad) {
  if (!(exit_p >= 0.0 && exit_p <= 1.0))
    throw ParamError("exit probability must lie in [0,1]");
  const CoxianDist dist(params);
  const int n = dist.order();
  const int width = 2 * n + 2;  // value, d_beta, d_gamma, d_p

  const auto accumulate = [&](std::size_t count, bool censored,
                              const std::vector<ObservationSet::Obs>& list,
                              std::vector<double>& out) {
    const std::int64_t nblocks =
        count == 0 ? 0 : static_cast<std::int64_t>((count + kBlock - 1) / kBlock);
    out.assign(static_cast<std::size_t>(nblocks) * width, 0.0);
    std::exception_ptr failure;
#pragma omp parallel for schedule(static)
    for (std::int64_t blk = 0; blk < nblocks; ++blk) {
      try {
        std::vector<double> db(n), dg(n);
        double* acc = out.data() + static_cast<std::size_t>(blk) * width;
        const std::size_t begin = static_cast<std::size_t>(blk) * kBlock;
        const std::size_t end = std::min(begin + kBlock, count);
        for (std::size_t i = begin; i < end; ++i) {
          const double t = list[i].t;
          double value;
          if (!censored) {
            dist.pdf_grad(t, value, db, dg);
            const double logf = log_guarded(value, i, false, "density");
            acc[0] += logf + log_guarded(1.0 - exit_p, i, false, "stay probability");
            for (int k = 0; k < n; ++k) acc[1 + k] += db[k] / value;
            for (int k = 0; k < n; ++k) acc[1 + n + k] += dg[k] / value;
            acc[1 + 2 * n] += -1.0 / (1.0 - exit_p);
          } else {
            dist.survival_grad(t, value, db, dg);
            const double term = value * (1.0 - exit_p) + exit_p;
            acc[0] += log_guarded(term, i, true, "censored term");
            const double dterm = (1.0 - exit_p) / term;
            for (int k = 0; k < n; ++k) acc[1 + k] += db[k] * dterm;
            for (int k = 0; k < n; ++k) acc[1 + n + k] += dg[k] * dterm;
            acc[1 + 2 * n] += (1.0 - value) / term;
          }
        }
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  };

  std::vector<double> part_unc, part_cen;
  accumulate(obs.uncensored.size(), false, obs.uncensored, part_unc);
  accumulate(obs.censored.size(), true, obs.censored, part_cen);

  const auto column = [&](const std::vector<double>& partials, int col) {
    const std::size_t rows = partials.size() / width;
    std::vector<double> v(rows);
    for (std::size_t r = 0; r < rows; ++r) v[r] = partials[r * width + col];
    return pairwise_sum(v);
  };

  grad.d_beta.assign(n, 0.0);
  grad.d_gamma.assign(n, 0.0);
  double value = column(part_unc, 0) + column(part_cen, 0);
  for (int k = 0; k < n; ++k) {
    grad.d_beta[k] = column(part_unc, 1 + k) + column(part_cen, 1 + k);
    grad.d_gamma[k] = column(part_unc, 1 + n + k) + column(part_cen, 1 + n + k);
  }
  grad.d_p = column(part_unc, 1 + 2 * n) + column(part_cen, 1 + 2 * n);
  return value;
}

double exit_probability(const std::vector<double>& rho,
                        const std::vector<double>& x) {
  if (rho.size() != x.size() + 1)
    throw ParamError("rho length must be feature count + 1");
  double eta = rho[0];
  for (std::size_t j = 0; j < x.size(); ++j) eta += rho[j + 1] * x[j];
  // Numerically stable logistic.
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

CoxianParams predict_client_params(const RegressionCoefficients& coeffs,
                                   const std::vector<double>& x,
                                   const FitConfig& config,
                                   PredictDiagnostics* diag) {
  validate_coefficients(coeffs);
  config.validate();
  const int n = coeffs.order();
  const int m = coeffs.feature_count();
  if (static_cast<int>(x.size()) != m)
    throw ParamError("feature vector length disagrees with coefficients");

  std::vector<double> beta_raw(n), gamma_raw(n);
  for (int i = 0; i < n; ++i) {
    double bi = coeffs.b[i][0];
    double gi = coeffs.g[i][0];
    for (int j = 0; j < m; ++j) {
      bi += coeffs.b[i][j + 1] * x[j];
      gi += coeffs.g[i][j + 1] * x[j];
    }
    beta_raw[i] = bi;
    gamma_raw[i] = gi;
  }

  // Projection: clip beta into [0,1] and renormalize; push gamma onto the
  // floor and minimum-gap region from the slowest state up.
  std::vector<double> beta(n);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    beta[i] = std::clamp(beta_raw[i], 0.0, 1.0);
    sum += beta[i];
  }
  if (sum < 1e-12) {
    std::fill(beta.begin(), beta.end(), 1.0 / n);
  } else {
    for (double& b : beta) b /= sum;
  }

  std::vector<double> gamma(n);
  gamma[n - 1] = std::max(gamma_raw[n - 1], config.gamma_floor);
  for (int i = n - 2; i >= 0; --i)
    gamma[i] = std::max(gamma_raw[i], gamma[i + 1] + config.delta);

  if (diag) {
    diag->beta_shift = 0.0;
    for (int i = 0; i < n; ++i)
      diag->beta_shift = std::max(diag->beta_shift, std::fabs(beta[i] - beta_raw[i]));
    diag->projected = diag->beta_shift > 0.0 ||
                      !std::equal(gamma.begin(), gamma.end(), gamma_raw.begin());
  }

  CoxianParams out;
  out.beta = std::move(beta);
  out.gamma = std::move(gamma);
  out.exit_p = exit_probability(coeffs.rho, x);
  return out;
}

ClientIndex group_by_client(const ObservationSet& obs, int client_count) {
  validate_observations(obs, client_count);
  ClientIndex index;
  index.uncensored.resize(static_cast<std::size_t>(client_count));
  index.censored.resize(static_cast<std::size_t>(client_count));
  for (const auto& o : obs.uncensored)
    index.uncensored[static_cast<std::size_t>(o.client)].push_back(o.t);
  for (const auto& o : obs.censored)
    index.censored[static_cast<std::size_t>(o.client)].push_back(o.t);
  return index;
}

ClientGradient client_loglik_grad(const CoxianDist& dist, double exit_p,
                                  std::span<const double> uncensored,
                                  std::span<const double> censored) {
  const int n = dist.order();
  ClientGradient out;
  out.d_beta.assign(n, 0.0);
  out.d_gamma.assign(n, 0.0);
  std::vector<double> db(n), dg(n);
  for (double t : uncensored) {
    double f;
    dist.pdf_grad(t, f, db, dg);
    if (!(f > kLogFloor) || !(1.0 - exit_p > kLogFloor))
      throw LogDomainError("client term underflowed the log domain", 0, false);
    out.loglik += std::log(f) + std::log(1.0 - exit_p);
    for (int k = 0; k < n; ++k) out.d_beta[k] += db[k] / f;
    for (int k = 0; k < n; ++k) out.d_gamma[k] += dg[k] / f;
    out.d_p += -1.0 / (1.0 - exit_p);
  }
  for (double t : censored) {
    double s;
    dist.survival_grad(t, s, db, dg);
    const double term = s * (1.0 - exit_p) + exit_p;
    if (!(term > kLogFloor))
      throw LogDomainError("client censored term underflowed", 0, true);
    out.loglik += std::log(term);
    const double dterm = (1.0 - exit_p) / term;
    for (int k = 0; k < n; ++k) out.d_beta[k] += db[k] * dterm;
    for (int k = 0; k < n; ++k) out.d_gamma[k] += dg[k] * dterm;
    out.d_p += (1.0 - s) / term;
  }
  return out;
}

namespace {

ObjectiveValue contextual_impl(
    const RegressionCoefficients& coeffs,
    const std::vector<std::vector<double>>& per_client_beta,
    const std::vector<std::vector<double>>& per_client_gamma,
    const ObservationSet& obs, const std::vector<ClientFeatures>& features,
    const FitConfig& config, bool parallel) {
  validate_coefficients(coeffs);
  config.validate();
  const int n = coeffs.order();
  const int m = coeffs.feature_count();
  const std::size_t nv = features.size();
  if (per_client_beta.size() != nv || per_client_gamma.size() != nv)
    throw ParamError("per-client parameter lists disagree with features");
  for (const auto& f : features)
    if (static_cast<int>(f.x.size()) != m)
      throw ParamError("feature vector length disagrees with coefficients");
  validate_observations(obs, static_cast<int>(nv));

  // Per-client exit probabilities and distributions.
  std::vector<double> pv(nv);
  for (std::size_t v = 0; v < nv; ++v)
    pv[v] = exit_probability(coeffs.rho, features[v].x);

  const auto make_dist = [&](std::size_t v) {
    CoxianParams params;
    params.beta = per_client_beta[v];
    params.gamma = per_client_gamma[v];
    return CoxianDist(params, config.delta, config.gamma_floor);
  };

  double loglik;
  if (parallel) {
    // Group by client so each distribution is built once.
    const ClientIndex index = group_by_client(obs, static_cast<int>(nv));
    const std::int64_t nclients = static_cast<std::int64_t>(nv);
    std::vector<double> partial(nv, 0.0);
    std::exception_ptr failure;
#pragma omp parallel for schedule(static)
    for (std::int64_t v = 0; v < nclients; ++v) {
      try {
        const auto& unc = index.uncensored[static_cast<std::size_t>(v)];
        const auto& cen = index.censored[static_cast<std::size_t>(v)];
        if (unc.empty() && cen.empty()) continue;
        const CoxianDist dist = make_dist(static_cast<std::size_t>(v));
        const double p = pv[static_cast<std::size_t>(v)];
        double s = 0.0;
        for (double t : unc) {
          const double f = dist.pdf(t);
          if (!(f > kLogFloor) || !(1.0 - p > kLogFloor))
            throw LogDomainError("density underflow for client " +
                                     std::to_string(v),
                                 static_cast<std::size_t>(v), false);
          s += std::log(f) + std::log(1.0 - p);
        }
        for (double t : cen) {
          const double term = dist.survival(t) * (1.0 - p) + p;
          if (!(term > kLogFloor))
            throw LogDomainError("censored underflow for client " +
                                     std::to_string(v),
                                 static_cast<std::size_t>(v), true);
          s += std::log(term);
        }
        partial[static_cast<std::size_t>(v)] = s;
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
    loglik = pairwise_sum(partial);
  } else {
    // Naive reference: raw observation order, one evaluator per term.
    loglik = 0.0;
    for (std::size_t i = 0; i < obs.uncensored.size(); ++i) {
      const auto& o = obs.uncensored[i];
      const std::size_t v = static_cast<std::size_t>(o.client);
      const double f = make_dist(v).pdf(o.t);
      if (!(f > kLogFloor) || !(1.0 - pv[v] > kLogFloor))
        throw LogDomainError("density underflow", i, false);
      loglik += std::log(f) + std::log(1.0 - pv[v]);
    }
    for (std::size_t i = 0; i < obs.censored.size(); ++i) {
      const auto& o = obs.censored[i];
      const std::size_t v = static_cast<std::size_t>(o.client);
      const double term = make_dist(v).survival(o.t) * (1.0 - pv[v]) + pv[v];
      if (!(term > kLogFloor)) throw LogDomainError("censored underflow", i, true);
      loglik += std::log(term);
    }
  }

  ObjectiveValue value;
  value.loglik = loglik;

  // Residuals of per-client beta toward the affine map.
  double eps_sq = 0.0;
  for (std::size_t v = 0; v < nv; ++v) {
    for (int i = 0; i < n; ++i) {
      double affine = coeffs.b[i][0];
      for (int j = 0; j < m; ++j) affine += coeffs.b[i][j + 1] * features[v].x[j];
      const double eps = per_client_beta[v][static_cast<std::size_t>(i)] - affine;
      eps_sq += eps * eps;
    }
  }
  value.penalty_eps = config.eta_beta * eps_sq;

  // Regularization excludes the fixed intercept columns.
  double b_sq = 0.0, g_sq = 0.0, rho_sq = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 1; j <= m; ++j) {
      b_sq += coeffs.b[i][j] * coeffs.b[i][j];
      g_sq += coeffs.g[i][j] * coeffs.g[i][j];
    }
  for (int j = 1; j <= m; ++j) rho_sq += coeffs.rho[j] * coeffs.rho[j];
  value.penalty_b = config.eta_b * b_sq;
  value.penalty_g = config.eta_g * g_sq;
  value.penalty_rho = config.eta_rho * rho_sq;

  value.total = value.loglik - value.penalty_eps - value.penalty_b -
                value.penalty_g - value.penalty_rho;
  return value;
}

}  // namespace

ObjectiveValue contextual_objective(
    const RegressionCoefficients& coeffs,
    const std::vector<std::vector<double>>& per_client_beta,
    const std::vector<std::vector<double>>& per_client_gamma,
    const ObservationSet& obs, const std::vector<ClientFeatures>& features,
    const FitConfig& config) {
  return contextual_impl(coeffs, per_client_beta, per_client_gamma, obs,
                         features, config, true);
}

ObjectiveValue contextual_objective_serial(
    const RegressionCoefficients& coeffs,
    const std::vector<std::vector<double>>& per_client_beta,
    const std::vector<std::vector<double>>& per_client_gamma,
    const ObservationSet& obs, const std::vector<ClientFeatures>& features,
    const FitConfig& config) {
  return contextual_impl(coeffs, per_client_beta, per_client_gamma, obs,
                         features, config, false);
}

double expected_sojourn(const CoxianParams& params) {
  if (!params.exit_p) throw ParamError("expected sojourn needs exit_p");
  const double p = *params.exit_p;
  if (!(p > 0.0))
    throw DomainError("exit probability 0 gives an infinite sojourn");
  return coxian_mean(params) * (1.0 - p) / p;
}

double delta_inter_arrival(const RegressionCoefficients& coeffs,
                           int feature_index, const FitConfig& config) {
  const int m = coeffs.feature_count();
  if (feature_index < 1 || feature_index > m)
    throw DomainError("feature index out of range");
  std::vector<double> zero(static_cast<std::size_t>(m), 0.0);
  std::vector<double> unit = zero;
  unit[static_cast<std::size_t>(feature_index - 1)] = 1.0;
  return coxian_mean(predict_client_params(coeffs, unit, config)) -
         coxian_mean(predict_client_params(coeffs, zero, config));
}

double delta_sojourn(const RegressionCoefficients& coeffs, int feature_index,
                     const FitConfig& config) {
  const int m = coeffs.feature_count();
  if (feature_index < 1 || feature_index > m)
    throw DomainError("feature index out of range");
  std::vector<double> zero(static_cast<std::size_t>(m), 0.0);
  std::vector<double> unit = zero;
  unit[static_cast<std::size_t>(feature_index - 1)] = 1.0;
  return expected_sojourn(predict_client_params(coeffs, unit, config)) -
         expected_sojourn(predict_client_params(coeffs, zero, config));
}

}  // namespace sepmodel
