#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sepmodel/coxian.hpp"

namespace sepmodel {

// Censored inter-arrival data.  Uncensored entries are completed gaps;
// censored entries are horizon-truncated gaps, at most one per client.
struct ObservationSet {
  struct Obs {
    double t;       // days
    int client;     // index into the feature list
  };
  std::vector<Obs> uncensored;
  std::vector<Obs> censored;

  std::size_t size() const { return uncensored.size() + censored.size(); }
  bool empty() const { return uncensored.empty() && censored.empty(); }
};

// Checks times are finite/nonnegative, client indices are in range and
// no client carries two censored gaps.
void validate_observations(const ObservationSet& obs, int client_count);

// Standardized predictor vector for one client.
struct ClientFeatures {
  std::vector<double> x;
  std::string client_id;
};

// Affine maps from features to the Coxian parameters.  Row i of b / g
// holds (intercept, coefficients...) for beta_i / gamma_i; rho holds the
// logistic exit-probability coefficients with rho[0] the intercept.
struct RegressionCoefficients {
  std::vector<std::vector<double>> b;  // n rows, m+1 columns
  std::vector<std::vector<double>> g;  // n rows, m+1 columns
  std::vector<double> rho;             // m+1 entries
  std::vector<std::string> feature_names;  // m entries (may be empty)

  int order() const { return static_cast<int>(b.size()); }
  int feature_count() const {
    return b.empty() ? 0 : static_cast<int>(b.front().size()) - 1;
  }
};

void validate_coefficients(const RegressionCoefficients& coeffs);

// Penalized objective decomposition: total = loglik - penalties.
struct ObjectiveValue {
  double loglik = 0.0;
  double penalty_eps = 0.0;
  double penalty_b = 0.0;
  double penalty_g = 0.0;
  double penalty_rho = 0.0;
  double total = 0.0;
};

// Featureless censored log-likelihood
//   sum_S [log f(t_s) + log(1-p)] + sum_U log((1 - F(t_u))(1-p) + p).
// The default entry point evaluates observation terms in fixed-size blocks
// (parallelized with OpenMP) and combines block sums pairwise, so the
// result is identical for any thread count.  The _serial variant is the
// plain left-to-right reference kept for testing and benchmarking.
double featureless_loglik(const CoxianParams& params, double exit_p,
                          const ObservationSet& obs);
double featureless_loglik_serial(const CoxianParams& params, double exit_p,
                                 const ObservationSet& obs);

// Gradient w.r.t. (beta[0..n-1], gamma[0..n-1], p), same block layout.
struct FeaturelessGrad {
  std::vector<double> d_beta;
  std::vector<double> d_gamma;
  double d_p = 0.0;
};
double featureless_loglik_grad(const CoxianParams& params, double exit_p,
                               const ObservationSet& obs,
                               FeaturelessGrad& grad);

// Evaluate the affine + logistic prediction maps at x and project the
// result onto the feasible set: beta clipped to [0,1] and renormalized,
// gamma pushed onto the floor/gap region.
struct PredictDiagnostics {
  double beta_shift = 0.0;   // largest beta movement due to projection
  bool projected = false;
};
CoxianParams predict_client_params(const RegressionCoefficients& coeffs,
                                   const std::vector<double>& x,
                                   const FitConfig& config,
                                   PredictDiagnostics* diag = nullptr);

// Contextual penalized objective (per-client beta free with a penalized
// residual toward its affine map; gamma given exactly; p from rho).
ObjectiveValue contextual_objective(
    const RegressionCoefficients& coeffs,
    const std::vector<std::vector<double>>& per_client_beta,
    const std::vector<std::vector<double>>& per_client_gamma,
    const ObservationSet& obs, const std::vector<ClientFeatures>& features,
    const FitConfig& config);
// Serial reference implementation (naive summation order).
ObjectiveValue contextual_objective_serial(
    const RegressionCoefficients& coeffs,
    const std::vector<std::vector<double>>& per_client_beta,
    const std::vector<std::vector<double>>& per_client_gamma,
    const ObservationSet& obs, const std::vector<ClientFeatures>& features,
    const FitConfig& config);

// Logistic exit probability for feature vector x under rho.
double exit_probability(const std::vector<double>& rho,
                        const std::vector<double>& x);

// Observation times grouped per client; used by the fit drivers so each
// client's evaluator is built once per objective pass.
struct ClientIndex {
  std::vector<std::vector<double>> uncensored;
  std::vector<std::vector<double>> censored;
};
ClientIndex group_by_client(const ObservationSet& obs, int client_count);

// One client's log-likelihood contribution with derivatives w.r.t. that
// client's (beta, gamma, p).
struct ClientGradient {
  double loglik = 0.0;
  std::vector<double> d_beta;
  std::vector<double> d_gamma;
  double d_p = 0.0;
};
ClientGradient client_loglik_grad(const CoxianDist& dist, double exit_p,
                                  std::span<const double> uncensored,
                                  std::span<const double> censored);

// Expected days in the system: mean gap times the expected number of
// completed gaps before exit, (1-p)/p.
double expected_sojourn(const CoxianParams& params);

// Change in conditional expected inter-arrival time when feature j
// (1-based) moves one unit from the featureless point.
double delta_inter_arrival(const RegressionCoefficients& coeffs,
                           int feature_index, const FitConfig& config);
// Same for the expected sojourn time.
double delta_sojourn(const RegressionCoefficients& coeffs, int feature_index,
                     const FitConfig& config);

}  // namespace sepmodel
