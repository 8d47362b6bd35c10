#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "sepmodel/errors.hpp"
#include "sepmodel/rng.hpp"

namespace sepmodel {

// Fitting / feasibility constants shared across the library.
//
// Rates are per day.  delta is the minimum gap between consecutive rates
// (identical rates make the closed-form density numerically unstable, so
// feasibility keeps them apart); gamma_floor bounds the slowest rate away
// from zero.  The eta_* weights apply to the regression penalty terms.
struct FitConfig {
  double delta = 0.005;
  double gamma_floor = 0.0005;
  double eta_beta = 100.0;
  double eta_b = 100.0;
  double eta_g = 1000.0;
  double eta_rho = 10.0;
  int max_iters = 500;
  double tol = 1e-8;

  void validate() const;
};

// Serial (Coxian) phase-type parameters.
//
// beta is the entry-branch mixture on the simplex; branch k (1-based)
// is the sum of independent exponentials with rates gamma[0..k-1].
// Rates must satisfy gamma[i] - gamma[i+1] >= delta and
// gamma[n-1] >= gamma_floor.  exit_p, when present, is the per-visit
// probability of leaving the system.
struct CoxianParams {
  std::vector<double> beta;
  std::vector<double> gamma;
  std::optional<double> exit_p;

  int order() const { return static_cast<int>(beta.size()); }
};

void validate_params(const CoxianParams& params,
                     double delta = FitConfig{}.delta,
                     double gamma_floor = FitConfig{}.gamma_floor);

// Absorbing-chain representation: alpha is the initial distribution over
// the n transient states, Q the n x n transient rate matrix (row-major)
// and a the absorption-rate vector.  Row sums of [a | Q] are zero.
struct GeneratorMatrix {
  std::vector<double> alpha;
  std::vector<double> q;  // row-major n x n
  std::vector<double> a;

  int order() const { return static_cast<int>(alpha.size()); }
};

// Embed Coxian parameters as a generator: state i (1-based) holds rate
// gamma[i-1], transitions i -> i-1, and state 1 absorbs.
GeneratorMatrix to_generator(const CoxianParams& params);

// Dense phase-type density alpha * e^{Qt} * a via scaling-and-squaring
// matrix exponential.  Brute-force oracle for the closed forms below.
double general_ph_pdf(const GeneratorMatrix& gen, double t);
// 1 - alpha * e^{Qt} * 1.
double general_ph_cdf(const GeneratorMatrix& gen, double t);

// Evaluator with per-distribution precomputation.  All methods are const
// and safe for concurrent use; sampling takes a caller-owned stream.
class CoxianDist {
 public:
  explicit CoxianDist(const CoxianParams& params,
                      double delta = FitConfig{}.delta,
                      double gamma_floor = FitConfig{}.gamma_floor);

  int order() const { return n_; }
  const std::vector<double>& beta() const { return beta_; }
  const std::vector<double>& gamma() const { return gamma_; }

  double pdf(double t) const;
  double cdf(double t) const;
  double survival(double t) const;
  double mean() const;
  double quantile(double q) const;

  double sample(Rng& rng) const;
  // Branch index (0-based) together with the sampled time.
  std::pair<int, double> sample_branch(Rng& rng) const;

  // P(slowest branch | no arrival by t); defined for order 2 only.
  double passive_posterior(double t) const;

  // Density and survival with gradients w.r.t. beta and gamma.
  // Output spans must have size order().
  void pdf_grad(double t, double& value, std::span<double> d_beta,
                std::span<double> d_gamma) const;
  void survival_grad(double t, double& value, std::span<double> d_beta,
                     std::span<double> d_gamma) const;

 private:
  int n_;
  std::vector<double> beta_;
  std::vector<double> gamma_;
  // coef_[k][j]: branch-k density coefficient of e^{-gamma_j t}.
  std::vector<std::vector<double>> coef_;
  // scoef_[k][j] = coef_[k][j] / gamma_j (survival coefficients).
  std::vector<std::vector<double>> scoef_;
  // Aggregated over branches with beta weights.
  std::vector<double> wpdf_;   // wpdf_[j]  = sum_k beta_k coef_[k][j]
  std::vector<double> wsurv_;  // wsurv_[j] = sum_k beta_k scoef_[k][j]
  // dpdf_[i][j] = sum_k beta_k d coef_[k][j] / d gamma_i, same for dsurv_.
  std::vector<std::vector<double>> dpdf_;
  std::vector<std::vector<double>> dsurv_;
};

// Closed-form operations (thin wrappers constructing an evaluator).
double coxian_pdf(const CoxianParams& params, double t);
double coxian_cdf(const CoxianParams& params, double t);
double coxian_mean(const CoxianParams& params);
double coxian_quantile(const CoxianParams& params, double q);
double coxian_sample(const CoxianParams& params, Rng& rng);
double passive_posterior(const CoxianParams& params, double t);

// Maps between the exit-probability parametrization q and the branch
// mixture beta.  q.back() must equal 1; the terminal 0/0 convention
// defines q_i = 1 when no mass remains.
std::vector<double> q_to_beta(const std::vector<double>& q);
std::vector<double> beta_to_q(const std::vector<double>& beta);

}  // namespace sepmodel
