#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sepmodel/likelihood.hpp"
#include "sepmodel/optim.hpp"

namespace sepmodel {

struct FitResult {
  std::optional<CoxianParams> params;             // featureless stage
  std::optional<RegressionCoefficients> coeffs;   // contextual stage
  std::vector<double> objective_trace;            // nondecreasing
  bool converged = false;
  int iterations = 0;
  std::uint64_t seed = 0;
};

// Unconstrained featureless parametrization: stick-breaking logits for
// beta (via the exit-probability chain), log rate gaps for gamma and a
// logit for p.  The feasible set maps exactly onto R^{2n}.
std::vector<double> featureless_to_unconstrained(const CoxianParams& params,
                                                 double exit_p,
                                                 const FitConfig& config);
CoxianParams unconstrained_to_featureless(const std::vector<double>& theta,
                                          int order, const FitConfig& config);

// Reparametrized censored log-likelihood with chained gradient; the
// objective the featureless fitter climbs.  Infeasible evaluations
// (log-domain underflow) report false so the line search retreats.
AscentObjective featureless_objective(const ObservationSet& obs, int order,
                                      const FitConfig& config);

// Maximize the featureless model by multistart quasi-Newton ascent.
FitResult fit_featureless(const ObservationSet& obs, const FitConfig& config,
                          std::uint64_t seed, int order = 2, int starts = 8);

// Two-stage contextual fit: intercepts fixed at the featureless solution,
// then block-coordinate ascent alternating the coefficient block
// (b, g, rho) with the separable per-client beta blocks.
FitResult fit_contextual(const ObservationSet& obs,
                         const std::vector<ClientFeatures>& features,
                         const CoxianParams& featureless,
                         const FitConfig& config, std::uint64_t seed);

struct BootstrapRow {
  std::string coefficient;  // e.g. "rho[gallery]"
  int positive_count = 0;
  bool significant = false;
};

struct BootstrapTable {
  std::vector<BootstrapRow> rows;
  int replicates = 0;
  int failed = 0;
};

// Client-block bootstrap: resample clients with replacement, refit the
// contextual model per replicate and count positive signs of each
// reported quantity (rho_j, b_1j, g_ij, delta and sojourn changes).
BootstrapTable bootstrap_significance(
    const ObservationSet& obs, const std::vector<ClientFeatures>& features,
    const CoxianParams& featureless, const FitConfig& config, int replicates,
    std::uint64_t seed, const std::vector<std::string>& feature_names = {});

}  // namespace sepmodel
