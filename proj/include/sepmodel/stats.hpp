#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace sepmodel {

// Pairwise (tree) summation.  Deterministic for a fixed element order and
// numerically tighter than left-to-right accumulation.
double pairwise_sum(std::span<const double> values);

double mean(std::span<const double> values);
// Population variance (divides by N).
double variance(std::span<const double> values);
// Sample variance (divides by N-1).
double sample_variance(std::span<const double> values);

// Type-7 empirical quantile (linear interpolation) of an unsorted sample.
double empirical_quantile(std::vector<double> values, double q);

double pearson_correlation(std::span<const double> x,
                           std::span<const double> y);

// Ordinary least squares of y on x; returns {slope, intercept, r_squared}.
struct LinearFit {
  double slope;
  double intercept;
  double r_squared;
};
LinearFit linear_regression(std::span<const double> x,
                            std::span<const double> y);

// Regularized incomplete gamma functions P(a,x) and Q(a,x) = 1 - P(a,x).
double gamma_p(double a, double x);
double gamma_q(double a, double x);

// Upper-tail probability of a chi-squared variate.
double chi_squared_upper_tail(double statistic, int dof);

// Regularized incomplete beta I_x(a,b).
double incomplete_beta(double a, double b, double x);

double student_t_cdf(double t, double dof);
// Inverse of student_t_cdf in t for a given probability (bisection).
double student_t_quantile(double p, double dof);

// Halfwidth of a two-sided confidence interval for the mean of a sample,
// using the Student t distribution.
double ci_halfwidth(std::span<const double> sample, double level = 0.95);

// One-sample Kolmogorov-Smirnov statistic against a continuous cdf.
double ks_statistic(std::vector<double> sample,
                    const std::function<double(double)>& cdf);

}  // namespace sepmodel
