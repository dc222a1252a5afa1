#pragma once

#include <span>
#include <vector>

namespace mfe::stats {

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

/// Student-t cumulative distribution with `dof` degrees of freedom.
double student_t_cdf(double t, double dof);

/// Inverse of student_t_cdf for p in (0, 1).
double student_t_quantile(double p, double dof);

/// Linear-interpolated empirical quantile (type 7) of an unsorted sample.
double quantile(std::vector<double> values, double p);

double mean(std::span<const double> v);
/// Population variance.
double variance(std::span<const double> v);

}  // namespace mfe::stats
