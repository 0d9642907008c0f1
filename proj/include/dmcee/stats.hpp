#pragma once

#include <Eigen/Dense>

namespace dmcee {

/// I_x(a, b) by the Lentz continued fraction, using the symmetry
/// I_x(a, b) = 1 - I_{1-x}(b, a) where the fraction converges faster.
double regularized_incomplete_beta(double a, double b, double x);

/// P(T > t) for Student's t with `dof` degrees of freedom (dof may be fractional).
double student_t_sf(double t, double dof);
/// P(|T| > |t|).
double student_t_two_sided_p(double t, double dof);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
};

/// Welch's unequal-variance two-sample t-test. Samples need at least two
/// entries each. Two constant samples give p = 1 when equal, 0 otherwise.
WelchResult welch_t_test(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
double t_test_two_sided(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

double sample_mean(const Eigen::VectorXd& v);
/// Sample standard deviation (n - 1 denominator); 0 for a single value.
double sample_sd(const Eigen::VectorXd& v);

}  // namespace dmcee
