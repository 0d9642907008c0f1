#include <doctest.h>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>

#include "dmcee/rng.hpp"
#include "dmcee/stats.hpp"
#include "helpers.hpp"

using namespace dmcee;

TEST_CASE("Welch test matches the reference values") {
  const json f = testing::fixture("welch_normal");
  const VectorXd a = testing::vec(f["inputs"]["a"]), b = testing::vec(f["inputs"]["b"]);
  const WelchResult w = welch_t_test(a, b);
  CHECK(w.t == doctest::Approx(f["expected"]["t"].get<double>()).epsilon(1e-9));
  CHECK(w.dof == doctest::Approx(f["expected"]["dof"].get<double>()).epsilon(1e-9));
  CHECK(w.p_value == doctest::Approx(f["expected"]["p_value"].get<double>()).epsilon(1e-6));
  CHECK(t_test_two_sided(a, b) == w.p_value);
}

TEST_CASE("incomplete beta and t tail agree with boost") {
  for (double a : {0.5, 1.0, 2.5, 8.685}) {
    for (double b : {0.5, 3.0, 12.0}) {
      for (double x : {0.01, 0.2, 0.5, 0.77, 0.99}) {
        CHECK(regularized_incomplete_beta(a, b, x) == doctest::Approx(boost::math::ibeta(a, b, x)).epsilon(1e-10));
      }
    }
  }
  for (double dof : {1.0, 2.0, 4.3, 17.37, 150.0}) {
    const boost::math::students_t dist(dof);
    for (double t : {-6.0, -1.1, 0.0, 0.4, 2.2, 9.0}) {
      CHECK(student_t_sf(t, dof) == doctest::Approx(boost::math::cdf(boost::math::complement(dist, t))).epsilon(1e-9));
      const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
      CHECK(student_t_two_sided_p(t, dof) == doctest::Approx(p).epsilon(1e-9));
    }
  }
}

TEST_CASE("Welch p-values behave at the edges") {
  VectorXd a(5);
  a << 1, 2, 3, 4, 5;
  CHECK(welch_t_test(a, a).p_value == doctest::Approx(1.0));
  CHECK(welch_t_test(a, a).t == 0.0);
  Rng rng(4);
  VectorXd x(12), y(9);
  for (Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
  for (Index i = 0; i < y.size(); ++i) y(i) = 0.5 + 2.0 * rng.normal();
  const WelchResult xy = welch_t_test(x, y), yx = welch_t_test(y, x);
  CHECK(xy.t == doctest::Approx(-yx.t));
  CHECK(xy.p_value == doctest::Approx(yx.p_value));
  CHECK(xy.p_value > 0.0);
  CHECK(xy.p_value <= 1.0);
  const VectorXd c1 = VectorXd::Constant(3, 2.0), c2 = VectorXd::Constant(3, 5.0);
  CHECK(welch_t_test(c1, c1).p_value == 1.0);
  CHECK(welch_t_test(c1, c2).p_value == 0.0);
  CHECK(sample_sd(VectorXd::Constant(1, 3.0)) == 0.0);
  CHECK(sample_sd(a) == doctest::Approx(std::sqrt(2.5)));
  CHECK(sample_mean(a) == 3.0);
}
