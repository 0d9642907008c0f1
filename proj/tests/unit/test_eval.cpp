#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dmcee/error.hpp"
#include "dmcee/eval.hpp"
#include "dmcee/rng.hpp"
#include "dmcee/stats.hpp"
#include "helpers.hpp"

using namespace dmcee;

namespace {

MatrixXd random_points(Index n, Index d, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd m(n, d);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("ate_abs_error averages absolute differences") {
  VectorXd hat(3), truth(3);
  hat << 1.0, -1.0, 2.5;
  truth << 2.0, 1.0, 2.5;
  const AteError e = ate_abs_error(hat, truth);
  CHECK(e.per_aspect(0) == 1.0);
  CHECK(e.per_aspect(1) == 2.0);
  CHECK(e.per_aspect(2) == 0.0);
  CHECK(e.mean == 1.0);
  CHECK(ate_abs_error(truth, truth).mean == 0.0);
  CHECK(ate_abs_error(hat, truth).mean == ate_abs_error(truth, hat).mean);
  CHECK_THROWS_AS(ate_abs_error(hat, VectorXd::Ones(2)), DimensionError);
}

TEST_CASE("hc_discrepancy against the least-squares reference") {
  const json f = testing::fixture("hc_alignment");
  const MatrixXd g = testing::mat(f["inputs"]["gamma"]), z = testing::mat(f["inputs"]["z"]);
  CHECK(hc_discrepancy(g, z, true) == doctest::Approx(f["expected"]["aligned"].get<double>()).epsilon(1e-9));
  CHECK(hc_discrepancy(g, z, false) == doctest::Approx(f["expected"]["unaligned"].get<double>()).epsilon(1e-9));
  const MatrixXd a = random_points(20, 3, 2);
  MatrixXd m(3, 3);
  m << 1, 2, 0, 0, 1, 3, 4, 0, 1;
  CHECK(hc_discrepancy(a * m, a, true) < 1e-10);
  CHECK(hc_discrepancy(a, a, false) == 0.0);
  CHECK(hc_discrepancy(g, z, true) <= hc_discrepancy(g, z, false));
}

TEST_CASE("k-means separates well-spaced blobs") {
  MatrixXd pts(6, 2);
  pts << 0, 0, 0.1, 0, 0, 0.1, 5, 5, 5.1, 5, 5, 5.1;
  const KMeansResult r = kmeans(pts, 2, 3);
  CHECK(r.assignment[0] == r.assignment[1]);
  CHECK(r.assignment[1] == r.assignment[2]);
  CHECK(r.assignment[3] == r.assignment[4]);
  CHECK(r.assignment[0] != r.assignment[3]);
  const KMeansResult single = kmeans(pts, 1, 3);
  CHECK((single.centroids.row(0) - pts.colwise().mean()).norm() < 1e-12);
  const KMeansResult each = kmeans(pts, 6, 3);
  CHECK(each.objective.back() == doctest::Approx(0.0));
  CHECK_THROWS(kmeans(pts, 7, 3));
}

TEST_CASE("k-means objective never increases across Lloyd iterations") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(s);
    const Index n = 10 + static_cast<Index>(rng.uniform_index(40));
    const Index k = 2 + static_cast<Index>(rng.uniform_index(4));
    const KMeansResult r = kmeans(random_points(n, 3, s + 1000), k, s);
    for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] <= r.objective[i - 1] + 1e-9);
    std::vector<Index> sizes(static_cast<std::size_t>(k), 0);
    for (Index a : r.assignment) ++sizes[static_cast<std::size_t>(a)];
    CHECK(*std::min_element(sizes.begin(), sizes.end()) > 0);
  }
}

TEST_CASE("ood split picks the most distant centroid") {
  const json f = testing::fixture("ood_dist");
  {
    const json& c = f["inputs"]["four_point"];
    const OodSplitPlan plan = ood_split(testing::mat(c["points"]), c["k"].get<Index>(), 1);
    const VectorXd dist = testing::vec(f["expected"]["four_point"]["dist"]);
    CHECK((plan.dist - dist).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(plan.test_cluster == f["expected"]["four_point"]["test_cluster"].get<Index>());
    CHECK(plan.assignment[0] == plan.assignment[1]);
    CHECK(plan.assignment[2] == plan.assignment[3]);
    CHECK(plan.assignment[0] != plan.assignment[2]);
  }
  {
    const json& c = f["inputs"]["collinear"];
    const MatrixXd pts = testing::mat(c["points"]);
    const OodSplitPlan plan = ood_split(pts, c["k"].get<Index>(), 1);
    const MatrixXd expect_c = testing::mat(f["expected"]["collinear"]["centroids"]);
    const VectorXd expect_d = testing::vec(f["expected"]["collinear"]["dist"]);
    for (Index i = 0; i < 3; ++i) {
      const Index cl = plan.assignment[static_cast<std::size_t>(i)];
      CHECK(plan.centroids(cl, 0) == doctest::Approx(expect_c(i, 0)));
      CHECK(plan.dist(cl) == doctest::Approx(expect_d(i)).epsilon(1e-12));
    }
    CHECK(plan.assignment[2] == plan.test_cluster);
  }
  MatrixXd c(3, 2);
  c << 0, 0, 3, 4, 6, 8;
  const VectorXd d = centroid_spread(c);
  CHECK(d(0) == doctest::Approx(7.5));
  CHECK(d(1) == doctest::Approx(5.0));
  CHECK(d(2) == doctest::Approx(7.5));
}

TEST_CASE("regression metrics") {
  VectorXd y(4), h(4);
  y << 1, 2, 3, 4;
  h << 2, 2, 1, 4;
  const RegressionMetrics m = regression_metrics(y, h);
  CHECK(m.mae == doctest::Approx(0.75));
  CHECK(m.mse == doctest::Approx(1.25));
  CHECK(regression_metrics(y, y).mse == 0.0);
}

TEST_CASE("aggregate_replicates summarizes per method") {
  std::vector<EvalReport> reports;
  VectorXd truth(2);
  truth << 1.0, 2.0;
  for (int r = 0; r < 4; ++r) {
    VectorXd a(2), b(2);
    a << 1.0 + 0.1 * r, 2.0;
    b << 3.0 + r, 2.0 - r;
    reports.push_back(make_report("lr", b, truth));
    reports.push_back(make_report("dmcee", a, truth));
  }
  const AggregateReport agg = aggregate_replicates(reports);
  REQUIRE(agg.methods.size() == 2);
  CHECK(agg.methods[0].method == "lr");
  CHECK(agg.methods[1].method == "dmcee");
  CHECK(agg.methods[1].replicates == 4);
  CHECK(agg.methods[1].per_aspect[0].mean == doctest::Approx(0.15));
  CHECK(agg.methods[1].per_aspect[1].mean == 0.0);
  CHECK(agg.methods[1].mean_abs_error.mean == doctest::Approx(0.075));
  CHECK(agg.methods[0].mean_abs_error.mean == doctest::Approx(2.5));
  const double p = agg.pairwise_p.at("lr|dmcee");
  CHECK(p == doctest::Approx(t_test_two_sided(agg.methods[0].replicate_mean_errors, agg.methods[1].replicate_mean_errors)));
  reports.pop_back();
  CHECK_THROWS_AS(aggregate_replicates(reports), DimensionError);
  const json j = to_json(agg);
  CHECK(j.dump().find("dmcee") != std::string::npos);
  const auto dir = testing::scratch_dir("eval_tables");
  reports.push_back(make_report("dmcee", truth, truth));
  const std::vector<std::string> names{"food", "service"};
  write_error_table(reports, names, dir / "errors.csv");
  const std::string text = io::read_text(dir / "errors.csv");
  CHECK(text.rfind("method,food,service,Mean,", 0) == 0);
}
