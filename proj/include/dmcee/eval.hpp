#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dmcee/data.hpp"
#include "dmcee/json_util.hpp"

namespace dmcee {

struct AteError {
  VectorXd per_aspect;
  double mean = 0.0;
};

AteError ate_abs_error(const VectorXd& tau_hat, const VectorXd& tau_true);

/// Relative Frobenius discrepancy ||γM - Z|| / ||Z||. With `align` M is the
/// least-squares solution (no intercept), otherwise M is the
/// rectangular identity.
double hc_discrepancy(const MatrixXd& gamma, const MatrixXd& z, bool align = true);

struct KMeansResult {
  std::vector<Index> assignment;
  MatrixXd centroids;            // k x d
  std::vector<double> objective;  // after every Lloyd iteration
  int iterations = 0;
};

/// k-means++ seeding then Lloyd iterations. Ties between equidistant
/// centroids go to the lower index; an empty cluster is reseeded at the
/// point farthest from its current centroid.
KMeansResult kmeans(const MatrixXd& points, Index k, std::uint64_t seed, int max_iter = 100);

struct OodSplitPlan {
  Index k = 0;
  MatrixXd centroids;
  std::vector<Index> assignment;
  VectorXd dist;
  Index test_cluster = 0;
};

/// dist_i = sum_{j != i} ||c_i - c_j|| / (k - 1); the test cluster is the argmax.
VectorXd centroid_spread(const MatrixXd& centroids);
OodSplitPlan ood_split(const MatrixXd& x_r, Index k, std::uint64_t seed);

struct RegressionMetrics {
  double mae = 0.0;
  double mse = 0.0;
};

RegressionMetrics regression_metrics(const VectorXd& y, const VectorXd& y_hat);

/// Metrics of one method on one replicate. Metrics that do not apply are NaN.
struct EvalReport {
  std::string method;
  VectorXd per_aspect_abs_error;
  double mean_abs_error = 0.0;
  double hc_discrepancy = 0.0;
  double mae = 0.0;
  double mse = 0.0;
};

EvalReport make_report(const std::string& method, const VectorXd& tau_hat, const VectorXd& tau_true);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

struct MethodAggregate {
  std::string method;
  Index replicates = 0;
  std::vector<MeanSd> per_aspect;
  MeanSd mean_abs_error, hc_discrepancy, mae, mse;
  VectorXd replicate_mean_errors;
};

struct AggregateReport {
  std::vector<MethodAggregate> methods;  // first-appearance order
  /// Welch p-values on per-replicate mean abs errors, keyed by "a|b".
  std::map<std::string, double> pairwise_p;
};

/// Groups reports by method. Methods need equal replicate counts.
AggregateReport aggregate_replicates(const std::vector<EvalReport>& reports);

json to_json(const EvalReport& report);
json to_json(const AggregateReport& report);
/// method, aspect columns..., Mean; one row per report.
void write_error_table(const std::vector<EvalReport>& reports, const std::vector<std::string>& aspect_names,
                       const std::filesystem::path& path);
/// Same grid with replicate means and a second block of standard deviations.
void write_aggregate_table(const AggregateReport& report, const std::vector<std::string>& aspect_names,
                           const std::filesystem::path& path);

}  // namespace dmcee
