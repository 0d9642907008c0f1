#include "dmcee/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "dmcee/error.hpp"
#include "dmcee/io.hpp"
#include "dmcee/rng.hpp"
#include "dmcee/stats.hpp"

namespace dmcee {

AteError ate_abs_error(const VectorXd& tau_hat, const VectorXd& tau_true) {
  if (tau_hat.size() != tau_true.size()) throw DimensionError("ate_abs_error: length mismatch");
  if (tau_hat.size() == 0) throw DimensionError("ate_abs_error: empty effect vectors");
  AteError e;
  e.per_aspect = (tau_hat - tau_true).cwiseAbs();
  e.mean = e.per_aspect.mean();
  return e;
}

double hc_discrepancy(const MatrixXd& gamma, const MatrixXd& z, bool align) {
  if (gamma.rows() != z.rows()) throw DimensionError("hc_discrepancy: row counts differ");
  const double zn = z.norm();
  if (!(zn > 0.0)) throw NumericError("hc_discrepancy: Z is zero");
  if (!align) {
    return (gamma * MatrixXd::Identity(gamma.cols(), z.cols()) - z).norm() / zn;
  }
  if (gamma.cols() == 0) return 1.0;
  const MatrixXd m = gamma.completeOrthogonalDecomposition().solve(z);
  return (gamma * m - z).norm() / zn;
}

namespace {

double sq_dist(const MatrixXd& a, Index i, const MatrixXd& b, Index j) { return (a.row(i) - b.row(j)).squaredNorm(); }

Index distinct_rows(const MatrixXd& p) {
  std::set<std::vector<double>> seen;
  for (Index r = 0; r < p.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(p.cols()));
    for (Index c = 0; c < p.cols(); ++c) row[static_cast<std::size_t>(c)] = p(r, c);
    seen.insert(std::move(row));
  }
  return static_cast<Index>(seen.size());
}

double objective(const MatrixXd& p, const MatrixXd& c, const std::vector<Index>& assign) {
  double s = 0.0;
  for (Index i = 0; i < p.rows(); ++i) s += sq_dist(p, i, c, assign[static_cast<std::size_t>(i)]);
  return s;
}

}  // namespace

KMeansResult kmeans(const MatrixXd& points, Index k, std::uint64_t seed, int max_iter) {
  const Index n = points.rows();
  if (k < 1) throw ConfigError("kmeans: k must be positive");
  if (max_iter < 1) throw ConfigError("kmeans: max_iter must be positive");
  if (k > distinct_rows(points)) {
    throw DataError("kmeans: k = " + std::to_string(k) + " exceeds the number of distinct points");
  }
  Rng rng(seed);
  KMeansResult res;
  res.centroids.resize(k, points.cols());
  res.centroids.row(0) = points.row(static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(n))));
  VectorXd d2(n);
  for (Index i = 0; i < n; ++i) d2(i) = sq_dist(points, i, res.centroids, 0);
  for (Index c = 1; c < k; ++c) {
    const double total = d2.sum();
    const double target = rng.uniform() * total;
    Index pick = -1;
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) {
      acc += d2(i);
      if (d2(i) > 0.0 && acc > target) {
        pick = i;
        break;
      }
    }
    if (pick < 0) {
      for (Index i = n - 1; i >= 0; --i)
        if (d2(i) > 0.0) {
          pick = i;
          break;
        }
    }
    res.centroids.row(c) = points.row(pick);
    for (Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), sq_dist(points, i, res.centroids, c));
  }

  res.assignment.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      double best_d = sq_dist(points, i, res.centroids, 0);
      for (Index c = 1; c < k; ++c) {
        const double d = sq_dist(points, i, res.centroids, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (res.assignment[static_cast<std::size_t>(i)] != best) {
        res.assignment[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed && it > 0) break;
    MatrixXd sums = MatrixXd::Zero(k, points.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      const Index c = res.assignment[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        res.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      Index far = 0;
      double far_d = -1.0;
      for (Index i = 0; i < n; ++i) {
        const double d = sq_dist(points, i, res.centroids, res.assignment[static_cast<std::size_t>(i)]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      res.centroids.row(c) = points.row(far);
    }
    res.objective.push_back(objective(points, res.centroids, res.assignment));
    res.iterations = it + 1;
  }
  return res;
}

VectorXd centroid_spread(const MatrixXd& c) {
  const Index k = c.rows();
  if (k < 2) throw ConfigError("ood_split: k must be at least 2");
  VectorXd dist = VectorXd::Zero(k);
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j)
      if (j != i) dist(i) += (c.row(i) - c.row(j)).norm();
    dist(i) /= static_cast<double>(k - 1);
  }
  return dist;
}

OodSplitPlan ood_split(const MatrixXd& x_r, Index k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("ood_split: k must be at least 2");
  KMeansResult km = kmeans(x_r, k, seed);
  OodSplitPlan plan;
  plan.k = k;
  plan.centroids = std::move(km.centroids);
  plan.assignment = std::move(km.assignment);
  plan.dist = centroid_spread(plan.centroids);
  plan.test_cluster = 0;
  for (Index i = 1; i < k; ++i)
    if (plan.dist(i) > plan.dist(plan.test_cluster)) plan.test_cluster = i;
  return plan;
}

RegressionMetrics regression_metrics(const VectorXd& y, const VectorXd& y_hat) {
  if (y.size() != y_hat.size()) throw DimensionError("regression_metrics: length mismatch");
  if (y.size() == 0) throw DimensionError("regression_metrics: empty input");
  const VectorXd e = y - y_hat;
  return {e.cwiseAbs().mean(), e.squaredNorm() / static_cast<double>(e.size())};
}

EvalReport make_report(const std::string& method, const VectorXd& tau_hat, const VectorXd& tau_true) {
  const AteError e = ate_abs_error(tau_hat, tau_true);
  EvalReport r;
  r.method = method;
  r.per_aspect_abs_error = e.per_aspect;
  r.mean_abs_error = e.mean;
  r.hc_discrepancy = std::numeric_limits<double>::quiet_NaN();
  r.mae = std::numeric_limits<double>::quiet_NaN();
  r.mse = std::numeric_limits<double>::quiet_NaN();
  return r;
}

namespace {

MeanSd mean_sd(const std::vector<double>& v) {
  const Eigen::Map<const VectorXd> m(v.data(), static_cast<Index>(v.size()));
  return {m.mean(), sample_sd(m)};
}

}  // namespace

AggregateReport aggregate_replicates(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw DimensionError("aggregate_replicates: no reports");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EvalReport*>> by_method;
  for (const auto& r : reports) {
    if (!by_method.count(r.method)) order.push_back(r.method);
    by_method[r.method].push_back(&r);
  }
  const Index width = reports.front().per_aspect_abs_error.size();
  AggregateReport out;
  for (const auto& name : order) {
    const auto& list = by_method[name];
    MethodAggregate m;
    m.method = name;
    m.replicates = static_cast<Index>(list.size());
    std::vector<double> mean_err, hc, mae, mse;
    for (const EvalReport* r : list) {
      if (r->per_aspect_abs_error.size() != width) throw DimensionError("aggregate_replicates: aspect counts differ");
      mean_err.push_back(r->mean_abs_error);
      hc.push_back(r->hc_discrepancy);
      mae.push_back(r->mae);
      mse.push_back(r->mse);
    }
    for (Index j = 0; j < width; ++j) {
      std::vector<double> col;
      for (const EvalReport* r : list) col.push_back(r->per_aspect_abs_error(j));
      m.per_aspect.push_back(mean_sd(col));
    }
    m.mean_abs_error = mean_sd(mean_err);
    m.hc_discrepancy = mean_sd(hc);
    m.mae = mean_sd(mae);
    m.mse = mean_sd(mse);
    m.replicate_mean_errors = Eigen::Map<const VectorXd>(mean_err.data(), static_cast<Index>(mean_err.size()));
    out.methods.push_back(std::move(m));
  }
  for (std::size_t a = 0; a < out.methods.size(); ++a) {
    for (std::size_t b = a + 1; b < out.methods.size(); ++b) {
      const auto& ma = out.methods[a];
      const auto& mb = out.methods[b];
      if (ma.replicates != mb.replicates) throw DimensionError("aggregate_replicates: replicate counts differ");
      const std::string key = ma.method + "|" + mb.method;
      out.pairwise_p[key] = ma.replicates >= 2
                                ? t_test_two_sided(ma.replicate_mean_errors, mb.replicate_mean_errors)
                                : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

json to_json(const EvalReport& r) {
  return {{"method", r.method},
          {"per_aspect_abs_error", vector_to_json(r.per_aspect_abs_error)},
          {"mean_abs_error", number_or_null(r.mean_abs_error)},
          {"hc_discrepancy", number_or_null(r.hc_discrepancy)},
          {"mae", number_or_null(r.mae)},
          {"mse", number_or_null(r.mse)}};
}

namespace {

json ms(const MeanSd& m) { return {{"mean", number_or_null(m.mean)}, {"sd", number_or_null(m.sd)}}; }

std::string fmt(double v) { return std::isfinite(v) ? io::format_double(v) : "NA"; }

}  // namespace

json to_json(const AggregateReport& r) {
  json methods = json::array();
  for (const auto& m : r.methods) {
    json per = json::array();
    for (const auto& p : m.per_aspect) per.push_back(ms(p));
    methods.push_back({{"method", m.method},
                       {"replicates", m.replicates},
                       {"per_aspect_abs_error", per},
                       {"mean_abs_error", ms(m.mean_abs_error)},
                       {"hc_discrepancy", ms(m.hc_discrepancy)},
                       {"mae", ms(m.mae)},
                       {"mse", ms(m.mse)},
                       {"replicate_mean_abs_errors", vector_to_json(m.replicate_mean_errors)}});
  }
  json pairs = json::object();
  for (const auto& [k, p] : r.pairwise_p) pairs[k] = number_or_null(p);
  return {{"methods", methods}, {"pairwise_p", pairs}};
}

void write_error_table(const std::vector<EvalReport>& reports, const std::vector<std::string>& aspects,
                       const std::filesystem::path& path) {
  io::CsvWriter w(path);
  std::vector<std::string> header{"method"};
  header.insert(header.end(), aspects.begin(), aspects.end());
  for (const char* c : {"Mean", "hc_discrepancy", "mae", "mse"}) header.emplace_back(c);
  w.row(header);
  for (const auto& r : reports) {
    std::vector<std::string> row{r.method};
    for (Index j = 0; j < r.per_aspect_abs_error.size(); ++j) row.push_back(fmt(r.per_aspect_abs_error(j)));
    for (double v : {r.mean_abs_error, r.hc_discrepancy, r.mae, r.mse}) row.push_back(fmt(v));
    w.row(row);
  }
}

void write_aggregate_table(const AggregateReport& report, const std::vector<std::string>& aspects,
                           const std::filesystem::path& path) {
  io::CsvWriter w(path);
  std::vector<std::string> header{"method", "statistic"};
  header.insert(header.end(), aspects.begin(), aspects.end());
  for (const char* c : {"Mean", "hc_discrepancy", "mae", "mse"}) header.emplace_back(c);
  w.row(header);
  for (const bool sd : {false, true}) {
    for (const auto& m : report.methods) {
      auto pick = [&](const MeanSd& v) { return fmt(sd ? v.sd : v.mean); };
      std::vector<std::string> row{m.method, sd ? "sd" : "mean"};
      for (const auto& p : m.per_aspect) row.push_back(pick(p));
      for (const MeanSd* v : {&m.mean_abs_error, &m.hc_discrepancy, &m.mae, &m.mse}) row.push_back(pick(*v));
      w.row(row);
    }
  }
}

}  // namespace dmcee
