#include "dmcee/adjustment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dmcee/error.hpp"

namespace dmcee {

VectorXd AdjustmentParams::theta_y() const {
  VectorXd out(theta_a.size() + theta_gamma.size());
  out << theta_a, theta_gamma;
  return out;
}

double LossBreakdown::recomposed() const {
  return weights.alpha * l_v + weights.beta * l_c + l_y + weights.lambda * l2;
}

SurrogateConfounder surrogate(const MatrixXd& out_r, const AdjustmentParams& params) {
  if (out_r.cols() != params.gamma_map.rows()) {
    throw DimensionError("surrogate: e'_R has " + std::to_string(out_r.cols()) + " columns, gamma map expects " +
                         std::to_string(params.gamma_map.rows()));
  }
  return {out_r * params.gamma_map};
}

namespace {

void check_rows(const SurrogateConfounder& g, const MatrixXd& causes, const char* what) {
  if (g.gamma_r.rows() != causes.rows()) throw DimensionError(std::string(what) + ": row counts differ");
  if (g.gamma_r.rows() == 0) throw DimensionError(std::string(what) + ": no rows");
}

}  // namespace

double cause_loss(const SurrogateConfounder& g, const MatrixXd& causes, const AdjustmentParams& p) {
  check_rows(g, causes, "cause_loss");
  if (p.theta_c.rows() != g.gamma_r.cols() || p.theta_c.cols() != causes.cols()) {
    throw DimensionError("cause_loss: theta_c shape mismatch");
  }
  return (g.gamma_r * p.theta_c - causes).squaredNorm() / static_cast<double>(causes.rows());
}

VectorXd predict_outcomes(const SurrogateConfounder& g, const MatrixXd& causes, const AdjustmentParams& p) {
  check_rows(g, causes, "predict_outcomes");
  if (p.theta_a.size() != causes.cols() || p.theta_gamma.size() != g.gamma_r.cols()) {
    throw DimensionError("predict_outcomes: theta_y shape mismatch");
  }
  return causes * p.theta_a + g.gamma_r * p.theta_gamma;
}

double outcome_loss(const SurrogateConfounder& g, const MatrixXd& causes, const VectorXd& y, const AdjustmentParams& p) {
  if (y.size() != causes.rows()) throw DimensionError("outcome_loss: y length differs from cause rows");
  return (predict_outcomes(g, causes, p) - y).squaredNorm() / static_cast<double>(y.size());
}

double squared_norm(const ModelParams& p) {
  double s = p.encoder.w_r.squaredNorm() + p.encoder.w_u.squaredNorm();
  for (const auto& l : p.encoder.layers) s += l.w_1.squaredNorm() + l.w_2.squaredNorm();
  const AdjustmentParams& a = p.adjustment;
  return s + a.gamma_map.squaredNorm() + a.theta_c.squaredNorm() + a.theta_a.squaredNorm() +
         a.theta_gamma.squaredNorm();
}

LossBreakdown total_loss(double l_v, double l_c, double l_y, double l2, const LossWeights& w) {
  if (w.alpha < 0.0 || w.beta < 0.0 || w.lambda < 0.0) throw ConfigError("total_loss: weights must be non-negative");
  LossBreakdown b{l_v, l_c, l_y, l2, 0.0, w};
  b.total = b.recomposed();
  return b;
}

LossBreakdown total_loss(double l_v, double l_c, double l_y, const ModelParams& params, const LossWeights& w) {
  return total_loss(l_v, l_c, l_y, squared_norm(params), w);
}

VectorXd extract_effects(const AdjustmentParams& params) { return params.theta_a; }

double predict_outcome(const RowVector& gamma_r, const RowVector& a, const AdjustmentParams& p) {
  if (a.size() != p.theta_a.size() || gamma_r.size() != p.theta_gamma.size()) {
    throw DimensionError("predict_outcome: input lengths do not match theta_y");
  }
  return a.dot(p.theta_a) + gamma_r.dot(p.theta_gamma);
}

PositivityProbe positivity_probe(const SurrogateConfounder& g, const MatrixXd& causes, Index bins) {
  check_rows(g, causes, "positivity_probe");
  if (bins < 1) throw ConfigError("positivity_probe: bins must be positive");
  const Index n = causes.rows();
  VectorXd score = VectorXd::Zero(n);
  if (g.gamma_r.cols() > 0) {
    const MatrixXd centered = g.gamma_r.rowwise() - g.gamma_r.colwise().mean();
    Eigen::JacobiSVD<MatrixXd> svd(centered, Eigen::ComputeThinV);
    score = centered * svd.matrixV().col(0);
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return score(a) < score(b); });

  PositivityProbe probe;
  probe.min_variance = VectorXd::Constant(causes.cols(), std::numeric_limits<double>::infinity());
  for (Index b = 0; b < bins; ++b) {
    const Index lo = b * n / bins, hi = (b + 1) * n / bins;
    if (hi - lo < 2) continue;
    for (Index j = 0; j < causes.cols(); ++j) {
      double mean = 0.0;
      for (Index k = lo; k < hi; ++k) mean += causes(order[static_cast<std::size_t>(k)], j);
      mean /= static_cast<double>(hi - lo);
      double var = 0.0;
      for (Index k = lo; k < hi; ++k) {
        const double d = causes(order[static_cast<std::size_t>(k)], j) - mean;
        var += d * d;
      }
      var /= static_cast<double>(hi - lo - 1);
      probe.min_variance(j) = std::min(probe.min_variance(j), var);
    }
  }
  probe.min_over_aspects = causes.cols() ? probe.min_variance.minCoeff() : 0.0;
  probe.positive = std::isfinite(probe.min_over_aspects) && probe.min_over_aspects > 0.0;
  return probe;
}

}  // namespace dmcee
