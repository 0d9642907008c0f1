#pragma once

#include <vector>

#include "dmcee/encoder.hpp"

namespace dmcee {

/// Linear causal adjustment head on top of the encoder. The outcome
/// coefficients θ_y are the concatenation [θ_A, θ_γ] and only exist as
/// those two pieces.
struct AdjustmentParams {
  MatrixXd gamma_map;     // d' x d_gamma
  MatrixXd theta_c;       // d_gamma x 2m
  VectorXd theta_a;       // 2m
  VectorXd theta_gamma;   // d_gamma

  Index gamma_dim() const { return gamma_map.cols(); }
  VectorXd theta_y() const;
};

/// Every trainable tensor of the full model.
struct ModelParams {
  EncoderParams encoder;
  AdjustmentParams adjustment;
};

struct LossWeights {
  double alpha = 1e-6;
  double beta = 1e-6;
  double lambda = 1e-8;
};

struct LossBreakdown {
  double l_v = 0.0;
  double l_c = 0.0;
  double l_y = 0.0;
  double l2 = 0.0;
  double total = 0.0;
  LossWeights weights;

  /// α l_v + β l_c + l_y + λ l2, recomputed from the parts.
  double recomposed() const;
};

struct SurrogateConfounder {
  MatrixXd gamma_r;  // n_restaurants x d_gamma
};

SurrogateConfounder surrogate(const MatrixXd& out_r, const AdjustmentParams& params);

/// (1/N) Σ_r Σ_j (γ_r θ_c[:, j] - A_rj)^2
double cause_loss(const SurrogateConfounder& gamma, const MatrixXd& causes, const AdjustmentParams& params);
/// (1/N) Σ_r ([A_r, γ_r] θ_y - y_r)^2
double outcome_loss(const SurrogateConfounder& gamma, const MatrixXd& causes, const VectorXd& y,
                    const AdjustmentParams& params);

double squared_norm(const ModelParams& params);
LossBreakdown total_loss(double l_v, double l_c, double l_y, const ModelParams& params, const LossWeights& weights);
LossBreakdown total_loss(double l_v, double l_c, double l_y, double l2, const LossWeights& weights);

VectorXd extract_effects(const AdjustmentParams& params);
double predict_outcome(const RowVector& gamma_r, const RowVector& a, const AdjustmentParams& params);
VectorXd predict_outcomes(const SurrogateConfounder& gamma, const MatrixXd& causes, const AdjustmentParams& params);

/// Within-bin variance of each cause after binning restaurants into
/// quantile bins of the first principal component of γ_R.
struct PositivityProbe {
  VectorXd min_variance;  // per aspect, minimum over bins with >= 2 rows
  double min_over_aspects = 0.0;
  bool positive = false;
};

PositivityProbe positivity_probe(const SurrogateConfounder& gamma, const MatrixXd& causes, Index bins = 10);

}  // namespace dmcee
