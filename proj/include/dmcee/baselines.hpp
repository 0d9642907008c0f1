#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dmcee/train.hpp"

namespace dmcee {

/// Coefficients, standard errors and two-sided p-values; entry 0 is the intercept.
struct OlsResult {
  VectorXd coef;
  VectorXd std_err;
  VectorXd p_value;
  double rss = 0.0;
  Index dof = 0;
};

/// Least squares with an intercept column prepended, solved by column-pivoted
/// QR. A rank-deficient design throws NumericError naming the dependent columns.
OlsResult ols_fit(const MatrixXd& design, const VectorXd& y, const std::vector<std::string>& column_names = {});

struct EffectEstimate {
  std::string method;
  VectorXd tau_hat;
  VectorXd std_err;
  VectorXd p_value;
  /// Coefficients of the post-hoc regression of y on [A, γ_R] for the
  /// methods that read θ_A from the network; empty otherwise.
  VectorXd refit_tau;
  std::optional<MatrixXd> aux;  // surrogate confounder used, if any
};

/// Regression of y on [A, controls]; the A block becomes the estimate.
EffectEstimate effects_with_controls(const Dataset& dataset, const MatrixXd& controls, const std::string& method,
                                     const std::vector<std::string>& control_names = {});

/// Restaurant covariates usable next to an intercept: one reference level
/// per categorical group and every constant column are dropped.
CovariateTable control_covariates(const CovariateTable& x_r);

EffectEstimate lr_effects(const Dataset& dataset);
EffectEstimate lr_con_effects(const Dataset& dataset);

struct PpcaModel {
  MatrixXd loadings;       // 2m x k
  double noise_variance = 0.0;
  VectorXd mean;           // 2m
  MatrixXd z_hat;          // n x k posterior means
  MatrixXd z_sample;       // n x k, one posterior draw
  VectorXd eigenvalues;    // sample covariance spectrum, descending
  Index k = 0;
};

/// Closed-form maximum-likelihood PPCA. The posterior draw uses `seed`.
PpcaModel ppca_fit(const MatrixXd& causes, Index k, std::uint64_t seed);
/// Posterior mean of the latent factors of rows `causes`: (a - μ) W M⁻¹, M = WᵀW + σ²I.
MatrixXd ppca_posterior_mean(const PpcaModel& model, const MatrixXd& causes);
/// Posterior mean plus one N(0, σ²M⁻¹) draw per row from Rng(seed).
MatrixXd ppca_posterior_sample(const PpcaModel& model, const MatrixXd& causes, std::uint64_t seed);
/// Log-likelihood of rows of `causes` under the fitted marginal N(μ, WWᵀ + σ²I).
double ppca_log_likelihood(const PpcaModel& model, const MatrixXd& causes);

struct DeconfounderDiagnostics {
  double heldout_log_likelihood = 0.0;  // mean per held-out row
  Index heldout_rows = 0;
};

/// PPCA on A, then OLS of y on [A, Ẑ] where Ẑ is one draw from the latent
/// posterior (the posterior mean is an affine function of A and would make
/// the design singular). k = 0 is plain LR.
EffectEstimate deconfounder_effects(const Dataset& dataset, Index k, std::uint64_t seed,
                                    DeconfounderDiagnostics* diagnostics = nullptr);

/// Encoder trained on L_v alone, then OLS of y on [A, e'_R].
EffectEstimate gcn_effects(const Dataset& dataset, const TrainConfig& config, FittedModel* fitted = nullptr);

enum class Variant { d_out, d_cau, dmcee };

std::string variant_name(Variant v);
TrainConfig variant_config(const TrainConfig& base, Variant v);
EffectEstimate variant_effects(const Dataset& dataset, const TrainConfig& config, Variant variant,
                               FittedModel* fitted = nullptr);
/// Estimate of an already trained model; `model` must have been trained with variant_config(…, variant).
EffectEstimate estimate_from_model(const Dataset& dataset, const FittedModel& model, Variant variant);

/// method, aspect, tau_hat, std_err, p_value, refit_tau
void write_effects_csv(const std::vector<EffectEstimate>& estimates, const std::vector<std::string>& aspect_names,
                       const std::filesystem::path& path);

}  // namespace dmcee
