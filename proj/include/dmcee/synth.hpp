#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dmcee/data.hpp"

namespace dmcee {

/// How the per-aspect cause columns aggregate reviewer sentiment.
enum class CauseAggregation {
  reviewers_only,  // sum over u in N_r of (2 Bern(s_ur) - 1)
  literal,         // sum over all u of (2 Bern(s_ur) G_ur - 1)
};

struct SynthConfig {
  Index n_restaurants = 100;
  Index n_consumers = 1000;
  Index latent_dim = 15;
  Index n_aspects = 10;  // 2m
  double bernoulli_floor = 0.01;
  double bernoulli_ceiling = 0.99;
  Index replicate_count = 10;
  std::uint64_t seed = 20220226;
  CauseAggregation aggregation = CauseAggregation::reviewers_only;
  /// When > 0, edge probabilities are rescaled to this mean density
  /// (min(1, s * target / mean(s))); cause draws still use s. Off by default.
  double density_target = 0.0;
  /// Multiplies the drawn W_Z; 0 gives an unconfounded outcome y = A W_A.
  double confounder_scale = 1.0;

  void check() const;
};

/// A synthetic dataset together with the ground truth that produced it.
struct SyntheticInstance {
  Dataset dataset;
  MatrixXd r_tilde;  // n_restaurants x D
  MatrixXd u_tilde;  // n_consumers x D
  MatrixXd s;        // n_consumers x n_restaurants
  MatrixXd z;        // n_restaurants x 2D : [r_tilde, G^T u_tilde]
  VectorXd w_a;      // 2m
  VectorXd w_z;      // 2D
  std::vector<Index> observed_r;  // columns of r_tilde exposed in dataset.x_r
  std::vector<Index> observed_u;
  Index replicate_index = 0;
};

/// Min-max maps the whole matrix affinely onto [floor, ceiling].
MatrixXd normalize_scores(const MatrixXd& raw, double floor = 0.01, double ceiling = 0.99);

/// Draws one replicate. The replicate stream is
/// Rng::stream(seed, streams::kSynthReplicate, replicate_index), consumed in
/// this order: R~ row-major, U~ row-major, G (consumer-major, one uniform per
/// consumer/restaurant pair), causes (aspect-major, then restaurant, then its
/// reviewers ascending; literal mode draws for every consumer), W_A for
/// aspects 1..2m, W_Z for its 2D entries. Observed covariates come from
/// observe_covariates with the stream (seed, kObserveCovariates, replicate_index).
SyntheticInstance generate_replicate(const SynthConfig& config, Index replicate_index);

struct ObservedCovariates {
  CovariateTable x_u;
  CovariateTable x_r;
  std::vector<Index> columns_u;
  std::vector<Index> columns_r;
};

/// Samples floor(D/2) latent columns without replacement, independently for
/// each side. Chosen indices are sorted ascending.
ObservedCovariates observe_covariates(const SyntheticInstance& instance, std::uint64_t seed);

/// Ground-truth per-unit effects (the outcome is linear in A).
VectorXd true_effects(const SyntheticInstance& instance);

/// Writes the dataset CSVs plus ground_truth.json into `dir`.
void save_instance(const SyntheticInstance& instance, const SynthConfig& config, const std::filesystem::path& dir);
/// Reads the ground-truth sidecar written by save_instance (dataset included).
SyntheticInstance load_instance(const std::filesystem::path& dir);

/// Stand-in for an observational dataset with named restaurant covariates:
/// `location` (3 levels), `category` (bar, fast_food, other), `rating` and
/// `price_range`, derived from the latent restaurant covariates of a
/// generated replicate. Aspect names follow Food/Service/Price/Ambience/
/// Anecdotal pos/neg pairs when 2m == 10.
SyntheticInstance make_standin(const SynthConfig& config, Index replicate_index);

std::vector<std::string> default_aspect_names(Index n_aspects);

}  // namespace dmcee
