#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dmcee/adjustment.hpp"
#include "dmcee/json_util.hpp"

namespace dmcee {

enum class Optimizer { sgd, adam };

struct TrainConfig {
  int epochs = 500;
  Index batch_size = 32;
  double learning_rate = 0.1;
  LossWeights weights;  // alpha, beta, lambda
  Index embed_dim = 15;
  Index layer_size = 5;
  Index n_layers = 1;
  Index gamma_dim = 0;  // 0 means layer_size
  double node_dropout = 0.1;
  double mess_dropout = 0.1;
  double leaky_slope = 0.2;
  Optimizer optimizer = Optimizer::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// When false the outcome loss is left out of the objective (cause-only
  /// and encoder-only variants); l_y is then reported as 0.
  bool include_outcome = true;
  Index negatives_per_positive = 1;
  /// Tensor names (see tensor_names) that keep their initial values.
  std::vector<std::string> frozen;
  /// Abort when the epoch loss exceeds max(limit, 1e6 * initial loss).
  double divergence_limit = 1e12;
  std::uint64_t seed = 1;

  Index effective_gamma_dim() const { return gamma_dim > 0 ? gamma_dim : layer_size; }
  void check() const;
  /// Embed size 32 and batch size 1024 for the observational data sets.
  static TrainConfig real_defaults();
};

json to_json(const TrainConfig& config);
/// Overrides fields of `base` with the keys present in `j`; unknown keys throw ConfigError.
TrainConfig train_config_from_json(const json& j, TrainConfig base = {});

struct FittedModel {
  ModelParams params;
  std::vector<LossBreakdown> history;  // one entry per epoch, dropout off, full data
  TrainConfig config;
  std::uint64_t seed = 0;
};

/// View of one trainable tensor. Vectors are n x 1.
struct TensorRef {
  std::string name;
  double* data;
  Index rows;
  Index cols;
  Index size() const { return rows * cols; }
};

/// w_r, w_u, layer<k>.w_1, layer<k>.w_2, gamma_map, theta_c, theta_a, theta_gamma.
std::vector<TensorRef> tensors(ModelParams& params);
std::vector<std::string> tensor_names(Index n_layers);
ModelParams zeros_like(const ModelParams& params);

/// Uniform Xavier initialization from Rng::stream(seed, kInit, 0); the
/// gamma map starts at the identity when it is square.
ModelParams init_params(const Dataset& dataset, const TrainConfig& config);

FittedModel train(const Dataset& dataset, const TrainConfig& config);
/// Starts from `initial` instead of init_params.
FittedModel train(const Dataset& dataset, const TrainConfig& config, const ModelParams& initial);

struct Gradient {
  LossBreakdown loss;
  ModelParams grad;
};

/// Loss and analytic gradient over `batch` (L_v) and `outcome_rows` (L_c, L_y)
/// with dropout off, evaluated by full-graph propagation.
Gradient gradient(const Dataset& dataset, const TripleBatch& batch, std::span<const Index> outcome_rows,
                  const ModelParams& params, const TrainConfig& config);
LossBreakdown evaluate_loss(const Dataset& dataset, const TripleBatch& batch, std::span<const Index> outcome_rows,
                            const ModelParams& params, const TrainConfig& config);

struct AuditResult {
  double max_relative_error = 0.0;
  Index coordinates_checked = 0;
  std::string worst_tensor;
  Index worst_index = -1;
};

/// Central differences on a sampled subset of coordinates (all of them when
/// there are at most `min_coordinates`). Relative error uses
/// max(|analytic|, |numeric|) floored at 1e-8 as denominator.
AuditResult finite_diff_audit(const Dataset& dataset, const TripleBatch& batch, std::span<const Index> outcome_rows,
                              const ModelParams& params, const TrainConfig& config, double step,
                              Index min_coordinates = 200, std::uint64_t seed = 0);

/// Eval-mode encoding and surrogate of a trained model.
EncodedNodes encode(const Dataset& dataset, const ModelParams& params);
SurrogateConfounder fitted_surrogate(const Dataset& dataset, const ModelParams& params);

void save_checkpoint(const FittedModel& model, const std::filesystem::path& path);
FittedModel load_checkpoint(const std::filesystem::path& path);
/// epoch,l_v,l_c,l_y,l2,total
void write_training_curve(const std::vector<LossBreakdown>& history, const std::filesystem::path& path);

}  // namespace dmcee
