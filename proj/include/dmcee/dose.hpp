#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dmcee/baselines.hpp"

namespace dmcee {

struct TreeNode {
  Index feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // go left when x[feature] <= threshold
  Index left = -1;
  Index right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  double predict(const double* row, Index stride) const;
};

struct BoostingConfig {
  int rounds = 100;
  int max_depth = 4;
  double shrinkage = 0.1;
  Index min_leaf = 1;
  void check() const;
};

/// Squared-loss gradient-boosted trees on the feature layout [A, γ̂].
struct ResponseModel {
  double base = 0.0;
  std::vector<RegressionTree> trees;
  BoostingConfig config;
  Index n_causes = 0;
  Index n_features = 0;
  std::vector<double> train_loss;  // mean squared error after each round, round 0 = base only

  double predict(const RowVector& features) const;
  VectorXd predict(const MatrixXd& causes, const MatrixXd& gamma) const;
};

/// Exact greedy splits over every feature. The fit is deterministic; `seed`
/// is accepted for symmetry with sampling learners and does not change it.
ResponseModel fit_response(const MatrixXd& causes, const MatrixXd& gamma, const VectorXd& y,
                           const BoostingConfig& config = {}, std::uint64_t seed = 0);

struct DoseCurve {
  std::string group;
  Index aspect = 0;
  std::string aspect_name;
  VectorXd levels;
  VectorXd responses;
  double current_level = 0.0;
};

/// Mean prediction over the group's rows with cause `aspect` set to each level.
DoseCurve dose_response(const ResponseModel& model, const MatrixXd& causes, const MatrixXd& gamma, Index aspect,
                        const VectorXd& levels);

/// `points` evenly spaced values spanning [min, max] of `column`.
VectorXd level_grid(const VectorXd& column, Index points = 25);

/// Slope of the chord between the curve values at the 25% and 75% points
/// of the level range (linear interpolation on the grid).
double central_secant_slope(const DoseCurve& curve);

std::vector<Index> significant_aspects(const EffectEstimate& estimate, double alpha = 0.05);

struct GroupingRule {
  std::string covariate = "category";
  /// level -> group label; unmatched levels go to `other_label`.
  std::map<std::string, std::string> labels{{"bar", "Bar"}, {"fast_food", "Fast Food"}};
  std::string other_label = "Other";
};

struct RestaurantGroup {
  std::string label;
  std::vector<Index> rows;
};

/// Groups in label order of first appearance. Without the covariate: one group "all".
std::vector<RestaurantGroup> group_restaurants(const Dataset& dataset, const GroupingRule& rule = {});

/// group, aspect, level, response, current_level
void write_dose_csv(const std::vector<DoseCurve>& curves, const std::filesystem::path& path);
json to_json(const DoseCurve& curve);

}  // namespace dmcee
