#include "dmcee/dose.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dmcee/error.hpp"
#include "dmcee/io.hpp"

namespace dmcee {

double RegressionTree::predict(const double* row, Index stride) const {
  Index k = 0;
  while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
    const TreeNode& n = nodes[static_cast<std::size_t>(k)];
    k = row[n.feature * stride] <= n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(k)].value;
}

void BoostingConfig::check() const {
  if (rounds < 0) throw ConfigError("boosting: rounds must be non-negative");
  if (max_depth < 0) throw ConfigError("boosting: max_depth must be non-negative");
  if (!(shrinkage > 0.0 && shrinkage <= 1.0)) throw ConfigError("boosting: shrinkage must lie in (0, 1]");
  if (min_leaf < 1) throw ConfigError("boosting: min_leaf must be positive");
}

namespace {

class TreeBuilder {
 public:
  TreeBuilder(const MatrixXd& x, const std::vector<std::vector<Index>>& sorted, const BoostingConfig& cfg)
      : x_(x), sorted_(sorted), cfg_(cfg), member_(static_cast<std::size_t>(x.rows()), 0) {}

  RegressionTree build(const VectorXd& residual) {
    residual_ = &residual;
    RegressionTree tree;
    std::vector<Index> all(static_cast<std::size_t>(x_.rows()));
    std::iota(all.begin(), all.end(), Index{0});
    grow(tree, all, 0);
    return tree;
  }

 private:
  Index grow(RegressionTree& tree, const std::vector<Index>& rows, int depth) {
    const Index id = static_cast<Index>(tree.nodes.size());
    tree.nodes.emplace_back();
    double sum = 0.0;
    for (Index r : rows) sum += (*residual_)(r);
    const double n = static_cast<double>(rows.size());
    tree.nodes[static_cast<std::size_t>(id)].value = cfg_.shrinkage * sum / n;
    if (depth >= cfg_.max_depth || static_cast<Index>(rows.size()) < 2 * cfg_.min_leaf) return id;

    for (Index r : rows) member_[static_cast<std::size_t>(r)] = 1;
    const double parent = sum * sum / n;
    double best_gain = 0.0;
    Index best_feature = -1;
    double best_threshold = 0.0;
    double scale = 0.0;
    for (Index r : rows) scale += (*residual_)(r) * (*residual_)(r);
    const double min_gain = 1e-12 * scale;
    for (Index f = 0; f < x_.cols(); ++f) {
      double left_sum = 0.0;
      Index left_n = 0;
      const auto& order = sorted_[static_cast<std::size_t>(f)];
      Index prev = -1;
      for (Index r : order) {
        if (!member_[static_cast<std::size_t>(r)]) continue;
        if (prev >= 0 && x_(r, f) > x_(prev, f) && left_n >= cfg_.min_leaf &&
            static_cast<Index>(rows.size()) - left_n >= cfg_.min_leaf) {
          const double right_sum = sum - left_sum;
          const double right_n = n - static_cast<double>(left_n);
          const double gain =
              left_sum * left_sum / static_cast<double>(left_n) + right_sum * right_sum / right_n - parent;
          if (gain > best_gain && gain > min_gain) {
            best_gain = gain;
            best_feature = f;
            best_threshold = 0.5 * (x_(prev, f) + x_(r, f));
          }
        }
        left_sum += (*residual_)(r);
        ++left_n;
        prev = r;
      }
    }
    for (Index r : rows) member_[static_cast<std::size_t>(r)] = 0;
    if (best_feature < 0) return id;

    std::vector<Index> left, right;
    for (Index r : rows) (x_(r, best_feature) <= best_threshold ? left : right).push_back(r);
    const Index l = grow(tree, left, depth + 1);
    const Index rr = grow(tree, right, depth + 1);
    TreeNode& node = tree.nodes[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = rr;
    return id;
  }

  const MatrixXd& x_;
  const std::vector<std::vector<Index>>& sorted_;
  const BoostingConfig& cfg_;
  std::vector<char> member_;
  const VectorXd* residual_ = nullptr;
};

MatrixXd features(const MatrixXd& causes, const MatrixXd& gamma) {
  if (gamma.cols() > 0 && gamma.rows() != causes.rows()) throw DimensionError("response model: row counts differ");
  MatrixXd x(causes.rows(), causes.cols() + gamma.cols());
  x.leftCols(causes.cols()) = causes;
  if (gamma.cols() > 0) x.rightCols(gamma.cols()) = gamma;
  return x;
}

}  // namespace

ResponseModel fit_response(const MatrixXd& causes, const MatrixXd& gamma, const VectorXd& y,
                           const BoostingConfig& cfg, std::uint64_t) {
  cfg.check();
  if (causes.rows() < 2) throw DataError("fit_response: need at least two rows");
  if (y.size() != causes.rows()) throw DimensionError("fit_response: y length differs from rows");
  if (!y.allFinite()) throw DataError("fit_response: non-finite outcome");
  const MatrixXd x = features(causes, gamma);
  ResponseModel m;
  m.config = cfg;
  m.n_causes = causes.cols();
  m.n_features = x.cols();
  m.base = y.mean();
  std::vector<std::vector<Index>> sorted(static_cast<std::size_t>(x.cols()));
  for (Index f = 0; f < x.cols(); ++f) {
    auto& o = sorted[static_cast<std::size_t>(f)];
    o.resize(static_cast<std::size_t>(x.rows()));
    std::iota(o.begin(), o.end(), Index{0});
    std::stable_sort(o.begin(), o.end(), [&](Index a, Index b) { return x(a, f) < x(b, f); });
  }
  VectorXd pred = VectorXd::Constant(y.size(), m.base);
  m.train_loss.push_back((y - pred).squaredNorm() / static_cast<double>(y.size()));
  TreeBuilder builder(x, sorted, cfg);
  for (int round = 0; round < cfg.rounds; ++round) {
    const VectorXd residual = y - pred;
    RegressionTree tree = builder.build(residual);
    for (Index r = 0; r < x.rows(); ++r) pred(r) += tree.predict(x.data() + r, x.rows());
    m.trees.push_back(std::move(tree));
    m.train_loss.push_back((y - pred).squaredNorm() / static_cast<double>(y.size()));
  }
  return m;
}

double ResponseModel::predict(const RowVector& f) const {
  if (f.size() != n_features) throw DimensionError("ResponseModel: feature length mismatch");
  double out = base;
  for (const auto& t : trees) out += t.predict(f.data(), 1);
  return out;
}

VectorXd ResponseModel::predict(const MatrixXd& causes, const MatrixXd& gamma) const {
  const MatrixXd x = features(causes, gamma);
  if (x.cols() != n_features) throw DimensionError("ResponseModel: feature width mismatch");
  VectorXd out = VectorXd::Constant(x.rows(), base);
  for (const auto& t : trees)
    for (Index r = 0; r < x.rows(); ++r) out(r) += t.predict(x.data() + r, x.rows());
  return out;
}

DoseCurve dose_response(const ResponseModel& model, const MatrixXd& causes, const MatrixXd& gamma, Index aspect,
                        const VectorXd& levels) {
  if (causes.rows() == 0) throw DataError("dose_response: empty group");
  if (aspect < 0 || aspect >= causes.cols()) throw DimensionError("dose_response: aspect index out of range");
  for (Index i = 1; i < levels.size(); ++i) {
    if (!(levels(i) > levels(i - 1))) throw ConfigError("dose_response: levels must be strictly increasing");
  }
  DoseCurve c;
  c.aspect = aspect;
  c.levels = levels;
  c.responses.resize(levels.size());
  c.current_level = causes.col(aspect).mean();
  MatrixXd swept = causes;
  for (Index i = 0; i < levels.size(); ++i) {
    swept.col(aspect).setConstant(levels(i));
    c.responses(i) = model.predict(swept, gamma).mean();
  }
  return c;
}

VectorXd level_grid(const VectorXd& column, Index points) {
  if (column.size() == 0) throw DataError("level_grid: empty column");
  if (points < 2) throw ConfigError("level_grid: need at least two points");
  const double lo = column.minCoeff(), hi = column.maxCoeff();
  if (!(hi > lo)) throw DataError("level_grid: aspect is constant within the group");
  return VectorXd::LinSpaced(points, lo, hi);
}

double central_secant_slope(const DoseCurve& c) {
  const Index n = c.levels.size();
  if (n < 2) throw DataError("central_secant_slope: curve has fewer than two points");
  const double lo = c.levels(0), hi = c.levels(n - 1);
  auto at = [&](double x) {
    Index i = 1;
    while (i < n - 1 && c.levels(i) < x) ++i;
    const double t = (x - c.levels(i - 1)) / (c.levels(i) - c.levels(i - 1));
    return c.responses(i - 1) + t * (c.responses(i) - c.responses(i - 1));
  };
  const double x25 = lo + 0.25 * (hi - lo), x75 = lo + 0.75 * (hi - lo);
  return (at(x75) - at(x25)) / (x75 - x25);
}

std::vector<Index> significant_aspects(const EffectEstimate& e, double alpha) {
  std::vector<Index> out;
  for (Index j = 0; j < e.p_value.size(); ++j)
    if (e.p_value(j) < alpha) out.push_back(j);
  return out;
}

std::vector<RestaurantGroup> group_restaurants(const Dataset& d, const GroupingRule& rule) {
  const auto cols = d.x_r.group_columns(rule.covariate);
  std::vector<RestaurantGroup> groups;
  if (cols.empty() || !d.x_r.categorical[static_cast<std::size_t>(cols.front())]) {
    RestaurantGroup all{"all", {}};
    for (Index r = 0; r < d.n_restaurants(); ++r) all.rows.push_back(r);
    groups.push_back(std::move(all));
    return groups;
  }
  const std::string prefix = rule.covariate + "_";
  for (Index r = 0; r < d.n_restaurants(); ++r) {
    std::string level;
    for (Index c : cols) {
      if (d.x_r.values(r, c) == 1.0) level = d.x_r.names[static_cast<std::size_t>(c)].substr(prefix.size());
    }
    const auto it = rule.labels.find(level);
    const std::string label = it == rule.labels.end() ? rule.other_label : it->second;
    auto g = std::find_if(groups.begin(), groups.end(), [&](const RestaurantGroup& x) { return x.label == label; });
    if (g == groups.end()) {
      groups.push_back({label, {}});
      g = groups.end() - 1;
    }
    g->rows.push_back(r);
  }
  return groups;
}

void write_dose_csv(const std::vector<DoseCurve>& curves, const std::filesystem::path& path) {
  io::CsvWriter w(path);
  w.row({"group", "aspect", "level", "response", "current_level"});
  for (const auto& c : curves) {
    const std::string aspect = c.aspect_name.empty() ? std::to_string(c.aspect) : c.aspect_name;
    for (Index i = 0; i < c.levels.size(); ++i) {
      w.row({c.group, aspect, io::format_double(c.levels(i)), io::format_double(c.responses(i)),
             io::format_double(c.current_level)});
    }
  }
}

json to_json(const DoseCurve& c) {
  return {{"group", c.group},
          {"aspect", c.aspect_name.empty() ? std::to_string(c.aspect) : c.aspect_name},
          {"aspect_index", c.aspect},
          {"levels", vector_to_json(c.levels)},
          {"responses", vector_to_json(c.responses)},
          {"current_level", number_or_null(c.current_level)}};
}

}  // namespace dmcee
