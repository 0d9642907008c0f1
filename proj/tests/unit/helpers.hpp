#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dmcee/data.hpp"
#include "dmcee/io.hpp"
#include "dmcee/json_util.hpp"
#include "dmcee/train.hpp"

namespace testing {

using dmcee::Dataset;
using dmcee::Index;
using dmcee::json;
using dmcee::MatrixXd;
using dmcee::VectorXd;

inline json fixture(const std::string& name) {
  return json::parse(dmcee::io::read_text(std::filesystem::path(DMCEE_FIXTURE_DIR) / (name + ".json")));
}

inline MatrixXd mat(const json& rows) {
  const Index n = static_cast<Index>(rows.size());
  const Index c = n ? static_cast<Index>(rows[0].size()) : 0;
  MatrixXd m(n, c);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rows[i][j].get<double>();
  return m;
}

inline VectorXd vec(const json& v) {
  VectorXd out(static_cast<Index>(v.size()));
  for (Index i = 0; i < out.size(); ++i) out(i) = v[i].get<double>();
  return out;
}

inline dmcee::CovariateTable numeric_table(const MatrixXd& m, const std::string& prefix) {
  dmcee::CovariateTable t;
  for (Index c = 0; c < m.cols(); ++c) t.add_numeric(prefix + std::to_string(c), m.col(c));
  if (m.cols() == 0) t.values.resize(m.rows(), 0);
  return t;
}

/// Dataset from matrices; `edges` holds (consumer, restaurant) pairs.
inline Dataset make_dataset(const MatrixXd& x_r, const MatrixXd& x_u, const std::vector<dmcee::Edge>& edges,
                            const MatrixXd& causes, const VectorXd& outcome) {
  Dataset d;
  d.graph = dmcee::BipartiteGraph(x_r.rows(), x_u.rows(), edges);
  for (Index r = 0; r < x_r.rows(); ++r) d.restaurant_ids.push_back("r" + std::to_string(r));
  for (Index u = 0; u < x_u.rows(); ++u) d.consumer_ids.push_back("u" + std::to_string(u));
  d.x_r = numeric_table(x_r, "xr");
  d.x_u = numeric_table(x_u, "xu");
  d.causes = causes;
  d.outcome = outcome;
  for (Index j = 0; j < causes.cols(); ++j) d.aspect_names.push_back("a" + std::to_string(j));
  return d;
}

inline std::vector<dmcee::Edge> edges_from(const json& pairs) {
  std::vector<dmcee::Edge> e;
  for (const auto& p : pairs) e.push_back({p[0].get<Index>(), p[1].get<Index>()});
  return e;
}

/// Restaurant r linked to consumer r mod n_consumers; enough graph for the regression baselines.
inline Dataset regression_dataset(const MatrixXd& causes, const VectorXd& y, const MatrixXd& x_r) {
  const Index n = causes.rows(), nu = 4;
  std::vector<dmcee::Edge> edges;
  for (Index r = 0; r < n; ++r) edges.push_back({r % nu, r});
  return make_dataset(x_r, MatrixXd::Ones(nu, 1), edges, causes, y);
}

inline dmcee::ModelParams params_from(const json& j, double slope) {
  dmcee::ModelParams p;
  p.encoder.w_r = mat(j["w_r"]);
  p.encoder.w_u = mat(j["w_u"]);
  for (const auto& l : j["layers"]) p.encoder.layers.push_back({mat(l["w_1"]), mat(l["w_2"])});
  p.encoder.leaky_slope = slope;
  if (j.contains("gamma_map")) {
    p.adjustment.gamma_map = mat(j["gamma_map"]);
    p.adjustment.theta_c = mat(j["theta_c"]);
    p.adjustment.theta_a = vec(j["theta_a"]);
    p.adjustment.theta_gamma = vec(j["theta_gamma"]);
  }
  return p;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("dmcee_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Two restaurants, three consumers, four edges.
inline Dataset tiny_dataset() {
  MatrixXd x_r(2, 1), x_u(3, 1), a(2, 2);
  x_r << 1, 2;
  x_u << 0.5, 1.5, 2.5;
  a << 0.2, 0.8, 0.6, 0.4;
  VectorXd y(2);
  y << 1.0, 2.0;
  return make_dataset(x_r, x_u, {{0, 0}, {1, 0}, {1, 1}, {2, 1}}, a, y);
}

}  // namespace testing
