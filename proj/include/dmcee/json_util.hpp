#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace dmcee {

using nlohmann::json;

/// {"shape": [rows, cols], "values": [row-major]}
json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j);
json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const json& j);

/// Doubles that are not finite are written as null.
json number_or_null(double v);

/// Two-space indented dump with a trailing newline.
std::string dump_json(const json& j);

}  // namespace dmcee
