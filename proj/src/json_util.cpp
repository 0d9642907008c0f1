#include "dmcee/json_util.hpp"

#include <cmath>
#include <limits>

#include "dmcee/error.hpp"

namespace dmcee {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json values = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) values.push_back(number_or_null(m(r, c)));
  }
  return {{"shape", {m.rows(), m.cols()}}, {"values", std::move(values)}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("shape").at(0).get<Eigen::Index>();
  const auto cols = j.at("shape").at(1).get<Eigen::Index>();
  const json& values = j.at("values");
  if (static_cast<Eigen::Index>(values.size()) != rows * cols) throw DataError("tensor: value count does not match shape");
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c, ++k) {
      m(r, c) = values[k].is_null() ? std::numeric_limits<double>::quiet_NaN() : values[k].get<double>();
    }
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number_or_null(v(i)));
  return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = j[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : j[i].get<double>();
  }
  return v;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

}  // namespace dmcee
