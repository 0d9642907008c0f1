#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dmcee {

using Index = Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// A review-writing relationship: consumer `consumer` reviewed restaurant `restaurant`.
struct Edge {
  Index consumer = 0;
  Index restaurant = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Consumer x restaurant bipartite interaction graph.
///
/// Construction never throws on bad edges so that `validate` can report them;
/// out-of-range edges are kept in `edges()` but excluded from adjacency.
/// Adjacency lists are sorted ascending.
class BipartiteGraph {
 public:
  BipartiteGraph() = default;
  BipartiteGraph(Index n_restaurants, Index n_consumers, std::vector<Edge> edges);

  Index n_restaurants() const { return n_restaurants_; }
  Index n_consumers() const { return n_consumers_; }
  Index n_edges() const { return static_cast<Index>(edges_.size()); }
  const std::vector<Edge>& edges() const { return edges_; }

  std::span<const Index> restaurant_neighbors(Index r) const;
  std::span<const Index> consumer_neighbors(Index u) const;
  Index restaurant_degree(Index r) const;
  Index consumer_degree(Index u) const;
  bool has_edge(Index consumer, Index restaurant) const;

  bool edge_in_range(const Edge& e) const {
    return e.consumer >= 0 && e.consumer < n_consumers_ && e.restaurant >= 0 && e.restaurant < n_restaurants_;
  }

 private:
  Index n_restaurants_ = 0;
  Index n_consumers_ = 0;
  std::vector<Edge> edges_;
  std::vector<Index> r_offsets_, r_adj_;
  std::vector<Index> u_offsets_, u_adj_;
};

/// Dense covariate matrix with named columns.
///
/// Each column belongs to a covariate group: a numeric covariate is its own
/// group, a categorical covariate `location` with levels a,b,c becomes the
/// one-hot columns `location_a`, `location_b`, `location_c` sharing group
/// `location`.
struct CovariateTable {
  std::vector<std::string> names;
  std::vector<std::string> groups;
  std::vector<bool> categorical;  // per column
  MatrixXd values;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }

  /// Distinct group names in column order.
  std::vector<std::string> group_names() const;
  std::vector<Index> group_columns(const std::string& group) const;
  std::optional<Index> column_index(const std::string& name) const;

  void add_numeric(const std::string& name, const VectorXd& column);
  /// One-hot encodes `labels`, one column per level in sorted order.
  void add_categorical(const std::string& name, const std::vector<std::string>& labels);
  CovariateTable select_rows(std::span<const Index> rows) const;
  CovariateTable drop_columns(std::span<const Index> cols) const;

  friend bool operator==(const CovariateTable&, const CovariateTable&) = default;
};

/// Observational data: graph, covariates of both sides, causes A and outcome y.
/// Row order is load order; every downstream index is positional.
struct Dataset {
  BipartiteGraph graph;
  std::vector<std::string> restaurant_ids;
  std::vector<std::string> consumer_ids;
  CovariateTable x_r;
  CovariateTable x_u;
  MatrixXd causes;  // n_restaurants x 2m
  VectorXd outcome;
  std::vector<std::string> aspect_names;

  Index n_restaurants() const { return graph.n_restaurants(); }
  Index n_consumers() const { return graph.n_consumers(); }
  Index n_causes() const { return causes.cols(); }
};

enum class Severity { warning, error };

struct ValidationIssue {
  Severity severity;
  std::string message;
};

struct ValidationReport {
  bool ok = true;
  std::vector<ValidationIssue> issues;

  void add(Severity severity, std::string message);
  std::size_t error_count() const;
};

/// Fixed file names inside a dataset directory.
struct DatasetPaths {
  std::filesystem::path restaurants;
  std::filesystem::path consumers;
  std::filesystem::path edges;
  std::filesystem::path causes;
  std::filesystem::path outcomes;

  static DatasetPaths in_directory(const std::filesystem::path& dir);
};

/// Reads the five CSV files. Non-numeric covariate columns are one-hot
/// encoded. Throws DataError naming file and line.
Dataset load_dataset(const DatasetPaths& paths);
/// Writes the five CSV files; categorical groups are written back as labels.
void save_dataset(const Dataset& dataset, const DatasetPaths& paths);

ValidationReport validate(const Dataset& dataset);

/// Removes a covariate from x_r. `column_name` may be a group name
/// (removes the whole one-hot group), an exact column name, or a prefix
/// pattern ending in `*` such as `location_*`.
Dataset hide_covariate(const Dataset& dataset, const std::string& column_name);

/// Partitions restaurants by cluster membership; consumers are kept in both
/// halves and edges follow their restaurant.
std::pair<Dataset, Dataset> split_by_assignment(const Dataset& dataset, std::span<const Index> assignment,
                                                Index test_cluster);

/// Restaurants `rows` (in that order) with all consumers and the edges between them.
Dataset select_restaurants(const Dataset& dataset, std::span<const Index> rows);

}  // namespace dmcee
