#include "dmcee/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "dmcee/error.hpp"
#include "dmcee/io.hpp"

namespace dmcee {

// ---------------------------------------------------------------- graph

BipartiteGraph::BipartiteGraph(Index n_restaurants, Index n_consumers, std::vector<Edge> edges)
    : n_restaurants_(n_restaurants), n_consumers_(n_consumers), edges_(std::move(edges)) {
  if (n_restaurants < 0 || n_consumers < 0) throw DataError("graph: negative node count");
  r_offsets_.assign(static_cast<std::size_t>(n_restaurants + 1), 0);
  u_offsets_.assign(static_cast<std::size_t>(n_consumers + 1), 0);
  for (const Edge& e : edges_) {
    if (!edge_in_range(e)) continue;
    ++r_offsets_[static_cast<std::size_t>(e.restaurant + 1)];
    ++u_offsets_[static_cast<std::size_t>(e.consumer + 1)];
  }
  for (std::size_t i = 1; i < r_offsets_.size(); ++i) r_offsets_[i] += r_offsets_[i - 1];
  for (std::size_t i = 1; i < u_offsets_.size(); ++i) u_offsets_[i] += u_offsets_[i - 1];
  r_adj_.resize(static_cast<std::size_t>(r_offsets_.back()));
  u_adj_.resize(static_cast<std::size_t>(u_offsets_.back()));
  std::vector<Index> r_fill(r_offsets_.begin(), r_offsets_.end() - 1);
  std::vector<Index> u_fill(u_offsets_.begin(), u_offsets_.end() - 1);
  for (const Edge& e : edges_) {
    if (!edge_in_range(e)) continue;
    r_adj_[static_cast<std::size_t>(r_fill[static_cast<std::size_t>(e.restaurant)]++)] = e.consumer;
    u_adj_[static_cast<std::size_t>(u_fill[static_cast<std::size_t>(e.consumer)]++)] = e.restaurant;
  }
  for (Index r = 0; r < n_restaurants_; ++r) {
    std::sort(r_adj_.begin() + r_offsets_[r], r_adj_.begin() + r_offsets_[r + 1]);
  }
  for (Index u = 0; u < n_consumers_; ++u) {
    std::sort(u_adj_.begin() + u_offsets_[u], u_adj_.begin() + u_offsets_[u + 1]);
  }
}

std::span<const Index> BipartiteGraph::restaurant_neighbors(Index r) const {
  const auto b = static_cast<std::size_t>(r_offsets_[static_cast<std::size_t>(r)]);
  const auto e = static_cast<std::size_t>(r_offsets_[static_cast<std::size_t>(r + 1)]);
  return {r_adj_.data() + b, e - b};
}

std::span<const Index> BipartiteGraph::consumer_neighbors(Index u) const {
  const auto b = static_cast<std::size_t>(u_offsets_[static_cast<std::size_t>(u)]);
  const auto e = static_cast<std::size_t>(u_offsets_[static_cast<std::size_t>(u + 1)]);
  return {u_adj_.data() + b, e - b};
}

Index BipartiteGraph::restaurant_degree(Index r) const {
  return r_offsets_[static_cast<std::size_t>(r + 1)] - r_offsets_[static_cast<std::size_t>(r)];
}

Index BipartiteGraph::consumer_degree(Index u) const {
  return u_offsets_[static_cast<std::size_t>(u + 1)] - u_offsets_[static_cast<std::size_t>(u)];
}

bool BipartiteGraph::has_edge(Index consumer, Index restaurant) const {
  const auto nb = consumer_neighbors(consumer);
  return std::binary_search(nb.begin(), nb.end(), restaurant);
}

// ---------------------------------------------------------------- covariates

std::vector<std::string> CovariateTable::group_names() const {
  std::vector<std::string> out;
  for (const auto& g : groups) {
    if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
  }
  return out;
}

std::vector<Index> CovariateTable::group_columns(const std::string& group) const {
  std::vector<Index> out;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    if (groups[c] == group) out.push_back(static_cast<Index>(c));
  }
  return out;
}

std::optional<Index> CovariateTable::column_index(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<Index>(it - names.begin());
}

void CovariateTable::add_numeric(const std::string& name, const VectorXd& column) {
  if (values.size() == 0 && names.empty()) values.resize(column.size(), 0);
  if (column.size() != values.rows()) throw DimensionError("covariate column " + name + ": row count mismatch");
  values.conservativeResize(values.rows(), values.cols() + 1);
  values.col(values.cols() - 1) = column;
  names.push_back(name);
  groups.push_back(name);
  categorical.push_back(false);
}

void CovariateTable::add_categorical(const std::string& name, const std::vector<std::string>& labels) {
  const auto n = static_cast<Index>(labels.size());
  if (values.size() == 0 && names.empty()) values.resize(n, 0);
  if (n != values.rows()) throw DimensionError("covariate column " + name + ": row count mismatch");
  std::set<std::string> levels(labels.begin(), labels.end());
  for (const auto& level : levels) {
    VectorXd col(n);
    for (Index i = 0; i < n; ++i) col(i) = labels[static_cast<std::size_t>(i)] == level ? 1.0 : 0.0;
    values.conservativeResize(n, values.cols() + 1);
    values.col(values.cols() - 1) = col;
    names.push_back(name + "_" + level);
    groups.push_back(name);
    categorical.push_back(true);
  }
}

CovariateTable CovariateTable::select_rows(std::span<const Index> rows) const {
  CovariateTable out;
  out.names = names;
  out.groups = groups;
  out.categorical = categorical;
  out.values.resize(static_cast<Index>(rows.size()), values.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.values.row(static_cast<Index>(i)) = values.row(rows[i]);
  return out;
}

CovariateTable CovariateTable::drop_columns(std::span<const Index> cols) const {
  CovariateTable out;
  std::vector<Index> keep;
  for (Index c = 0; c < values.cols(); ++c) {
    if (std::find(cols.begin(), cols.end(), c) == cols.end()) keep.push_back(c);
  }
  out.values.resize(values.rows(), static_cast<Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto c = static_cast<std::size_t>(keep[i]);
    out.values.col(static_cast<Index>(i)) = values.col(keep[i]);
    out.names.push_back(names[c]);
    out.groups.push_back(groups[c]);
    out.categorical.push_back(categorical[c]);
  }
  return out;
}

// ---------------------------------------------------------------- validation

void ValidationReport::add(Severity severity, std::string message) {
  if (severity == Severity::error) ok = false;
  issues.push_back({severity, std::move(message)});
}

std::size_t ValidationReport::error_count() const {
  return static_cast<std::size_t>(
      std::count_if(issues.begin(), issues.end(), [](const auto& i) { return i.severity == Severity::error; }));
}

namespace {

constexpr std::size_t kMaxNonFiniteIssues = 20;

void check_finite(ValidationReport& report, const MatrixXd& m, const std::string& what) {
  std::size_t found = 0;
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (std::isfinite(m(r, c))) continue;
      if (found < kMaxNonFiniteIssues) {
        report.add(Severity::error, what + ": non-finite value at row " + std::to_string(r) + ", column " +
                                        std::to_string(c));
      }
      ++found;
    }
  }
  if (found > kMaxNonFiniteIssues) {
    report.add(Severity::error, what + ": " + std::to_string(found - kMaxNonFiniteIssues) + " more non-finite values");
  }
}

void check_table(ValidationReport& report, const CovariateTable& t, Index rows, const std::string& what) {
  if (t.values.rows() != rows) {
    report.add(Severity::error, what + ": " + std::to_string(t.values.rows()) + " rows, expected " +
                                    std::to_string(rows));
  }
  const auto cols = static_cast<std::size_t>(t.values.cols());
  if (t.names.size() != cols || t.groups.size() != cols || t.categorical.size() != cols) {
    report.add(Severity::error, what + ": column metadata does not match column count");
  }
  std::set<std::string> seen;
  for (const auto& n : t.names) {
    if (!seen.insert(n).second) report.add(Severity::error, what + ": duplicate column name " + n);
  }
  check_finite(report, t.values, what);
}

}  // namespace

ValidationReport validate(const Dataset& d) {
  ValidationReport report;
  const Index nr = d.graph.n_restaurants();
  const Index nu = d.graph.n_consumers();

  if (static_cast<Index>(d.restaurant_ids.size()) != nr) report.add(Severity::error, "restaurant id count mismatch");
  if (static_cast<Index>(d.consumer_ids.size()) != nu) report.add(Severity::error, "consumer id count mismatch");
  check_table(report, d.x_r, nr, "x_r");
  check_table(report, d.x_u, nu, "x_u");
  if (d.causes.rows() != nr) report.add(Severity::error, "causes: row count does not match restaurants");
  if (d.outcome.size() != nr) report.add(Severity::error, "outcome: length does not match restaurants");
  check_finite(report, d.causes, "causes");
  for (Index r = 0; r < d.outcome.size(); ++r) {
    if (!std::isfinite(d.outcome(r))) report.add(Severity::error, "outcome: non-finite value at row " + std::to_string(r));
  }

  if (d.causes.cols() == 0) report.add(Severity::error, "causes: no aspect columns");
  if (d.causes.cols() % 2 != 0) report.add(Severity::error, "causes: aspect count must be even (positive/negative pairs)");
  if (static_cast<Index>(d.aspect_names.size()) != d.causes.cols()) {
    report.add(Severity::error, "aspect_names: length does not match cause columns");
  }
  {
    std::set<std::string> seen;
    for (const auto& a : d.aspect_names) {
      if (!seen.insert(a).second) report.add(Severity::error, "aspect_names: duplicate " + a);
    }
  }

  std::set<std::pair<Index, Index>> seen_edges;
  for (std::size_t i = 0; i < d.graph.edges().size(); ++i) {
    const Edge& e = d.graph.edges()[i];
    if (!d.graph.edge_in_range(e)) {
      report.add(Severity::error, "edge " + std::to_string(i) + " references invalid node (consumer " +
                                      std::to_string(e.consumer) + ", restaurant " + std::to_string(e.restaurant) + ")");
      continue;
    }
    if (!seen_edges.insert({e.consumer, e.restaurant}).second) {
      report.add(Severity::error, "duplicate edge (consumer " + std::to_string(e.consumer) + ", restaurant " +
                                      std::to_string(e.restaurant) + ")");
    }
  }
  Index isolated_r = 0, isolated_u = 0;
  for (Index r = 0; r < nr; ++r) isolated_r += d.graph.restaurant_degree(r) == 0;
  for (Index u = 0; u < nu; ++u) isolated_u += d.graph.consumer_degree(u) == 0;
  if (isolated_r) report.add(Severity::warning, std::to_string(isolated_r) + " restaurants without reviews");
  if (isolated_u) report.add(Severity::warning, std::to_string(isolated_u) + " consumers without reviews");
  return report;
}

// ---------------------------------------------------------------- file I/O

DatasetPaths DatasetPaths::in_directory(const std::filesystem::path& dir) {
  return {dir / "restaurants.csv", dir / "consumers.csv", dir / "edges.csv", dir / "causes.csv",
          dir / "outcomes.csv"};
}

namespace {

std::string at(const std::filesystem::path& p, std::size_t line) { return p.string() + ":" + std::to_string(line); }

struct NodeTable {
  std::vector<std::string> ids;
  std::unordered_map<std::string, Index> index;
  CovariateTable covariates;
};

NodeTable read_nodes(const std::filesystem::path& path) {
  const io::CsvTable t = io::read_csv(path);
  if (t.header.empty() || t.header[0] != "id") throw DataError(at(path, 1) + ": schema mismatch, first column must be 'id'");
  NodeTable out;
  const std::size_t n = t.rows.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& id = t.rows[i][0];
    if (id.empty()) throw DataError(at(path, t.line_numbers[i]) + ": empty id");
    if (!out.index.emplace(id, static_cast<Index>(i)).second) {
      throw DataError(at(path, t.line_numbers[i]) + ": duplicate id " + id);
    }
    out.ids.push_back(id);
  }
  out.covariates.values.resize(static_cast<Index>(n), 0);
  for (std::size_t c = 1; c < t.header.size(); ++c) {
    const std::string& name = t.header[c];
    VectorXd col(static_cast<Index>(n));
    bool numeric = true;
    for (std::size_t i = 0; i < n && numeric; ++i) {
      double v;
      numeric = io::parse_double(t.rows[i][c], v);
      if (numeric && !std::isfinite(v)) {
        throw DataError(at(path, t.line_numbers[i]) + ": non-finite value in column " + name);
      }
      if (numeric) col(static_cast<Index>(i)) = v;
    }
    if (numeric) {
      out.covariates.add_numeric(name, col);
    } else {
      std::vector<std::string> labels;
      for (std::size_t i = 0; i < n; ++i) {
        if (t.rows[i][c].empty()) throw DataError(at(path, t.line_numbers[i]) + ": empty categorical value in " + name);
        labels.push_back(t.rows[i][c]);
      }
      out.covariates.add_categorical(name, labels);
    }
  }
  return out;
}

Index lookup(const NodeTable& nodes, const std::string& id, const std::filesystem::path& path, std::size_t line,
             const char* what) {
  auto it = nodes.index.find(id);
  if (it == nodes.index.end()) {
    throw DataError(at(path, line) + ": dangling " + std::string(what) + " index '" + id + "'");
  }
  return it->second;
}

double numeric_field(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  double v;
  if (!io::parse_double(s, v)) throw DataError(at(path, line) + ": schema mismatch, not a number: '" + s + "'");
  if (!std::isfinite(v)) throw DataError(at(path, line) + ": non-finite value");
  return v;
}

void write_nodes(const std::filesystem::path& path, const std::vector<std::string>& ids, const CovariateTable& t) {
  io::CsvWriter w(path);
  std::vector<std::string> header{"id"};
  std::vector<std::string> emitted;
  for (Index c = 0; c < t.cols(); ++c) {
    const auto cc = static_cast<std::size_t>(c);
    if (t.categorical[cc]) {
      if (std::find(emitted.begin(), emitted.end(), t.groups[cc]) != emitted.end()) continue;
      emitted.push_back(t.groups[cc]);
      header.push_back(t.groups[cc]);
    } else {
      header.push_back(t.names[cc]);
    }
  }
  w.row(header);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<std::string> row{ids[i]};
    std::vector<std::string> done;
    for (Index c = 0; c < t.cols(); ++c) {
      const auto cc = static_cast<std::size_t>(c);
      const double v = t.values(static_cast<Index>(i), c);
      if (!t.categorical[cc]) {
        row.push_back(io::format_double(v));
        continue;
      }
      const std::string& g = t.groups[cc];
      if (std::find(done.begin(), done.end(), g) != done.end()) continue;
      std::string label;
      for (Index k : t.group_columns(g)) {
        if (t.values(static_cast<Index>(i), k) != 0.0) label = t.names[static_cast<std::size_t>(k)].substr(g.size() + 1);
      }
      if (label.empty()) throw DataError("cannot save categorical '" + g + "': row " + std::to_string(i) + " has no level");
      done.push_back(g);
      row.push_back(label);
    }
    w.row(row);
  }
}

}  // namespace

Dataset load_dataset(const DatasetPaths& paths) {
  NodeTable restaurants = read_nodes(paths.restaurants);
  NodeTable consumers = read_nodes(paths.consumers);
  const auto nr = static_cast<Index>(restaurants.ids.size());
  const auto nu = static_cast<Index>(consumers.ids.size());

  std::vector<Edge> edges;
  {
    const io::CsvTable t = io::read_csv(paths.edges);
    if (t.header.size() != 2 || t.header[0] != "consumer_id" || t.header[1] != "restaurant_id") {
      throw DataError(at(paths.edges, 1) + ": schema mismatch, expected header consumer_id,restaurant_id");
    }
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      edges.push_back({lookup(consumers, t.rows[i][0], paths.edges, t.line_numbers[i], "consumer"),
                       lookup(restaurants, t.rows[i][1], paths.edges, t.line_numbers[i], "restaurant")});
    }
  }

  Dataset d;
  d.graph = BipartiteGraph(nr, nu, std::move(edges));
  d.restaurant_ids = std::move(restaurants.ids);
  d.consumer_ids = std::move(consumers.ids);
  d.x_r = std::move(restaurants.covariates);
  d.x_u = std::move(consumers.covariates);

  {
    const io::CsvTable t = io::read_csv(paths.causes);
    if (t.header.size() < 2 || t.header[0] != "restaurant_id") {
      throw DataError(at(paths.causes, 1) + ": schema mismatch, expected restaurant_id followed by aspect columns");
    }
    if (t.rows.size() != static_cast<std::size_t>(nr)) {
      throw DataError(paths.causes.string() + ": schema mismatch, " + std::to_string(t.rows.size()) + " rows for " +
                      std::to_string(nr) + " restaurants");
    }
    d.aspect_names.assign(t.header.begin() + 1, t.header.end());
    d.causes = MatrixXd::Constant(nr, static_cast<Index>(d.aspect_names.size()), std::nan(""));
    std::vector<bool> seen(static_cast<std::size_t>(nr), false);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const Index r = lookup(restaurants, t.rows[i][0], paths.causes, t.line_numbers[i], "restaurant");
      if (seen[static_cast<std::size_t>(r)]) throw DataError(at(paths.causes, t.line_numbers[i]) + ": duplicate restaurant row");
      seen[static_cast<std::size_t>(r)] = true;
      for (std::size_t c = 1; c < t.header.size(); ++c) {
        d.causes(r, static_cast<Index>(c - 1)) = numeric_field(t.rows[i][c], paths.causes, t.line_numbers[i]);
      }
    }
  }
  {
    const io::CsvTable t = io::read_csv(paths.outcomes);
    if (t.header.size() != 2 || t.header[0] != "restaurant_id" || t.header[1] != "y") {
      throw DataError(at(paths.outcomes, 1) + ": schema mismatch, expected header restaurant_id,y");
    }
    if (t.rows.size() != static_cast<std::size_t>(nr)) {
      throw DataError(paths.outcomes.string() + ": schema mismatch, " + std::to_string(t.rows.size()) + " rows for " +
                      std::to_string(nr) + " restaurants");
    }
    d.outcome = VectorXd::Constant(nr, std::nan(""));
    std::vector<bool> seen(static_cast<std::size_t>(nr), false);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const Index r = lookup(restaurants, t.rows[i][0], paths.outcomes, t.line_numbers[i], "restaurant");
      if (seen[static_cast<std::size_t>(r)]) throw DataError(at(paths.outcomes, t.line_numbers[i]) + ": duplicate restaurant row");
      seen[static_cast<std::size_t>(r)] = true;
      d.outcome(r) = numeric_field(t.rows[i][1], paths.outcomes, t.line_numbers[i]);
    }
  }

  const ValidationReport report = validate(d);
  if (!report.ok) {
    for (const auto& issue : report.issues) {
      if (issue.severity == Severity::error) throw DataError("invalid dataset: " + issue.message);
    }
  }
  return d;
}

void save_dataset(const Dataset& d, const DatasetPaths& paths) {
  write_nodes(paths.restaurants, d.restaurant_ids, d.x_r);
  write_nodes(paths.consumers, d.consumer_ids, d.x_u);
  {
    io::CsvWriter w(paths.edges);
    w.row({"consumer_id", "restaurant_id"});
    for (const Edge& e : d.graph.edges()) {
      w.row({d.consumer_ids[static_cast<std::size_t>(e.consumer)], d.restaurant_ids[static_cast<std::size_t>(e.restaurant)]});
    }
  }
  {
    io::CsvWriter w(paths.causes);
    std::vector<std::string> header{"restaurant_id"};
    header.insert(header.end(), d.aspect_names.begin(), d.aspect_names.end());
    w.row(header);
    for (Index r = 0; r < d.causes.rows(); ++r) {
      std::vector<std::string> row{d.restaurant_ids[static_cast<std::size_t>(r)]};
      for (Index c = 0; c < d.causes.cols(); ++c) row.push_back(io::format_double(d.causes(r, c)));
      w.row(row);
    }
  }
  {
    io::CsvWriter w(paths.outcomes);
    w.row({"restaurant_id", "y"});
    for (Index r = 0; r < d.outcome.size(); ++r) {
      w.row({d.restaurant_ids[static_cast<std::size_t>(r)], io::format_double(d.outcome(r))});
    }
  }
}

// ---------------------------------------------------------------- transforms

Dataset hide_covariate(const Dataset& d, const std::string& column_name) {
  std::vector<Index> drop;
  if (!column_name.empty() && column_name.back() == '*') {
    const std::string prefix = column_name.substr(0, column_name.size() - 1);
    for (std::size_t c = 0; c < d.x_r.names.size(); ++c) {
      if (d.x_r.names[c].compare(0, prefix.size(), prefix) == 0) drop.push_back(static_cast<Index>(c));
    }
  } else {
    drop = d.x_r.group_columns(column_name);
    if (drop.empty()) {
      if (auto c = d.x_r.column_index(column_name)) drop.push_back(*c);
    }
  }
  if (drop.empty()) throw ConfigError("hide_covariate: unknown restaurant covariate '" + column_name + "'");
  Dataset out = d;
  out.x_r = d.x_r.drop_columns(drop);
  return out;
}

Dataset select_restaurants(const Dataset& d, std::span<const Index> rows) {
  std::vector<Index> remap(static_cast<std::size_t>(d.n_restaurants()), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Index r = rows[i];
    if (r < 0 || r >= d.n_restaurants()) throw DimensionError("select_restaurants: row index out of range");
    if (remap[static_cast<std::size_t>(r)] != -1) throw DataError("select_restaurants: duplicate row index");
    remap[static_cast<std::size_t>(r)] = static_cast<Index>(i);
  }
  std::vector<Edge> edges;
  for (const Edge& e : d.graph.edges()) {
    if (!d.graph.edge_in_range(e)) continue;
    const Index nr = remap[static_cast<std::size_t>(e.restaurant)];
    if (nr >= 0) edges.push_back({e.consumer, nr});
  }
  Dataset out;
  out.graph = BipartiteGraph(static_cast<Index>(rows.size()), d.n_consumers(), std::move(edges));
  for (Index r : rows) out.restaurant_ids.push_back(d.restaurant_ids[static_cast<std::size_t>(r)]);
  out.consumer_ids = d.consumer_ids;
  out.x_r = d.x_r.select_rows(rows);
  out.x_u = d.x_u;
  out.causes.resize(static_cast<Index>(rows.size()), d.causes.cols());
  out.outcome.resize(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.causes.row(static_cast<Index>(i)) = d.causes.row(rows[i]);
    out.outcome(static_cast<Index>(i)) = d.outcome(rows[i]);
  }
  out.aspect_names = d.aspect_names;
  return out;
}

std::pair<Dataset, Dataset> split_by_assignment(const Dataset& d, std::span<const Index> assignment,
                                                Index test_cluster) {
  if (static_cast<Index>(assignment.size()) != d.n_restaurants()) {
    throw DimensionError("split_by_assignment: assignment length " + std::to_string(assignment.size()) +
                         " != n_restaurants " + std::to_string(d.n_restaurants()));
  }
  std::vector<Index> train, test;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    (assignment[i] == test_cluster ? test : train).push_back(static_cast<Index>(i));
  }
  if (train.empty()) throw DataError("split_by_assignment: empty train partition");
  if (test.empty()) throw DataError("split_by_assignment: empty test partition");
  return {select_restaurants(d, train), select_restaurants(d, test)};
}

}  // namespace dmcee
