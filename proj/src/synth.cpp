#include "dmcee/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dmcee/error.hpp"
#include "dmcee/io.hpp"
#include "dmcee/json_util.hpp"
#include "dmcee/rng.hpp"

namespace dmcee {

void SynthConfig::check() const {
  if (n_restaurants <= 0 || n_consumers <= 0 || latent_dim <= 0 || n_aspects <= 0 || replicate_count <= 0) {
    throw ConfigError("synth: counts must be positive");
  }
  if (n_aspects % 2 != 0) throw ConfigError("synth: n_aspects must be even (positive/negative pairs)");
  if (!(0.0 < bernoulli_floor && bernoulli_floor < bernoulli_ceiling && bernoulli_ceiling < 1.0)) {
    throw ConfigError("synth: require 0 < floor < ceiling < 1");
  }
  if (density_target < 0.0 || density_target > 1.0) throw ConfigError("synth: density_target must lie in [0, 1]");
  if (!std::isfinite(confounder_scale)) throw ConfigError("synth: confounder_scale must be finite");
}

MatrixXd normalize_scores(const MatrixXd& raw, double floor, double ceiling) {
  if (raw.size() == 0) throw NumericError("normalize_scores: empty matrix");
  const double lo = raw.minCoeff();
  const double hi = raw.maxCoeff();
  if (!(hi > lo)) throw NumericError("normalize_scores: constant score matrix, normalization undefined");
  const double scale = (ceiling - floor) / (hi - lo);
  MatrixXd out = ((raw.array() - lo) * scale + floor).matrix();
  // Pin the extremes so round-off cannot leave [floor, ceiling].
  return out.cwiseMax(floor).cwiseMin(ceiling);
}

std::vector<std::string> default_aspect_names(Index n_aspects) {
  static const char* kAspects[] = {"food", "service", "price", "ambience", "anecdotal"};
  std::vector<std::string> names;
  const Index m = n_aspects / 2;
  for (Index a = 0; a < m; ++a) {
    const std::string base = (m == 5) ? kAspects[a] : "aspect" + std::to_string(a + 1);
    names.push_back(base + "_pos");
    names.push_back(base + "_neg");
  }
  return names;
}

ObservedCovariates observe_covariates(const SyntheticInstance& inst, std::uint64_t seed) {
  const Index d = inst.r_tilde.cols();
  if (d < 2) throw ConfigError("observe_covariates: latent dimension must be at least 2");
  const Index keep = d / 2;
  Rng rng(seed);
  auto choose = [&]() {
    std::vector<Index> idx(static_cast<std::size_t>(d));
    for (Index i = 0; i < d; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (Index i = 0; i < keep; ++i) {
      const auto j = i + static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(d - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(keep));
    std::sort(idx.begin(), idx.end());
    return idx;
  };
  ObservedCovariates out;
  out.columns_u = choose();
  out.columns_r = choose();
  for (Index c : out.columns_u) out.x_u.add_numeric("utilde_" + std::to_string(c), inst.u_tilde.col(c));
  for (Index c : out.columns_r) out.x_r.add_numeric("rtilde_" + std::to_string(c), inst.r_tilde.col(c));
  return out;
}

SyntheticInstance generate_replicate(const SynthConfig& cfg, Index replicate_index) {
  cfg.check();
  const Index nr = cfg.n_restaurants, nu = cfg.n_consumers, dim = cfg.latent_dim, na = cfg.n_aspects;
  Rng rng = Rng::stream(cfg.seed, streams::kSynthReplicate, static_cast<std::uint64_t>(replicate_index));

  SyntheticInstance inst;
  inst.replicate_index = replicate_index;
  inst.r_tilde.resize(nr, dim);
  for (Index r = 0; r < nr; ++r)
    for (Index k = 0; k < dim; ++k) inst.r_tilde(r, k) = rng.normal();
  inst.u_tilde.resize(nu, dim);
  for (Index u = 0; u < nu; ++u)
    for (Index k = 0; k < dim; ++k) inst.u_tilde(u, k) = static_cast<double>(rng.poisson(1.0));

  inst.s = normalize_scores(inst.u_tilde * inst.r_tilde.transpose(), cfg.bernoulli_floor, cfg.bernoulli_ceiling);
  const double edge_scale = cfg.density_target > 0.0 ? cfg.density_target / inst.s.mean() : 1.0;

  std::vector<Edge> edges;
  for (Index u = 0; u < nu; ++u) {
    for (Index r = 0; r < nr; ++r) {
      const double p = std::min(1.0, inst.s(u, r) * edge_scale);
      if (rng.bernoulli(p)) edges.push_back({u, r});
    }
  }
  BipartiteGraph graph(nr, nu, std::move(edges));

  MatrixXd causes = MatrixXd::Zero(nr, na);
  for (Index j = 0; j < na; ++j) {
    for (Index r = 0; r < nr; ++r) {
      double total = 0.0;
      if (cfg.aggregation == CauseAggregation::reviewers_only) {
        for (Index u : graph.restaurant_neighbors(r)) total += rng.bernoulli(inst.s(u, r)) ? 1.0 : -1.0;
      } else {
        for (Index u = 0; u < nu; ++u) {
          const bool positive = rng.bernoulli(inst.s(u, r));
          total += (positive && graph.has_edge(u, r)) ? 1.0 : -1.0;
        }
      }
      causes(r, j) = total;
    }
  }

  MatrixXd gt_u = MatrixXd::Zero(nr, dim);
  for (Index r = 0; r < nr; ++r) {
    for (Index u : graph.restaurant_neighbors(r)) gt_u.row(r) += inst.u_tilde.row(u);
  }
  inst.z.resize(nr, 2 * dim);
  inst.z << inst.r_tilde, gt_u;

  inst.w_a.resize(na);
  for (Index j = 0; j < na; ++j) inst.w_a(j) = static_cast<double>(rng.poisson(2.0 * static_cast<double>(j + 1)));
  inst.w_z.resize(2 * dim);
  for (Index k = 0; k < 2 * dim; ++k) inst.w_z(k) = cfg.confounder_scale * static_cast<double>(rng.poisson(10.0));

  Dataset& d = inst.dataset;
  d.graph = std::move(graph);
  for (Index r = 0; r < nr; ++r) d.restaurant_ids.push_back("r" + std::to_string(r));
  for (Index u = 0; u < nu; ++u) d.consumer_ids.push_back("u" + std::to_string(u));
  d.causes = std::move(causes);
  d.outcome = inst.z * inst.w_z + d.causes * inst.w_a;
  d.aspect_names = default_aspect_names(na);

  ObservedCovariates obs = observe_covariates(
      inst, Rng::stream(cfg.seed, streams::kObserveCovariates, static_cast<std::uint64_t>(replicate_index)).next());
  d.x_u = std::move(obs.x_u);
  d.x_r = std::move(obs.x_r);
  inst.observed_u = std::move(obs.columns_u);
  inst.observed_r = std::move(obs.columns_r);
  return inst;
}

VectorXd true_effects(const SyntheticInstance& instance) { return instance.w_a; }

SyntheticInstance make_standin(const SynthConfig& cfg, Index replicate_index) {
  if (cfg.latent_dim < 8) throw ConfigError("make_standin: latent_dim must be at least 8");
  SyntheticInstance inst = generate_replicate(cfg, replicate_index);
  const MatrixXd& rt = inst.r_tilde;
  const Index nr = rt.rows();
  auto argmax3 = [&](Index r, Index first) {
    Index best = first;
    for (Index k = first + 1; k < first + 3; ++k)
      if (rt(r, k) > rt(r, best)) best = k;
    return best - first;
  };
  static const char* kLocations[] = {"downtown", "suburb", "strip"};
  static const char* kCategories[] = {"bar", "fast_food", "other"};
  std::vector<std::string> location, category;
  VectorXd rating(nr), price(nr);
  for (Index r = 0; r < nr; ++r) {
    location.emplace_back(kLocations[argmax3(r, 0)]);
    category.emplace_back(kCategories[argmax3(r, 3)]);
    rating(r) = std::clamp(std::round(2.0 * (3.0 + rt(r, 6))) / 2.0, 1.0, 5.0);
    price(r) = std::clamp(std::round(2.5 + rt(r, 7)), 1.0, 4.0);
  }
  CovariateTable x_r;
  x_r.add_categorical("location", location);
  x_r.add_categorical("category", category);
  x_r.add_numeric("rating", rating);
  x_r.add_numeric("price_range", price);
  inst.dataset.x_r = std::move(x_r);
  inst.observed_r = {0, 1, 2, 3, 4, 5, 6, 7};
  return inst;
}

void save_instance(const SyntheticInstance& inst, const SynthConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(inst.dataset, DatasetPaths::in_directory(dir));
  json gt;
  gt["format"] = "dmcee-ground-truth";
  gt["version"] = 1;
  gt["replicate_index"] = inst.replicate_index;
  gt["config"] = {{"n_restaurants", cfg.n_restaurants},
                  {"n_consumers", cfg.n_consumers},
                  {"latent_dim", cfg.latent_dim},
                  {"n_aspects", cfg.n_aspects},
                  {"bernoulli_floor", cfg.bernoulli_floor},
                  {"bernoulli_ceiling", cfg.bernoulli_ceiling},
                  {"seed", cfg.seed},
                  {"aggregation", cfg.aggregation == CauseAggregation::literal ? "literal" : "reviewers_only"},
                  {"density_target", cfg.density_target},
                  {"confounder_scale", cfg.confounder_scale}};
  gt["w_a"] = vector_to_json(inst.w_a);
  gt["w_z"] = vector_to_json(inst.w_z);
  gt["z"] = matrix_to_json(inst.z);
  gt["r_tilde"] = matrix_to_json(inst.r_tilde);
  gt["observed_r_columns"] = inst.observed_r;
  gt["observed_u_columns"] = inst.observed_u;
  io::write_text(dir / "ground_truth.json", dump_json(gt));
}

SyntheticInstance load_instance(const std::filesystem::path& dir) {
  SyntheticInstance inst;
  inst.dataset = load_dataset(DatasetPaths::in_directory(dir));
  const json gt = json::parse(io::read_text(dir / "ground_truth.json"));
  if (gt.value("format", "") != "dmcee-ground-truth") throw DataError("ground_truth.json: unknown format");
  inst.replicate_index = gt.at("replicate_index").get<Index>();
  inst.w_a = vector_from_json(gt.at("w_a"));
  inst.w_z = vector_from_json(gt.at("w_z"));
  inst.z = matrix_from_json(gt.at("z"));
  inst.r_tilde = matrix_from_json(gt.at("r_tilde"));
  inst.observed_r = gt.at("observed_r_columns").get<std::vector<Index>>();
  inst.observed_u = gt.at("observed_u_columns").get<std::vector<Index>>();
  if (inst.z.rows() != inst.dataset.n_restaurants() || inst.w_a.size() != inst.dataset.n_causes()) {
    throw DataError("ground_truth.json: shapes do not match dataset");
  }
  return inst;
}

}  // namespace dmcee
