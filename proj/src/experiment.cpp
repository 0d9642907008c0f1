#include "dmcee/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>

#include "dmcee/error.hpp"
#include "dmcee/io.hpp"
#include "dmcee/rng.hpp"

namespace dmcee {

namespace fs = std::filesystem;

const std::vector<std::string>& all_estimators() {
  static const std::vector<std::string> names{"lr", "lr_con", "gcn", "deconfounder", "d_out", "d_cau", "dmcee"};
  return names;
}

ExperimentConfig default_experiment_config(DataMode mode) {
  ExperimentConfig c;
  c.mode = mode;
  if (mode != DataMode::synth) c.train = TrainConfig::real_defaults();
  c.estimators = all_estimators();
  return c;
}

void ExperimentConfig::check() const {
  if (experiment.empty() || experiment.find('/') != std::string::npos || experiment == "." || experiment == "..") {
    throw ConfigError("experiment name must be a non-empty single path component");
  }
  synth.check();
  train.check();
  dose.boosting.check();
  if (estimators.empty()) throw ConfigError("at least one estimator is required");
  for (const auto& e : estimators) {
    if (std::find(all_estimators().begin(), all_estimators().end(), e) == all_estimators().end()) {
      throw ConfigError("unknown estimator '" + e + "'");
    }
  }
  if (eval.k < 2) throw ConfigError("eval.k must be at least 2");
  if (!(eval.alpha > 0.0 && eval.alpha <= 1.0)) throw ConfigError("eval.alpha must lie in (0, 1]");
  if (eval.deconfounder_k < 0) throw ConfigError("eval.deconfounder_k must be non-negative");
  if (dose.grid_points < 2) throw ConfigError("dose.grid_points must be at least 2");
  if (sweep.alpha.empty() || sweep.beta.empty()) throw ConfigError("sweep grids must be non-empty");
  for (double v : sweep.alpha)
    if (!(v >= 0.0)) throw ConfigError("sweep.alpha values must be non-negative");
  for (double v : sweep.beta)
    if (!(v >= 0.0)) throw ConfigError("sweep.beta values must be non-negative");
  if (mode == DataMode::real && input.empty()) throw ConfigError("mode real needs io.input");
}

namespace {

const char* mode_name(DataMode m) {
  switch (m) {
    case DataMode::synth: return "synth";
    case DataMode::real: return "real";
    case DataMode::standin: return "standin";
  }
  return "synth";
}

DataMode parse_mode(const std::string& s) {
  if (s == "synth") return DataMode::synth;
  if (s == "real") return DataMode::real;
  if (s == "standin") return DataMode::standin;
  throw ConfigError("mode must be synth, real or standin, got '" + s + "'");
}

template <typename Fn>
void for_keys(const json& j, const std::string& section, Fn&& fn) {
  if (!j.is_object()) throw ConfigError(section + " must be an object");
  for (const auto& [key, v] : j.items()) {
    if (!fn(key, v)) throw ConfigError("unknown key '" + key + "' in " + section);
  }
}

SynthConfig synth_from_json(const json& j, SynthConfig c) {
  for_keys(j, "synth", [&](const std::string& k, const json& v) {
    if (k == "n_restaurants") c.n_restaurants = v.get<Index>();
    else if (k == "n_consumers") c.n_consumers = v.get<Index>();
    else if (k == "latent_dim") c.latent_dim = v.get<Index>();
    else if (k == "n_aspects") c.n_aspects = v.get<Index>();
    else if (k == "bernoulli_floor") c.bernoulli_floor = v.get<double>();
    else if (k == "bernoulli_ceiling") c.bernoulli_ceiling = v.get<double>();
    else if (k == "replicates") c.replicate_count = v.get<Index>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "density_target") c.density_target = v.get<double>();
    else if (k == "confounder_scale") c.confounder_scale = v.get<double>();
    else if (k == "aggregation") {
      const auto s = v.get<std::string>();
      if (s == "reviewers_only") c.aggregation = CauseAggregation::reviewers_only;
      else if (s == "literal") c.aggregation = CauseAggregation::literal;
      else throw ConfigError("synth.aggregation must be reviewers_only or literal");
    } else return false;
    return true;
  });
  return c;
}

json synth_to_json(const SynthConfig& c) {
  return {{"n_restaurants", c.n_restaurants},
          {"n_consumers", c.n_consumers},
          {"latent_dim", c.latent_dim},
          {"n_aspects", c.n_aspects},
          {"bernoulli_floor", c.bernoulli_floor},
          {"bernoulli_ceiling", c.bernoulli_ceiling},
          {"replicates", c.replicate_count},
          {"seed", c.seed},
          {"aggregation", c.aggregation == CauseAggregation::literal ? "literal" : "reviewers_only"},
          {"density_target", c.density_target},
          {"confounder_scale", c.confounder_scale}};
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  try {
    ExperimentConfig c = default_experiment_config(parse_mode(j.value("mode", std::string("synth"))));
    for_keys(j, "config", [&](const std::string& k, const json& v) {
      if (k == "version") {
        if (v.get<int>() != 1) throw ConfigError("unsupported config version " + v.dump());
      } else if (k == "mode") {
      } else if (k == "experiment") c.experiment = v.get<std::string>();
      else if (k == "synth") c.synth = synth_from_json(v, c.synth);
      else if (k == "train") c.train = train_config_from_json(v, c.train);
      else if (k == "estimators") c.estimators = v.get<std::vector<std::string>>();
      else if (k == "eval") {
        for_keys(v, "eval", [&](const std::string& ek, const json& ev) {
          if (ek == "k") c.eval.k = ev.get<Index>();
          else if (ek == "align") c.eval.align = ev.get<bool>();
          else if (ek == "alpha") c.eval.alpha = ev.get<double>();
          else if (ek == "deconfounder_k") c.eval.deconfounder_k = ev.get<Index>();
          else return false;
          return true;
        });
      } else if (k == "dose") {
        for_keys(v, "dose", [&](const std::string& dk, const json& dv) {
          if (dk == "rounds") c.dose.boosting.rounds = dv.get<int>();
          else if (dk == "max_depth") c.dose.boosting.max_depth = dv.get<int>();
          else if (dk == "shrinkage") c.dose.boosting.shrinkage = dv.get<double>();
          else if (dk == "min_leaf") c.dose.boosting.min_leaf = dv.get<Index>();
          else if (dk == "grid_points") c.dose.grid_points = dv.get<Index>();
          else if (dk == "grouping") {
            for_keys(dv, "dose.grouping", [&](const std::string& gk, const json& gv) {
              if (gk == "covariate") c.dose.grouping.covariate = gv.get<std::string>();
              else if (gk == "labels") c.dose.grouping.labels = gv.get<std::map<std::string, std::string>>();
              else if (gk == "other") c.dose.grouping.other_label = gv.get<std::string>();
              else return false;
              return true;
            });
          } else return false;
          return true;
        });
      } else if (k == "ood") {
        for_keys(v, "ood", [&](const std::string& ok, const json& ov) {
          if (ok != "hide") return false;
          c.ood_hide = ov.get<std::vector<std::string>>();
          return true;
        });
      } else if (k == "sweep") {
        for_keys(v, "sweep", [&](const std::string& sk, const json& sv) {
          if (sk == "alpha") c.sweep.alpha = sv.get<std::vector<double>>();
          else if (sk == "beta") c.sweep.beta = sv.get<std::vector<double>>();
          else if (sk == "hide") c.sweep.hide = sv.get<std::string>();
          else return false;
          return true;
        });
      } else if (k == "io") {
        for_keys(v, "io", [&](const std::string& ik, const json& iv) {
          if (ik == "input") c.input = iv.get<std::string>();
          else if (ik == "output") c.output = iv.get<std::string>();
          else return false;
          return true;
        });
      } else return false;
      return true;
    });
    c.check();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return experiment_config_from_json(j);
}

json to_json(const ExperimentConfig& c) {
  json grouping = {{"covariate", c.dose.grouping.covariate},
                   {"labels", c.dose.grouping.labels},
                   {"other", c.dose.grouping.other_label}};
  return {{"version", 1},
          {"experiment", c.experiment},
          {"mode", mode_name(c.mode)},
          {"synth", synth_to_json(c.synth)},
          {"train", to_json(c.train)},
          {"estimators", c.estimators},
          {"eval",
           {{"k", c.eval.k}, {"align", c.eval.align}, {"alpha", c.eval.alpha}, {"deconfounder_k", c.eval.deconfounder_k}}},
          {"dose",
           {{"rounds", c.dose.boosting.rounds},
            {"max_depth", c.dose.boosting.max_depth},
            {"shrinkage", c.dose.boosting.shrinkage},
            {"min_leaf", c.dose.boosting.min_leaf},
            {"grid_points", c.dose.grid_points},
            {"grouping", grouping}}},
          {"ood", {{"hide", c.ood_hide}}},
          {"sweep", {{"alpha", c.sweep.alpha}, {"beta", c.sweep.beta}, {"hide", c.sweep.hide}}},
          {"io", {{"input", c.input.string()}}}};
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t purpose, std::uint64_t index) {
  return Rng::stream(base, purpose, index).next();
}

unsigned worker_count() {
  if (const char* env = std::getenv("DMCEE_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1 || v > 1024) {
      throw ConfigError("DMCEE_WORKERS must be an integer between 1 and 1024");
    }
    return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

// Runs fn(0..n-1) on the worker pool. The exception of the lowest failing
// index is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), std::max<std::size_t>(n, 1)));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

MatrixXd select_rows(const MatrixXd& m, const std::vector<Index>& rows) {
  MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = m.row(rows[k]);
  return out;
}

MatrixXd hstack(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  if (b.cols() > 0) out.rightCols(b.cols()) = b;
  return out;
}

VectorXd ols_predict(const OlsResult& fit, const MatrixXd& design) {
  return (design * fit.coef.tail(fit.coef.size() - 1)).array() + fit.coef(0);
}

MatrixXd columns_by_name(const CovariateTable& table, const std::vector<std::string>& names) {
  MatrixXd out(table.rows(), static_cast<Index>(names.size()));
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto c = table.column_index(names[k]);
    if (!c) throw DataError("test split lacks covariate column '" + names[k] + "'");
    out.col(static_cast<Index>(k)) = table.values.col(*c);
  }
  return out;
}

SplitInfo split_from(const std::vector<Index>& assignment, Index k, Index test_cluster) {
  SplitInfo s;
  s.k = k;
  s.test_cluster = test_cluster;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    (assignment[i] == test_cluster ? s.test_rows : s.train_rows).push_back(static_cast<Index>(i));
  }
  if (s.train_rows.empty()) throw DataError("split: empty train partition");
  if (s.test_rows.empty()) throw DataError("split: empty test partition");
  return s;
}

}  // namespace

SplitInfo random_cluster_split(const Dataset& d, Index k, std::uint64_t seed) {
  const KMeansResult km = kmeans(d.x_r.values, k, seed);
  std::vector<Index> non_empty;
  for (Index c = 0; c < k; ++c) {
    if (std::find(km.assignment.begin(), km.assignment.end(), c) != km.assignment.end()) non_empty.push_back(c);
  }
  Rng rng = Rng::stream(seed, streams::kSplit, 0);
  const Index test = non_empty[static_cast<std::size_t>(rng.uniform_index(non_empty.size()))];
  return split_from(km.assignment, k, test);
}

SplitInfo farthest_cluster_split(const Dataset& d, Index k, std::uint64_t seed) {
  const OodSplitPlan plan = ood_split(d.x_r.values, k, seed);
  SplitInfo s = split_from(plan.assignment, k, plan.test_cluster);
  s.dist = plan.dist;
  return s;
}

MethodOutcome run_method(const std::string& method, const Dataset& full, const SplitInfo& split,
                         const ExperimentConfig& cfg, std::uint64_t train_seed, std::uint64_t baseline_seed) {
  const Dataset train = select_restaurants(full, split.train_rows);
  const Dataset test = select_restaurants(full, split.test_rows);
  MethodOutcome out;
  TrainConfig tc = cfg.train;
  tc.seed = train_seed;
  const VectorXd& y = train.outcome;
  if (method == "lr") {
    out.estimate = lr_effects(train);
    out.test_prediction = ols_predict(ols_fit(train.causes, y), test.causes);
  } else if (method == "lr_con") {
    out.estimate = lr_con_effects(train);
    const CovariateTable controls = control_covariates(train.x_r);
    const OlsResult fit = ols_fit(hstack(train.causes, controls.values), y);
    out.test_prediction = ols_predict(fit, hstack(test.causes, columns_by_name(test.x_r, controls.names)));
  } else if (method == "deconfounder") {
    DeconfounderDiagnostics diag;
    out.estimate = deconfounder_effects(train, cfg.eval.deconfounder_k, baseline_seed, &diag);
    out.diagnostic = diag.heldout_log_likelihood;
    if (cfg.eval.deconfounder_k == 0) {
      out.test_prediction = ols_predict(ols_fit(train.causes, y), test.causes);
    } else {
      const PpcaModel model = ppca_fit(train.causes, cfg.eval.deconfounder_k, baseline_seed);
      const OlsResult fit = ols_fit(hstack(train.causes, model.z_sample), y);
      const MatrixXd z_test = ppca_posterior_sample(model, test.causes, derive_seed(baseline_seed, streams::kBaselines, 2));
      out.test_prediction = ols_predict(fit, hstack(test.causes, z_test));
      out.train_surrogate = model.z_sample;
    }
  } else if (method == "gcn") {
    FittedModel fm;
    out.estimate = gcn_effects(train, tc, &fm);
    const MatrixXd e_train = encode(train, fm.params).out_r;
    const MatrixXd e_test = select_rows(encode(full, fm.params).out_r, split.test_rows);
    out.test_prediction = ols_predict(ols_fit(hstack(train.causes, e_train), y), hstack(test.causes, e_test));
    out.train_surrogate = e_train;
    out.model = std::move(fm);
  } else if (method == "d_cau" || method == "d_out" || method == "dmcee") {
    const Variant v = method == "d_cau" ? Variant::d_cau : method == "d_out" ? Variant::d_out : Variant::dmcee;
    FittedModel fm;
    out.estimate = variant_effects(train, tc, v, &fm);
    const SurrogateConfounder g_train = fitted_surrogate(train, fm.params);
    const SurrogateConfounder g_test{select_rows(fitted_surrogate(full, fm.params).gamma_r, split.test_rows)};
    if (v == Variant::d_cau) {
      const OlsResult fit = ols_fit(hstack(train.causes, g_train.gamma_r), y);
      out.test_prediction = ols_predict(fit, hstack(test.causes, g_test.gamma_r));
    } else {
      out.test_prediction = predict_outcomes(g_test, test.causes, fm.params.adjustment);
    }
    out.train_surrogate = g_train.gamma_r;
    out.model = std::move(fm);
  } else {
    throw ConfigError("unknown estimator '" + method + "'");
  }
  return out;
}

namespace {

struct Replica {
  Dataset dataset;
  std::optional<VectorXd> w_a;
  std::optional<MatrixXd> z;
};

Replica make_replica(const ExperimentConfig& cfg, Index r) {
  if (cfg.mode == DataMode::real) return {load_dataset(DatasetPaths::in_directory(cfg.input)), std::nullopt, std::nullopt};
  SyntheticInstance inst = cfg.mode == DataMode::standin ? make_standin(cfg.synth, r) : generate_replicate(cfg.synth, r);
  return {std::move(inst.dataset), std::move(inst.w_a), std::move(inst.z)};
}

Index replicate_total(const ExperimentConfig& cfg) { return cfg.mode == DataMode::real ? 1 : cfg.synth.replicate_count; }

}  // namespace

Dataset load_experiment_data(const ExperimentConfig& cfg) { return make_replica(cfg, 0).dataset; }

RunResult run_synthetic(const ExperimentConfig& cfg) {
  cfg.check();
  const Index n = replicate_total(cfg);
  std::vector<Replica> replicas(static_cast<std::size_t>(n));
  std::vector<SplitInfo> splits(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t r) {
    replicas[r] = make_replica(cfg, static_cast<Index>(r));
    splits[r] = random_cluster_split(replicas[r].dataset, cfg.eval.k,
                                     derive_seed(cfg.synth.seed, streams::kSplit, static_cast<std::uint64_t>(r)));
  });

  const std::size_t m = cfg.estimators.size();
  std::vector<MethodOutcome> outcomes(static_cast<std::size_t>(n) * m);
  parallel_for(outcomes.size(), [&](std::size_t job) {
    const std::size_t r = job / m, e = job % m;
    outcomes[job] = run_method(cfg.estimators[e], replicas[r].dataset, splits[r], cfg,
                               derive_seed(cfg.train.seed, streams::kTraining, r),
                               derive_seed(cfg.train.seed, streams::kBaselines, r));
  });

  RunResult result;
  std::vector<EvalReport> flat;
  for (Index r = 0; r < n; ++r) {
    const auto ru = static_cast<std::size_t>(r);
    ReplicateResult rr;
    rr.replicate = r;
    rr.split = splits[ru];
    rr.methods = cfg.estimators;
    const VectorXd y_test = select_rows(replicas[ru].dataset.outcome, rr.split.test_rows);
    const Index width = replicas[ru].dataset.n_causes();
    const VectorXd truth =
        replicas[ru].w_a ? *replicas[ru].w_a : VectorXd::Constant(width, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t e = 0; e < m; ++e) {
      MethodOutcome& o = outcomes[ru * m + e];
      EvalReport rep = make_report(cfg.estimators[e], o.estimate.tau_hat, truth);
      if (o.train_surrogate && replicas[ru].z) {
        rep.hc_discrepancy = hc_discrepancy(*o.train_surrogate, select_rows(*replicas[ru].z, rr.split.train_rows),
                                            cfg.eval.align);
      }
      const RegressionMetrics rm = regression_metrics(y_test, o.test_prediction);
      rep.mae = rm.mae;
      rep.mse = rm.mse;
      rr.reports.push_back(rep);
      flat.push_back(rep);
      rr.outcomes.push_back(std::move(o));
    }
    result.replicates.push_back(std::move(rr));
  }
  result.aggregate = aggregate_replicates(flat);
  return result;
}

std::vector<OodRow> run_ood(const Dataset& d, const ExperimentConfig& cfg) {
  cfg.check();
  const std::vector<std::string> hide = cfg.ood_hide.empty() ? d.x_r.group_names() : cfg.ood_hide;
  if (hide.empty()) throw ConfigError("ood: no restaurant covariates to hide");
  const std::size_t h = hide.size(), m = cfg.estimators.size();
  std::vector<OodRow> rows(h);
  std::vector<Dataset> hidden(h);
  parallel_for(h, [&](std::size_t i) {
    hidden[i] = hide_covariate(d, hide[i]);
    if (hidden[i].x_r.cols() == 0) throw DataError("ood: hiding '" + hide[i] + "' leaves no restaurant covariates");
    rows[i].covariate = hide[i];
    rows[i].split = farthest_cluster_split(hidden[i], cfg.eval.k, derive_seed(cfg.synth.seed, streams::kSplit, 1000 + i));
    rows[i].methods = cfg.estimators;
    rows[i].metrics.resize(m);
  });
  parallel_for(h * m, [&](std::size_t job) {
    const std::size_t i = job / m, e = job % m;
    const MethodOutcome o = run_method(cfg.estimators[e], hidden[i], rows[i].split, cfg,
                                       derive_seed(cfg.train.seed, streams::kTraining, 1000 + i),
                                       derive_seed(cfg.train.seed, streams::kBaselines, 1000 + i));
    rows[i].metrics[e] = regression_metrics(select_rows(hidden[i].outcome, rows[i].split.test_rows), o.test_prediction);
  });
  return rows;
}

DoseResult run_dose(const Dataset& d, const ExperimentConfig& cfg) {
  cfg.check();
  DoseResult res;
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.train.seed, streams::kDose, 0);
  FittedModel fm;
  res.estimate = variant_effects(d, tc, Variant::dmcee, &fm);
  res.significant = significant_aspects(res.estimate, cfg.eval.alpha);
  const MatrixXd gamma = fitted_surrogate(d, fm.params).gamma_r;
  res.groups = group_restaurants(d, cfg.dose.grouping);
  std::vector<std::vector<DoseCurve>> per_group(res.groups.size());
  std::vector<std::vector<std::string>> skipped(res.groups.size());
  parallel_for(res.groups.size(), [&](std::size_t g) {
    const RestaurantGroup& grp = res.groups[g];
    if (grp.rows.size() < 2) {
      skipped[g].push_back(grp.label + ": fewer than two restaurants");
      return;
    }
    const MatrixXd a = select_rows(d.causes, grp.rows);
    const MatrixXd gm = select_rows(gamma, grp.rows);
    VectorXd y(static_cast<Index>(grp.rows.size()));
    for (std::size_t k = 0; k < grp.rows.size(); ++k) y(static_cast<Index>(k)) = d.outcome(grp.rows[k]);
    const ResponseModel model =
        fit_response(a, gm, y, cfg.dose.boosting, derive_seed(cfg.train.seed, streams::kDose, 1 + g));
    for (Index j : res.significant) {
      const std::string name =
          static_cast<std::size_t>(j) < d.aspect_names.size() ? d.aspect_names[static_cast<std::size_t>(j)] : std::to_string(j);
      if (!(a.col(j).maxCoeff() > a.col(j).minCoeff())) {
        skipped[g].push_back(grp.label + "/" + name + ": constant within group");
        continue;
      }
      DoseCurve c = dose_response(model, a, gm, j, level_grid(a.col(j), cfg.dose.grid_points));
      c.group = grp.label;
      c.aspect_name = name;
      per_group[g].push_back(std::move(c));
    }
  });
  for (std::size_t g = 0; g < res.groups.size(); ++g) {
    for (auto& c : per_group[g]) res.curves.push_back(std::move(c));
    for (auto& s : skipped[g]) res.skipped.push_back(std::move(s));
  }
  return res;
}

std::vector<SweepCell> run_sweep(const Dataset& d, const ExperimentConfig& cfg) {
  cfg.check();
  const Dataset hidden = cfg.sweep.hide.empty() ? d : hide_covariate(d, cfg.sweep.hide);
  const SplitInfo split = farthest_cluster_split(hidden, cfg.eval.k, derive_seed(cfg.synth.seed, streams::kSplit, 2000));
  const VectorXd y_test = select_rows(hidden.outcome, split.test_rows);
  std::vector<SweepCell> cells;
  for (double a : cfg.sweep.alpha)
    for (double b : cfg.sweep.beta) cells.push_back({a, b, {}});
  parallel_for(cells.size(), [&](std::size_t i) {
    ExperimentConfig cell = cfg;
    cell.train.weights.alpha = cells[i].alpha;
    cell.train.weights.beta = cells[i].beta;
    const MethodOutcome o = run_method("dmcee", hidden, split, cell, derive_seed(cfg.train.seed, streams::kTraining, 2000),
                                       derive_seed(cfg.train.seed, streams::kBaselines, 2000));
    cells[i].metrics = regression_metrics(y_test, o.test_prediction);
  });
  return cells;
}

namespace {

std::string fmt(double v) { return std::isfinite(v) ? io::format_double(v) : "NA"; }

// Tracks every file a command writes, relative to the experiment directory.
class OutputLog {
 public:
  explicit OutputLog(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

  fs::path file(const fs::path& rel) {
    const fs::path p = root_ / rel;
    fs::create_directories(p.parent_path());
    files_.push_back(rel);
    return p;
  }

  void text(const fs::path& rel, const std::string& content) { io::write_text(file(rel), content); }

  void manifest(const std::string& command, const ExperimentConfig& cfg, json extra) {
    json m;
    m["format"] = "dmcee-manifest";
    m["command"] = command;
    m["experiment"] = cfg.experiment;
    m["config"] = to_json(cfg);
    m["seeds"] = {{"synth", cfg.synth.seed}, {"train", cfg.train.seed}};
    m["versions"] = {{"dmcee", kVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                     {"compiler", __VERSION__}};
    json inputs = json::array();
    if (cfg.mode == DataMode::real) {
      const DatasetPaths p = DatasetPaths::in_directory(cfg.input);
      for (const fs::path& f : {p.restaurants, p.consumers, p.edges, p.causes, p.outcomes}) {
        inputs.push_back({{"path", f.string()}, {"fnv1a64", io::file_digest(f)}});
      }
    }
    m["inputs"] = inputs;
    std::vector<fs::path> sorted = files_;
    std::sort(sorted.begin(), sorted.end());
    json outputs = json::array();
    for (const auto& f : sorted) outputs.push_back({{"path", f.generic_string()}, {"fnv1a64", io::file_digest(root_ / f)}});
    m["outputs"] = outputs;
    for (auto& [k, v] : extra.items()) m[k] = v;
    io::write_text(root_ / ("manifest_" + command + ".json"), dump_json(m));
  }

 private:
  fs::path root_;
  std::vector<fs::path> files_;
};

std::string replicate_dir(Index r) {
  std::string s = std::to_string(r);
  return "replicate_" + std::string(s.size() < 2 ? 2 - s.size() : 0, '0') + s;
}

json split_json(const SplitInfo& s) {
  json j = {{"k", s.k},
            {"test_cluster", s.test_cluster},
            {"n_train", s.train_rows.size()},
            {"n_test", s.test_rows.size()},
            {"test_rows", s.test_rows}};
  if (s.dist.size()) j["dist"] = vector_to_json(s.dist);
  return j;
}

}  // namespace

void cmd_synth(const ExperimentConfig& cfg) {
  cfg.check();
  if (cfg.mode == DataMode::real) throw ConfigError("synth: mode real has nothing to generate");
  OutputLog log(cfg.experiment_dir());
  const Index n = cfg.synth.replicate_count;
  std::vector<SyntheticInstance> inst(static_cast<std::size_t>(n));
  parallel_for(inst.size(), [&](std::size_t r) {
    inst[r] = cfg.mode == DataMode::standin ? make_standin(cfg.synth, static_cast<Index>(r))
                                            : generate_replicate(cfg.synth, static_cast<Index>(r));
  });
  for (Index r = 0; r < n; ++r) {
    const fs::path rel = fs::path("data") / replicate_dir(r);
    fs::create_directories(cfg.experiment_dir() / rel);
    save_instance(inst[static_cast<std::size_t>(r)], cfg.synth, cfg.experiment_dir() / rel);
    for (const char* f : {"restaurants.csv", "consumers.csv", "edges.csv", "causes.csv", "outcomes.csv", "ground_truth.json"}) {
      log.file(rel / f);
    }
  }
  log.manifest("synth", cfg, {{"replicates", n}});
}

void cmd_run(const ExperimentConfig& cfg) {
  const RunResult res = run_synthetic(cfg);
  OutputLog log(cfg.experiment_dir());
  std::vector<std::string> aspects;
  json replicate_summaries = json::array();
  for (const auto& rr : res.replicates) {
    const fs::path dir = replicate_dir(rr.replicate);
    std::vector<EffectEstimate> estimates;
    json report = {{"replicate", rr.replicate}, {"split", split_json(rr.split)}};
    json reports = json::array();
    json diagnostics = json::object();
    for (std::size_t e = 0; e < rr.methods.size(); ++e) {
      const MethodOutcome& o = rr.outcomes[e];
      estimates.push_back(o.estimate);
      reports.push_back(to_json(rr.reports[e]));
      if (o.model) {
        write_training_curve(o.model->history, log.file(dir / (rr.methods[e] + "_training_curve.csv")));
        save_checkpoint(*o.model, log.file(dir / (rr.methods[e] + "_checkpoint.json")));
      }
      if (rr.methods[e] == "deconfounder") diagnostics["deconfounder_heldout_loglik"] = number_or_null(o.diagnostic);
      if (o.train_surrogate && (rr.methods[e] == "dmcee" || rr.methods[e] == "d_out" || rr.methods[e] == "d_cau")) {
        const Replica rep = make_replica(cfg, rr.replicate);
        const Dataset train = select_restaurants(rep.dataset, rr.split.train_rows);
        const PositivityProbe probe = positivity_probe({*o.train_surrogate}, train.causes);
        diagnostics[rr.methods[e] + "_positivity_min_variance"] = number_or_null(probe.min_over_aspects);
        if (aspects.empty()) aspects = rep.dataset.aspect_names;
      }
    }
    if (aspects.empty()) aspects = make_replica(cfg, rr.replicate).dataset.aspect_names;
    report["reports"] = reports;
    report["diagnostics"] = diagnostics;
    write_effects_csv(estimates, aspects, log.file(dir / "effects.csv"));
    write_error_table(rr.reports, aspects, log.file(dir / "errors.csv"));
    log.text(dir / "report.json", dump_json(report));
  }
  write_aggregate_table(res.aggregate, aspects, log.file("aggregate/table.csv"));
  log.text("aggregate/aggregate.json", dump_json(to_json(res.aggregate)));
  {
    io::CsvWriter w(log.file("aggregate/replicate_errors.csv"));
    w.row({"replicate", "method", "mean_abs_error", "hc_discrepancy", "mae", "mse"});
    for (const auto& rr : res.replicates) {
      for (const auto& r : rr.reports) {
        w.row({std::to_string(rr.replicate), r.method, fmt(r.mean_abs_error), fmt(r.hc_discrepancy), fmt(r.mae),
               fmt(r.mse)});
      }
    }
  }
  log.manifest("run", cfg, {{"replicates", res.replicates.size()}});
}

void cmd_ood(const ExperimentConfig& cfg) {
  const Dataset d = load_experiment_data(cfg);
  const std::vector<OodRow> rows = run_ood(d, cfg);
  OutputLog log(cfg.experiment_dir());
  {
    io::CsvWriter w(log.file("ood/ood_table.csv"));
    std::vector<std::string> header{"hidden_covariate"};
    for (const auto& m : cfg.estimators) {
      header.push_back(m + "_mae");
      header.push_back(m + "_mse");
    }
    w.row(header);
    for (const auto& r : rows) {
      std::vector<std::string> line{r.covariate};
      for (const auto& mt : r.metrics) {
        line.push_back(fmt(mt.mae));
        line.push_back(fmt(mt.mse));
      }
      w.row(line);
    }
  }
  {
    io::CsvWriter w(log.file("ood/ood_results.csv"));
    w.row({"hidden_covariate", "method", "mae", "mse", "n_train", "n_test"});
    for (const auto& r : rows) {
      for (std::size_t e = 0; e < r.methods.size(); ++e) {
        w.row({r.covariate, r.methods[e], fmt(r.metrics[e].mae), fmt(r.metrics[e].mse),
               std::to_string(r.split.train_rows.size()), std::to_string(r.split.test_rows.size())});
      }
    }
  }
  json hidden = json::array();
  for (const auto& r : rows) hidden.push_back({{"covariate", r.covariate}, {"split", split_json(r.split)}});
  log.manifest("ood", cfg, {{"hidden_covariates", hidden}});
}

namespace {

std::string safe_name(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
  return s;
}

}  // namespace

void cmd_dose(const ExperimentConfig& cfg) {
  const Dataset d = load_experiment_data(cfg);
  const DoseResult res = run_dose(d, cfg);
  OutputLog log(cfg.experiment_dir());
  write_effects_csv({res.estimate}, d.aspect_names, log.file("dose/effects.csv"));
  write_dose_csv(res.curves, log.file("dose/curves.csv"));
  for (const auto& c : res.curves) {
    const fs::path stem = fs::path("dose") / safe_name(c.group) / safe_name(c.aspect_name);
    write_dose_csv({c}, log.file(stem.string() + ".csv"));
    log.text(stem.string() + ".json", dump_json(to_json(c)));
  }
  {
    io::CsvWriter w(log.file("dose/summary.csv"));
    w.row({"group", "aspect", "n_rows", "tau_hat", "p_value", "secant_slope", "current_level"});
    for (const auto& c : res.curves) {
      const auto g = std::find_if(res.groups.begin(), res.groups.end(), [&](const auto& x) { return x.label == c.group; });
      w.row({c.group, c.aspect_name, std::to_string(g->rows.size()), fmt(res.estimate.tau_hat(c.aspect)),
             fmt(res.estimate.p_value(c.aspect)), fmt(central_secant_slope(c)), fmt(c.current_level)});
    }
  }
  json groups = json::array();
  for (const auto& g : res.groups) groups.push_back({{"label", g.label}, {"rows", g.rows.size()}});
  log.manifest("dose", cfg, {{"significant_aspects", res.significant}, {"groups", groups}, {"skipped", res.skipped}});
}

void cmd_sweep(const ExperimentConfig& cfg) {
  const Dataset d = load_experiment_data(cfg);
  const std::vector<SweepCell> cells = run_sweep(d, cfg);
  OutputLog log(cfg.experiment_dir());
  {
    io::CsvWriter w(log.file("sweep/surface.csv"));
    w.row({"alpha", "beta", "mae", "mse"});
    for (const auto& c : cells) w.row({fmt(c.alpha), fmt(c.beta), fmt(c.metrics.mae), fmt(c.metrics.mse)});
  }
  log.manifest("sweep", cfg, {{"cells", cells.size()}});
}

ValidationReport cmd_validate(const fs::path& input, bool& loaded, std::string& load_error) {
  loaded = false;
  try {
    const Dataset d = load_dataset(DatasetPaths::in_directory(input));
    loaded = true;
    return validate(d);
  } catch (const DataError& e) {
    load_error = e.what();
    ValidationReport r;
    r.add(Severity::error, e.what());
    return r;
  }
}

}  // namespace dmcee
