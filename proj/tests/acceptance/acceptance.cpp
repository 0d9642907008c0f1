#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "dmcee/baselines.hpp"
#include "dmcee/encoder.hpp"
#include "dmcee/eval.hpp"
#include "dmcee/experiment.hpp"
#include "dmcee/io.hpp"
#include "dmcee/rng.hpp"
#include "dmcee/stats.hpp"
#include "dmcee/synth.hpp"
#include "dmcee/train.hpp"

using namespace dmcee;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kRecoveryTol = 1e-3;
constexpr int kConfoundingWins = 8;
constexpr double kOrderingAlpha = 0.05;
constexpr int kHcWins = 8;
constexpr double kAuditTol = 1e-4;
constexpr double kAuditStep = 1e-5;
constexpr double kDistTol = 0.0;
constexpr double kLossTol = 1e-12;
constexpr double kAngleTol = 1e-3;
constexpr double kSlopeTol = 0.15;
constexpr Index kReplicates = 10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

json fixture(const std::string& name) {
  return json::parse(io::read_text(fs::path(DMCEE_FIXTURE_DIR) / (name + ".json")));
}

MatrixXd mat(const json& rows) {
  MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j].get<double>();
  return m;
}

VectorXd vec(const json& v) {
  VectorXd out(static_cast<Index>(v.size()));
  for (Index i = 0; i < out.size(); ++i) out(i) = v[i].get<double>();
  return out;
}

Dataset dataset_from(const MatrixXd& x_r, const MatrixXd& x_u, const json& edges, const MatrixXd& a, const VectorXd& y) {
  Dataset d;
  std::vector<Edge> e;
  for (const auto& p : edges) e.push_back({p[0].get<Index>(), p[1].get<Index>()});
  d.graph = BipartiteGraph(x_r.rows(), x_u.rows(), e);
  for (Index r = 0; r < x_r.rows(); ++r) d.restaurant_ids.push_back("r" + std::to_string(r));
  for (Index u = 0; u < x_u.rows(); ++u) d.consumer_ids.push_back("u" + std::to_string(u));
  for (Index c = 0; c < x_r.cols(); ++c) d.x_r.add_numeric("xr" + std::to_string(c), x_r.col(c));
  for (Index c = 0; c < x_u.cols(); ++c) d.x_u.add_numeric("xu" + std::to_string(c), x_u.col(c));
  d.causes = a;
  d.outcome = y;
  for (Index j = 0; j < a.cols(); ++j) d.aspect_names.push_back("a" + std::to_string(j));
  return d;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dmcee_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = io::read_text(e.path());
  return out;
}

Outcome unconfounded_recovery() {
  SynthConfig sc;
  sc.n_consumers = 300;
  sc.confounder_scale = 0.0;
  const SyntheticInstance s = generate_replicate(sc, 0);
  TrainConfig tc;
  tc.epochs = 20;
  const double lr = ate_abs_error(lr_effects(s.dataset).tau_hat, s.w_a).mean;
  const double con = ate_abs_error(lr_con_effects(s.dataset).tau_hat, s.w_a).mean;
  const double refit = ate_abs_error(variant_effects(s.dataset, tc, Variant::dmcee).refit_tau, s.w_a).mean;
  return {lr < kRecoveryTol && con < kRecoveryTol && refit < kRecoveryTol,
          "lr " + num(lr) + ", lr_con " + num(con) + ", dmcee refit " + num(refit) + " (tol " + num(kRecoveryTol) + ")"};
}

Outcome confounding_direction() {
  const SynthConfig sc;
  int wins = 0;
  double lr_sum = 0.0, con_sum = 0.0;
  for (Index r = 0; r < kReplicates; ++r) {
    const SyntheticInstance s = generate_replicate(sc, r);
    const double lr = ate_abs_error(lr_effects(s.dataset).tau_hat, s.w_a).mean;
    const double con = ate_abs_error(lr_con_effects(s.dataset).tau_hat, s.w_a).mean;
    wins += lr > con ? 1 : 0;
    lr_sum += lr;
    con_sum += con;
  }
  const double n = static_cast<double>(kReplicates);
  return {wins >= kConfoundingWins, "lr > lr_con on " + std::to_string(wins) + "/10 (need " +
                                         std::to_string(kConfoundingWins) + "), means lr " + num(lr_sum / n) +
                                         ", lr_con " + num(con_sum / n)};
}

Outcome method_ordering(const RunResult& run) {
  const auto& m = run.aggregate.methods;
  auto find = [&](const std::string& name) -> const MethodAggregate& {
    for (const auto& a : m)
      if (a.method == name) return a;
    throw std::runtime_error("missing method " + name);
  };
  const MethodAggregate &lr = find("lr"), &dec = find("deconfounder"), &dm = find("dmcee");
  const double p = t_test_two_sided(dm.replicate_mean_errors, dec.replicate_mean_errors);
  const bool ok = dm.mean_abs_error.mean < dec.mean_abs_error.mean && dm.mean_abs_error.mean < lr.mean_abs_error.mean &&
                  p < kOrderingAlpha;
  return {ok, "means dmcee " + num(dm.mean_abs_error.mean) + ", deconfounder " + num(dec.mean_abs_error.mean) + ", lr " +
                  num(lr.mean_abs_error.mean) + "; p(dmcee vs deconfounder) " + num(p) + " (alpha " +
                  num(kOrderingAlpha) + ")"};
}

Outcome hc_trend(const RunResult& run) {
  int wins = 0;
  for (const auto& rr : run.replicates) {
    double dm = NAN, dec = NAN;
    for (const auto& r : rr.reports) {
      if (r.method == "dmcee") dm = r.hc_discrepancy;
      if (r.method == "deconfounder") dec = r.hc_discrepancy;
    }
    wins += dm < dec ? 1 : 0;
  }
  return {wins >= kHcWins, "dmcee below deconfounder on " + std::to_string(wins) + "/10 (need " +
                                std::to_string(kHcWins) + ")"};
}

Outcome gradient_audit() {
  const json in = fixture("gradient_5x8")["inputs"];
  const Dataset d = dataset_from(mat(in["x_r"]), mat(in["x_u"]), in["edges"], mat(in["causes"]), vec(in["outcome"]));
  TripleBatch batch;
  for (const auto& t : in["triples"]) batch.triples.push_back({t[0].get<Index>(), t[1].get<Index>(), t[2].get<Index>()});
  const auto rows = in["rows"].get<std::vector<Index>>();
  const json& p = in["params"];
  ModelParams params;
  params.encoder.w_r = mat(p["w_r"]);
  params.encoder.w_u = mat(p["w_u"]);
  for (const auto& l : p["layers"]) params.encoder.layers.push_back({mat(l["w_1"]), mat(l["w_2"])});
  params.encoder.leaky_slope = in["leaky_slope"].get<double>();
  params.adjustment.gamma_map = mat(p["gamma_map"]);
  params.adjustment.theta_c = mat(p["theta_c"]);
  params.adjustment.theta_a = vec(p["theta_a"]);
  params.adjustment.theta_gamma = vec(p["theta_gamma"]);
  TrainConfig cfg;
  cfg.weights = {in["weights"]["alpha"].get<double>(), in["weights"]["beta"].get<double>(),
                 in["weights"]["lambda"].get<double>()};
  cfg.leaky_slope = params.encoder.leaky_slope;
  cfg.node_dropout = cfg.mess_dropout = 0.0;
  const AuditResult a = finite_diff_audit(d, batch, rows, params, cfg, kAuditStep);
  return {a.max_relative_error < kAuditTol, "max relative error " + num(a.max_relative_error) + " over " +
                                                 std::to_string(a.coordinates_checked) + " coordinates (tol " +
                                                 num(kAuditTol) + ")"};
}

Outcome ood_protocol() {
  const json f = fixture("ood_dist");
  bool ok = true;
  std::string detail;
  for (const char* name : {"four_point", "collinear"}) {
    const json& c = f["inputs"][name];
    const OodSplitPlan plan = ood_split(mat(c["points"]), c["k"].get<Index>(), 1);
    const VectorXd expect = vec(f["expected"][name]["dist"]);
    // Cluster labels are arbitrary; compare through each point's cluster.
    const MatrixXd pts = mat(c["points"]);
    const MatrixXd centroids = mat(f["expected"][name]["centroids"]);
    double err = 0.0;
    for (Index i = 0; i < pts.rows(); ++i) {
      const Index cl = plan.assignment[static_cast<std::size_t>(i)];
      Index ref = 0;
      (centroids.rowwise() - pts.row(i)).rowwise().squaredNorm().minCoeff(&ref);
      err = std::max(err, std::abs(plan.dist(cl) - expect(ref)));
    }
    Index best = 0;
    expect.maxCoeff(&best);
    Index ref_test = 0;
    (centroids.rowwise() - plan.centroids.row(plan.test_cluster)).rowwise().squaredNorm().minCoeff(&ref_test);
    const bool tie = (expect.array() == expect(best)).count() > 1;
    ok = ok && err <= kDistTol && (tie || ref_test == best);
    detail += std::string(name) + " dist error " + num(err) + "; ";
  }
  int violations = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(s);
    const Index n = 10 + static_cast<Index>(rng.uniform_index(40));
    const Index k = 2 + static_cast<Index>(rng.uniform_index(4));
    MatrixXd pts(n, 3);
    for (Index i = 0; i < pts.size(); ++i) pts.data()[i] = rng.normal();
    const KMeansResult r = kmeans(pts, k, s);
    for (std::size_t i = 1; i < r.objective.size(); ++i) violations += r.objective[i] > r.objective[i - 1] ? 1 : 0;
  }
  ok = ok && violations == 0;
  return {ok, detail + "k-means objective increases on 100 instances: " + std::to_string(violations)};
}

Outcome loss_identities() {
  EncodedNodes enc;
  enc.out_u = MatrixXd::Ones(1, 2);
  enc.out_r = MatrixXd::Ones(2, 2);
  TripleBatch zero{{{0, 0, 1}}};
  const double bpr = bpr_loss(zero, enc);
  const double bpr_err = std::abs(bpr - std::log(2.0));
  const double hi = neg_log_sigmoid(1000.0), lo = neg_log_sigmoid(-1000.0);
  const bool stable = std::isfinite(hi) && std::isfinite(lo) && hi >= 0.0 && hi < 1e-300 + 1e-12 &&
                      std::abs(lo - 1000.0) < 1e-9;
  double worst = 0.0;
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const LossBreakdown b = total_loss(rng.uniform() * 1e4, rng.uniform() * 1e3, rng.uniform() * 1e6, rng.uniform() * 1e2,
                                       {rng.uniform(), rng.uniform(), rng.uniform()});
    worst = std::max(worst, std::abs(b.total - b.recomposed()) / std::abs(b.total));
  }
  return {bpr_err <= kLossTol && stable && worst <= kLossTol,
          "|bpr(0) - ln 2| " + num(bpr_err) + ", softplus(+-1000) " + num(hi) + " / " + num(lo) +
              ", recomposition " + num(worst) + " (tol " + num(kLossTol) + ")"};
}

Outcome ppca_oracle() {
  const json f = fixture("ppca_rank1");
  const PpcaModel m = ppca_fit(mat(f["inputs"]["causes"]), 1, 3);
  const VectorXd ref = vec(f["expected"]["top_direction"]).normalized();
  const double angle = std::acos(std::min(1.0, std::abs(m.loadings.col(0).normalized().dot(ref))));
  const SyntheticInstance s = generate_replicate(SynthConfig{}, 0);
  const bool same = deconfounder_effects(s.dataset, 0, 1).tau_hat == lr_effects(s.dataset).tau_hat;
  return {angle < kAngleTol && same, "principal angle " + num(angle) + " (tol " + num(kAngleTol) +
                                         "), k=0 deconfounder identical to lr: " + (same ? "yes" : "no")};
}

Outcome dose_slope() {
  ExperimentConfig c = default_experiment_config();
  const SyntheticInstance s = generate_replicate(c.synth, 0);
  const DoseResult r = run_dose(s.dataset, c);
  if (r.curves.empty()) return {false, "no significant aspect produced a curve"};
  bool ok = true;
  double worst = 0.0;
  for (const auto& curve : r.curves) {
    const double truth = s.w_a(curve.aspect);
    const double rel = std::abs(central_secant_slope(curve) - truth) / std::abs(truth);
    worst = std::max(worst, rel);
    ok = ok && rel <= kSlopeTol;
  }
  return {ok, std::to_string(r.curves.size()) + " significant aspects, worst relative slope error " + num(worst) +
                  " (tol " + num(kSlopeTol) + ")"};
}

Outcome determinism() {
  auto run_once = [](const std::string& tag) {
    ExperimentConfig c = default_experiment_config();
    c.experiment = "determinism";
    c.output = scratch("determinism_" + tag);
    c.synth.n_consumers = 300;
    c.synth.replicate_count = 3;
    c.train.epochs = 100;
    cmd_synth(c);
    cmd_run(c);
    return read_tree(c.experiment_dir());
  };
  const auto a = run_once("a"), b = run_once("b");
  std::size_t differing = 0;
  for (const auto& [k, v] : a) {
    const auto it = b.find(k);
    differing += (it == b.end() || it->second != v) ? 1 : 0;
  }
  differing += b.size() > a.size() ? b.size() - a.size() : 0;
  return {differing == 0 && !a.empty(),
          std::to_string(a.size()) + " files compared, " + std::to_string(differing) + " differ"};
}

Outcome ood_standin() {
  ExperimentConfig c = default_experiment_config(DataMode::standin);
  c.experiment = "ood_standin";
  c.output = scratch("ood");
  cmd_ood(c);
  const io::CsvTable t = io::read_csv(c.experiment_dir() / "ood" / "ood_table.csv");
  bool finite = true;
  for (const auto& row : t.rows)
    for (std::size_t k = 1; k < row.size(); ++k) finite = finite && std::isfinite(std::stod(row[k]));
  const json m = json::parse(io::read_text(c.experiment_dir() / "manifest_ood.json"));
  std::size_t recorded = 0;
  for (const char* g : {"location", "category", "rating", "price_range"})
    recorded += m.dump().find(std::string("\"") + g + "\"") != std::string::npos ? 1 : 0;
  const std::size_t methods = (t.header.size() - 1) / 2;
  return {t.rows.size() == 4 && methods == 7 && finite && recorded == 4,
          std::to_string(t.rows.size()) + " rows x " + std::to_string(methods) + " methods, finite " +
              (finite ? "yes" : "no") + ", hidden covariates in manifest " + std::to_string(recorded) + "/4"};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << o.detail << " ["
              << num(secs) << " s]" << std::endl;
  };

  report(1, "unconfounded recovery", unconfounded_recovery);
  report(2, "confounding direction", confounding_direction);
  RunResult run;
  std::string run_error;
  const auto start = std::chrono::steady_clock::now();
  try {
    ExperimentConfig c = default_experiment_config();
    c.synth.replicate_count = kReplicates;
    c.estimators = {"lr", "deconfounder", "dmcee"};
    run = run_synthetic(c);
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  const double run_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "replicate run: " << num(run_secs) << " s" << std::endl;
  auto from_run = [&](const std::function<Outcome(const RunResult&)>& fn) {
    return [&, fn] {
      if (!run_error.empty()) return Outcome{false, "replicate run failed: " + run_error};
      return fn(run);
    };
  };
  report(3, "method ordering", from_run(method_ordering));
  report(4, "HC discrepancy trend", from_run(hc_trend));
  report(5, "gradient correctness", gradient_audit);
  report(6, "OOD split and k-means", ood_protocol);
  report(7, "loss identities", loss_identities);
  report(8, "PPCA vs SVD", ppca_oracle);
  report(9, "dose-response slope", dose_slope);
  report(10, "determinism", determinism);
  report(11, "OOD on the stand-in", ood_standin);
  std::cout << (11 - failures) << "/11 criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
