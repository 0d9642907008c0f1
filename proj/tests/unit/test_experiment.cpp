#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>

#include "dmcee/baselines.hpp"
#include "dmcee/error.hpp"
#include "dmcee/experiment.hpp"
#include "helpers.hpp"

using namespace dmcee;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(const std::string& name) {
  json j = {{"version", 1},
            {"experiment", name},
            {"synth",
             {{"n_restaurants", 40}, {"n_consumers", 120}, {"latent_dim", 8}, {"n_aspects", 4}, {"replicates", 2}}},
            {"train", {{"epoch", 4}, {"embed_size", 6}, {"layer_size", 3}, {"batch_size", 64}}},
            {"eval", {{"k", 3}, {"deconfounder_k", 2}}},
            {"io", {{"output", testing::scratch_dir(name).string()}}}};
  return experiment_config_from_json(j);
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = io::read_text(e.path());
  }
  return out;
}

double table_value(const fs::path& csv, const std::string& method, const std::string& column) {
  const io::CsvTable t = io::read_csv(csv);
  const auto col = std::find(t.header.begin(), t.header.end(), column) - t.header.begin();
  for (const auto& row : t.rows)
    if (row.front() == method) return std::stod(row[static_cast<std::size_t>(col)]);
  FAIL("method not found: " << method);
  return 0.0;
}

}  // namespace

TEST_CASE("experiment config parsing") {
  const ExperimentConfig c = tiny_config("cfg");
  CHECK(c.synth.n_restaurants == 40);
  CHECK(c.train.epochs == 4);
  CHECK(c.eval.k == 3);
  CHECK(c.estimators == all_estimators());
  CHECK_THROWS_AS(experiment_config_from_json(json{{"synth", {{"n_restaurant", 3}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(json{{"version", 2}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json(json{{"estimators", {"lr", "magic"}}}), ConfigError);
  const ExperimentConfig round = experiment_config_from_json(to_json(c));
  CHECK(to_json(round) == to_json(c));
  CHECK(to_json(c).dump().find("output") == std::string::npos);
  CHECK(default_experiment_config(DataMode::real).train.embed_dim == 32);
}

TEST_CASE("derived seeds differ by purpose and index") {
  CHECK(derive_seed(1, 2, 0) == derive_seed(1, 2, 0));
  CHECK(derive_seed(1, 2, 0) != derive_seed(1, 3, 0));
  CHECK(derive_seed(1, 2, 0) != derive_seed(1, 2, 1));
  CHECK(derive_seed(1, 2, 0) != derive_seed(2, 2, 0));
}

TEST_CASE("cluster splits partition the restaurants") {
  ExperimentConfig c = tiny_config("split");
  const Dataset d = generate_replicate(c.synth, 0).dataset;
  const SplitInfo s = random_cluster_split(d, 3, 11);
  CHECK(s.train_rows.size() + s.test_rows.size() == 40);
  CHECK_FALSE(s.test_rows.empty());
  const SplitInfo far = farthest_cluster_split(d, 3, 11);
  CHECK(far.dist.size() == 3);
  Index best = 0;
  far.dist.maxCoeff(&best);
  CHECK(far.test_cluster == best);
}

TEST_CASE("cmd_run recovers effects exactly without confounding") {
  ExperimentConfig c = tiny_config("unconfounded");
  c.synth.confounder_scale = 0.0;
  c.estimators = {"lr", "lr_con"};
  cmd_run(c);
  const fs::path table = c.experiment_dir() / "aggregate" / "table.csv";
  CHECK(table_value(table, "lr", "Mean") < 1e-6);
  CHECK(table_value(table, "lr_con", "Mean") < 1e-6);
  CHECK(fs::exists(c.experiment_dir() / "manifest_run.json"));
  CHECK(fs::exists(c.experiment_dir() / "replicate_01" / "report.json"));
  const json f = testing::fixture("cmd_run_unconfounded");
  const Dataset d = testing::regression_dataset(testing::mat(f["inputs"]["causes"]), testing::vec(f["inputs"]["outcome"]),
                                                MatrixXd(100, 0));
  CHECK((lr_effects(d).tau_hat - testing::vec(f["inputs"]["w_a"])).cwiseAbs().mean() < 1e-6);
  CHECK(f["expected"]["lr_mean_abs_error"].get<double>() < 1e-6);
}

TEST_CASE("synth and run outputs are byte-identical across runs") {
  ExperimentConfig a = tiny_config("determinism_a");
  ExperimentConfig b = tiny_config("determinism_b");
  b.experiment = a.experiment = "same";
  for (ExperimentConfig* c : {&a, &b}) {
    cmd_synth(*c);
    cmd_run(*c);
  }
  const auto ta = read_tree(a.experiment_dir()), tb = read_tree(b.experiment_dir());
  CHECK(ta.size() > 10);
  CHECK(ta == tb);
}

TEST_CASE("the sweep covers the configured grid") {
  ExperimentConfig c = tiny_config("sweep");
  c.train.epochs = 2;
  c.synth.replicate_count = 1;
  const Dataset d = load_experiment_data(c);
  const auto cells = run_sweep(d, c);
  CHECK(cells.size() == 25);
  for (const auto& cell : cells) CHECK(std::isfinite(cell.metrics.mse));
}

TEST_CASE("ood runs one row per hidden covariate on the stand-in") {
  ExperimentConfig c = tiny_config("ood");
  c.mode = DataMode::standin;
  c.train.epochs = 2;
  c.estimators = {"lr", "lr_con", "dmcee"};
  cmd_ood(c);
  const io::CsvTable t = io::read_csv(c.experiment_dir() / "ood" / "ood_table.csv");
  CHECK(t.rows.size() == 4);
  CHECK(t.header.size() == 7);
  for (const auto& row : t.rows)
    for (std::size_t k = 1; k < row.size(); ++k) CHECK(std::isfinite(std::stod(row[k])));
  const json m = json::parse(io::read_text(c.experiment_dir() / "manifest_ood.json"));
  CHECK(m.dump().find("price_range") != std::string::npos);
}

TEST_CASE("dose runs end to end on the stand-in") {
  ExperimentConfig c = tiny_config("dose");
  c.mode = DataMode::standin;
  c.train.epochs = 2;
  c.dose.boosting.rounds = 20;
  const Dataset d = load_experiment_data(c);
  const DoseResult r = run_dose(d, c);
  CHECK_FALSE(r.groups.empty());
  for (const auto& curve : r.curves) CHECK(curve.levels.size() == c.dose.grid_points);
}

TEST_CASE("worker count honours the environment") {
  CHECK(worker_count() >= 1);
}

TEST_CASE("DMCEE beats LR on most default replicates" * doctest::test_suite("slow")) {
  const json f = testing::fixture("replicate_ordering");
  ExperimentConfig c = default_experiment_config();
  c.synth.replicate_count = f["inputs"]["replicates"].get<Index>();
  c.synth.n_restaurants = f["inputs"]["n_restaurants"].get<Index>();
  c.synth.n_consumers = f["inputs"]["n_consumers"].get<Index>();
  c.estimators = {"lr", "dmcee"};
  const RunResult res = run_synthetic(c);
  int wins = 0;
  for (const auto& rr : res.replicates) {
    wins += rr.reports[1].mean_abs_error < rr.reports[0].mean_abs_error ? 1 : 0;
    MESSAGE("replicate " << rr.replicate << " lr " << rr.reports[0].mean_abs_error << " dmcee "
                         << rr.reports[1].mean_abs_error);
  }
  CHECK(wins >= f["expected"]["min_wins"].get<int>());
}

TEST_CASE("shipped configs parse") {
  const fs::path dir = fs::path(DMCEE_FIXTURE_DIR).parent_path().parent_path() / "configs";
  int seen = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    CAPTURE(e.path().string());
    CHECK_NOTHROW(load_experiment_config(e.path()));
    ++seen;
  }
  CHECK(seen >= 4);
}
