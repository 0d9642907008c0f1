#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dmcee/error.hpp"
#include "dmcee/experiment.hpp"

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kDivergence = 4 };

struct Overrides {
  std::string config;
  std::string mode;
  std::string out;
  std::string input;
  std::string experiment;
  std::optional<std::uint64_t> seed;
  std::optional<dmcee::Index> replicates;
  std::vector<std::string> estimators;
  std::optional<int> epoch;
  std::optional<dmcee::Index> embed_size, layer_size, batch_size, n_layers;
  std::optional<double> alpha, beta, lambda, lr, node_dropout, mess_dropout;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "Experiment config (JSON)");
  sub->add_option("--mode", o.mode, "synth, real or standin")->check(CLI::IsMember({"synth", "real", "standin"}));
  sub->add_option("--out", o.out, "Output root directory");
  sub->add_option("--input", o.input, "Dataset directory for mode real");
  sub->add_option("--experiment", o.experiment, "Experiment name (output subdirectory)");
  sub->add_option("--seed", o.seed, "Seed for data generation, splits and training");
  sub->add_option("--replicates", o.replicates, "Number of synthetic replicates");
  sub->add_option("--estimators", o.estimators, "Estimators to run")->delimiter(',');
  sub->add_option("--epoch", o.epoch, "Training epochs");
  sub->add_option("--embed_size", o.embed_size, "Embedding size D");
  sub->add_option("--layer_size", o.layer_size, "Propagation layer width d'");
  sub->add_option("--batch_size", o.batch_size, "Edges per mini-batch");
  sub->add_option("--n_layers", o.n_layers, "Propagation layers");
  sub->add_option("--alpha", o.alpha, "Weight of the interaction loss");
  sub->add_option("--beta", o.beta, "Weight of the cause loss");
  sub->add_option("--lambda", o.lambda, "L2 weight");
  sub->add_option("--lr", o.lr, "Learning rate");
  sub->add_option("--node_dropout", o.node_dropout, "Node dropout ratio");
  sub->add_option("--mess_dropout", o.mess_dropout, "Message dropout ratio");
}

dmcee::DataMode parse_mode(const std::string& s) {
  if (s == "real") return dmcee::DataMode::real;
  if (s == "standin") return dmcee::DataMode::standin;
  return dmcee::DataMode::synth;
}

dmcee::ExperimentConfig resolve(const Overrides& o) {
  dmcee::ExperimentConfig c = o.config.empty()
                                  ? dmcee::default_experiment_config(o.mode.empty() ? dmcee::DataMode::synth : parse_mode(o.mode))
                                  : dmcee::load_experiment_config(o.config);
  if (!o.config.empty() && !o.mode.empty()) c.mode = parse_mode(o.mode);
  if (!o.out.empty()) c.output = o.out;
  if (!o.input.empty()) c.input = o.input;
  if (!o.experiment.empty()) c.experiment = o.experiment;
  if (o.seed) {
    c.synth.seed = *o.seed;
    c.train.seed = *o.seed;
  }
  if (o.replicates) c.synth.replicate_count = *o.replicates;
  if (!o.estimators.empty()) c.estimators = o.estimators;
  if (o.epoch) c.train.epochs = *o.epoch;
  if (o.embed_size) c.train.embed_dim = *o.embed_size;
  if (o.layer_size) c.train.layer_size = *o.layer_size;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.n_layers) c.train.n_layers = *o.n_layers;
  if (o.alpha) c.train.weights.alpha = *o.alpha;
  if (o.beta) c.train.weights.beta = *o.beta;
  if (o.lambda) c.train.weights.lambda = *o.lambda;
  if (o.lr) c.train.learning_rate = *o.lr;
  if (o.node_dropout) c.train.node_dropout = *o.node_dropout;
  if (o.mess_dropout) c.train.mess_dropout = *o.mess_dropout;
  c.check();
  return c;
}

int validate_command(const std::string& input) {
  bool loaded = false;
  std::string load_error;
  const dmcee::ValidationReport r = dmcee::cmd_validate(input, loaded, load_error);
  dmcee::json issues = dmcee::json::array();
  for (const auto& i : r.issues) {
    issues.push_back({{"severity", i.severity == dmcee::Severity::error ? "error" : "warning"}, {"message", i.message}});
  }
  const dmcee::json out = {{"input", input}, {"loaded", loaded}, {"ok", r.ok}, {"issues", issues}};
  std::cout << out.dump(2) << "\n";
  if (!loaded) return kData;
  return r.ok ? kOk : kData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deconfounded multi-cause effect estimation"};
  app.set_version_flag("--version", std::string(dmcee::kVersion));
  app.require_subcommand(1);

  Overrides o;
  std::vector<std::pair<CLI::App*, void (*)(const dmcee::ExperimentConfig&)>> commands;
  const std::vector<std::tuple<const char*, const char*, void (*)(const dmcee::ExperimentConfig&)>> table{
      {"synth", "Generate synthetic replicates with ground truth", dmcee::cmd_synth},
      {"run", "Train estimators per replicate and aggregate ATE errors", dmcee::cmd_run},
      {"ood", "Hide each restaurant covariate and score out-of-distribution prediction", dmcee::cmd_ood},
      {"dose", "Fit dose-response curves for significant aspects", dmcee::cmd_dose},
      {"sweep", "Grid over alpha and beta on the out-of-distribution split", dmcee::cmd_sweep}};
  for (const auto& [name, help, fn] : table) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, o);
    commands.emplace_back(sub, fn);
  }
  std::string validate_input;
  CLI::App* validate = app.add_subcommand("validate", "Check a dataset directory and print a JSON report");
  validate->add_option("--input", validate_input, "Dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (validate->parsed()) return validate_command(validate_input);
    for (const auto& [sub, fn] : commands) {
      if (sub->parsed()) {
        const dmcee::ExperimentConfig cfg = resolve(o);
        fn(cfg);
        std::cout << "wrote " << cfg.experiment_dir().string() << "\n";
      }
    }
    return kOk;
  } catch (const dmcee::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const dmcee::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const dmcee::DivergenceError& e) {
    std::cerr << "divergence at epoch " << e.epoch() << ": " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
