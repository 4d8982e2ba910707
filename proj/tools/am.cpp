// Command-line front end: attack training, victim evaluation, the
// data-valuation defense sweep, and the self-contained 2-d logistic demo.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "am/experiment.hpp"
#include "am/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ExperimentConfig {
  std::string dataset_path;
  std::string schema_path;
  std::string target;
  std::string family = "gaussian";
  std::string attack = "mean";
  std::vector<std::string> victims = {"cca", "mean", "linear"};
  double train_fraction = 0.8;
  int trials = 20;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  am::BilevelConfig bilevel;

  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    json j;
    in >> j;
    auto get = [&j](const char* key, auto& slot) {
      if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
    };
    get("dataset", dataset_path);
    get("schema", schema_path);
    get("target", target);
    get("family", family);
    get("attack", attack);
    get("victims", victims);
    get("train_fraction", train_fraction);
    get("trials", trials);
    get("seed", seed);
    get("out_dir", out_dir);
    get("lambda_upper", bilevel.lambda_upper);
    get("lambda_lower", bilevel.lambda_lower);
    get("learning_rate", bilevel.learning_rate);
    get("epochs", bilevel.epochs);
    get("warm_start_fraction", bilevel.warm_start_fraction);
    get("hidden_dim", bilevel.hidden_dim);
  }

  am::GlmFamily glm_family() const {
    if (family == "gaussian") return am::GlmFamily::gaussian();
    if (family == "bernoulli") return am::GlmFamily::bernoulli();
    throw std::runtime_error("config: unknown family '" + family + "'");
  }

  void validate_paths() const {
    if (!fs::exists(dataset_path))
      throw std::runtime_error("config: dataset file not found: " + dataset_path);
    if (!fs::exists(schema_path))
      throw std::runtime_error("config: schema file not found: " + schema_path);
    if (trials < 1) throw std::runtime_error("config: trials must be >= 1");
  }
};

am::ExperimentData load_experiment(const ExperimentConfig& cfg) {
  cfg.validate_paths();
  am::Schema schema = am::Schema::from_json_file(cfg.schema_path);
  am::Dataset raw = am::load_csv(cfg.dataset_path, schema);
  std::string target = cfg.target.empty() ? schema.target : cfg.target;
  if (target.empty())
    throw std::runtime_error("config: no target column given (flag or schema)");
  return am::prepare_experiment(raw, target, cfg.glm_family(), cfg.train_fraction,
                                cfg.seed);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

int cmd_attack(const ExperimentConfig& cfg) {
  am::ExperimentData ex = load_experiment(cfg);
  am::BilevelConfig bc = cfg.bilevel;
  bc.kind = am::remediation_from_string(cfg.attack);
  bc.seed = cfg.seed;
  am::BlammResult res = am::run_attack(ex, bc);

  fs::create_directories(cfg.out_dir);
  res.net.save((fs::path(cfg.out_dir) / "mechanism.json").string());
  res.trace.write_csv((fs::path(cfg.out_dir) / "trace.csv").string());

  const auto& last = res.trace.records.back();
  json summary;
  summary["final_delta"] = last.delta;
  summary["final_loss"] = last.loss;
  summary["expected_missing_fraction"] = last.missing_fraction;
  summary["epochs"] = bc.epochs;
  summary["attack"] = cfg.attack;
  write_json(fs::path(cfg.out_dir) / "attack_summary.json", summary);
  std::cout << "attack done: delta=" << last.delta
            << " expected missing fraction=" << last.missing_fraction << "\n";
  return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg, const std::string& mechanism_path) {
  am::ExperimentData ex = load_experiment(cfg);
  am::MechanismNet net = am::MechanismNet::load(mechanism_path);
  if (net.input_dim != ex.mech_inputs.cols())
    throw std::runtime_error("evaluate: mechanism expects " +
                             std::to_string(net.input_dim) + " inputs, dataset has " +
                             std::to_string(ex.mech_inputs.cols()));
  std::vector<am::RemediationKind> victims;
  for (const auto& v : cfg.victims) victims.push_back(am::remediation_from_string(v));
  am::EvaluationResult res =
      am::evaluate_mechanism(ex, net, victims, cfg.trials, cfg.seed + 1000);
  fs::create_directories(cfg.out_dir);
  std::string out = (fs::path(cfg.out_dir) / "results.csv").string();
  am::csv::write_file(out, res.to_table());
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_defend(const ExperimentConfig& cfg, const std::string& mechanism_path,
               std::vector<double> fractions, int k) {
  am::ExperimentData ex = load_experiment(cfg);
  am::MechanismNet net = am::MechanismNet::load(mechanism_path);
  if (fractions.empty()) fractions = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};

  am::MaskDistribution dist = am::mechanism_forward(net, ex.mech_inputs);
  am::MaskMatrix mask =
      am::sample_masks(dist, net.masked_set, ex.train.cols(), cfg.seed + 2000);
  am::PartialDataset p = am::apply_mask(ex.train, mask);
  am::RemediationKind victim = am::remediation_from_string(cfg.victims.front());
  auto sweep = am::defense_sweep(p, victim, ex.family, ex.target, ex.theta_complete,
                                 ex.audit, fractions, k);
  fs::create_directories(cfg.out_dir);
  std::string out = (fs::path(cfg.out_dir) / "sweep.csv").string();
  am::csv::write_file(out, am::sweep_to_table(sweep));
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_demo_fig1(const ExperimentConfig& cfg) {
  am::Dataset raw = am::make_fig1_dataset(800, cfg.seed + 1);
  am::ExperimentData ex =
      am::prepare_experiment(raw, "x1", am::GlmFamily::bernoulli(), 0.75, cfg.seed + 1);

  am::BilevelConfig bc = cfg.bilevel;
  bc.kind = am::RemediationKind::MeanImpute;
  bc.seed = cfg.seed + 1;
  am::BlammResult res = am::run_attack(ex, bc);

  am::MaskDistribution dist = am::mechanism_forward(res.net, ex.mech_inputs);
  am::MaskMatrix mask =
      am::sample_masks(dist, res.net.masked_set, ex.train.cols(), cfg.seed + 101);
  am::PartialDataset p = am::apply_mask(ex.train, mask);
  am::VictimReport rep =
      am::victim_fit_report(p, am::RemediationKind::MeanImpute, ex.family, ex.target,
                            ex.theta_complete, ex.audit);
  double clean_acc = am::audit_score(ex.theta_complete, ex.audit, ex.family);

  fs::create_directories(cfg.out_dir);
  res.net.save((fs::path(cfg.out_dir) / "mechanism.json").string());
  res.trace.write_csv((fs::path(cfg.out_dir) / "trace.csv").string());
  json summary;
  summary["target_p_value"] = rep.target_p_value;
  summary["target_missing_rate"] = rep.missing_rates[ex.target_column];
  summary["clean_accuracy"] = clean_acc;
  summary["attacked_accuracy"] = rep.audit_metric;
  summary["norm_l1_to_alpha"] = rep.norm_l1_to_alpha;
  write_json(fs::path(cfg.out_dir) / "demo_summary.json", summary);

  std::cout << "demo: p=" << rep.target_p_value
            << " missing=" << rep.missing_rates[ex.target_column]
            << " accuracy " << clean_acc << " -> " << rep.audit_metric << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial missingness attacks on GLM fitting"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string config_path, mechanism_path;
  std::vector<double> fractions;
  int k_neighbors = 10;

  auto add_common = [&](CLI::App* sub, bool needs_data) {
    sub->add_option("--config", config_path, "JSON experiment config");
    sub->add_option("--seed", cfg.seed, "base RNG seed");
    sub->add_option("--out-dir", cfg.out_dir, "output directory");
    sub->add_option("--trials", cfg.trials, "number of sampled masks");
    sub->add_option("--attack", cfg.attack, "attack kind: cca|mean|linear");
    sub->add_option("--victim", cfg.victims, "victim strategies: cca|mean|linear");
    sub->add_option("--lambda-upper", cfg.bilevel.lambda_upper, "missingness penalty");
    sub->add_option("--lr", cfg.bilevel.learning_rate, "mechanism learning rate");
    sub->add_option("--epochs", cfg.bilevel.epochs, "training epochs");
    if (needs_data) {
      sub->add_option("--dataset", cfg.dataset_path, "CSV dataset path");
      sub->add_option("--schema", cfg.schema_path, "JSON schema path");
      sub->add_option("--target", cfg.target, "target column");
      sub->add_option("--family", cfg.family, "glm family: gaussian|bernoulli");
    }
  };

  CLI::App* attack = app.add_subcommand("attack", "train a missingness mechanism");
  add_common(attack, true);
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "multi-trial victim evaluation of a mechanism");
  add_common(evaluate, true);
  evaluate->add_option("--mechanism", mechanism_path, "mechanism JSON")->required();
  CLI::App* defend = app.add_subcommand("defend", "KNN-Shapley discard sweep");
  add_common(defend, true);
  defend->add_option("--mechanism", mechanism_path, "mechanism JSON")->required();
  defend->add_option("--fractions", fractions, "discard fractions");
  defend->add_option("--k", k_neighbors, "neighbors for the valuation");
  CLI::App* demo = app.add_subcommand("demo-fig1", "self-contained 2-d logistic demo");
  add_common(demo, false);

  // demo defaults tuned for the synthetic problem
  demo->parse_complete_callback([&] {
    if (demo->count("--epochs") == 0) cfg.bilevel.epochs = 2000;
    if (demo->count("--lr") == 0) cfg.bilevel.learning_rate = 0.05;
    if (demo->count("--lambda-upper") == 0) cfg.bilevel.lambda_upper = 0.08;
    cfg.bilevel.hidden_dim = 32;
    cfg.bilevel.lambda_lower = 1e-7;
  });

  CLI11_PARSE(app, argc, argv);

  try {
    // config file first, then explicit flags override
    if (!config_path.empty()) {
      ExperimentConfig file_cfg;
      file_cfg.load(config_path);
      ExperimentConfig merged = file_cfg;
      CLI::App* sub = app.get_subcommands().front();
      auto keep = [&](const char* flag) { return sub->count(flag) > 0; };
      if (keep("--seed")) merged.seed = cfg.seed;
      if (keep("--out-dir")) merged.out_dir = cfg.out_dir;
      if (keep("--trials")) merged.trials = cfg.trials;
      if (keep("--attack")) merged.attack = cfg.attack;
      if (keep("--victim")) merged.victims = cfg.victims;
      if (keep("--lambda-upper")) merged.bilevel.lambda_upper = cfg.bilevel.lambda_upper;
      if (keep("--lr")) merged.bilevel.learning_rate = cfg.bilevel.learning_rate;
      if (keep("--epochs")) merged.bilevel.epochs = cfg.bilevel.epochs;
      if (sub != demo) {
        if (sub->count("--dataset")) merged.dataset_path = cfg.dataset_path;
        if (sub->count("--schema")) merged.schema_path = cfg.schema_path;
        if (sub->count("--target")) merged.target = cfg.target;
        if (sub->count("--family")) merged.family = cfg.family;
      }
      cfg = merged;
    }
    cfg.bilevel.validate();

    if (attack->parsed()) return cmd_attack(cfg);
    if (evaluate->parsed()) return cmd_evaluate(cfg, mechanism_path);
    if (defend->parsed()) return cmd_defend(cfg, mechanism_path, fractions, k_neighbors);
    if (demo->parsed()) return cmd_demo_fig1(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
