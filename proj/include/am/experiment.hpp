#pragma once

// End-to-end experiment plumbing shared by the CLI and the acceptance suite:
// data preparation (split, intercept, attacker-side scaling of mechanism
// inputs), attack training, the 20-trial MNAR/MCAR victim evaluation and its
// results table.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "am/bilevel.hpp"
#include "am/csv.hpp"
#include "am/dataset.hpp"
#include "am/defense.hpp"
#include "am/glm.hpp"
#include "am/mechanism.hpp"
#include "am/victim.hpp"

namespace am {

struct ExperimentData {
  Dataset train;   // raw scale, intercept appended
  Dataset audit;   // same layout
  Eigen::MatrixXd mech_inputs;  // standardized z = (x, y), intercept dropped
  ScalerParams scaler;
  GlmFamily family;
  AttackTarget target;
  Eigen::VectorXd theta_complete;  // theta_p on the training split
  GlmFit complete_fit;
  int target_column = -1;  // dataset column index of the target
};

// Splits, appends the intercept, fits the complete-data GLM and the
// constrained adversarial target, and builds the standardized mechanism
// inputs. The response enters the mechanism unscaled unless scale_response.
inline ExperimentData prepare_experiment(const Dataset& raw, const std::string& target_col,
                                         const GlmFamily& family, double train_fraction,
                                         std::uint64_t seed, double victim_ridge = 0.0,
                                         bool scale_response = false) {
  ExperimentData ex;
  ex.family = family;

  auto [train_raw, audit_raw] = split(raw, train_fraction, seed);
  ex.train = add_intercept(train_raw);
  ex.audit = add_intercept(audit_raw);

  ex.target_column = ex.train.column_index(target_col);

  std::set<int> exclusions = default_scaling_exclusions(ex.train);
  if (scale_response) exclusions.erase(ex.train.response_index);
  if (ex.train.response_index >= 0) {
    // standardize() insists the response is excluded; scale it separately
    exclusions.insert(ex.train.response_index);
  }
  auto [scaled, scaler] = standardize(ex.train, exclusions);
  ex.scaler = scaler;
  if (scale_response) {
    std::set<int> resp_only;
    for (int j = 0; j < scaled.cols(); ++j)
      if (j != ex.train.response_index) resp_only.insert(j);
    ScalerParams rp = fit_scaler(scaled, resp_only);
    scaled = apply_scaler(scaled, rp);
  }
  // mechanism conditions on the full row (features and response), intercept out
  std::vector<int> in_cols;
  for (int j = 0; j < scaled.cols(); ++j)
    if (!(scaled.intercept_added && j == scaled.intercept_index)) in_cols.push_back(j);
  ex.mech_inputs.resize(scaled.rows(), static_cast<Eigen::Index>(in_cols.size()));
  for (std::size_t k = 0; k < in_cols.size(); ++k)
    ex.mech_inputs.col(static_cast<Eigen::Index>(k)) = scaled.values.col(in_cols[k]);

  Eigen::MatrixXd X = ex.train.design();
  Eigen::VectorXd y = ex.train.response();
  ex.complete_fit = glm_fit(X, y, family, victim_ridge);
  ex.theta_complete = ex.complete_fit.theta;

  // design position of the target column
  int design_t = -1, k = 0;
  for (int j : ex.train.feature_columns()) {
    if (j == ex.target_column) design_t = k;
    ++k;
  }
  if (design_t < 0)
    throw std::invalid_argument("prepare_experiment: target cannot be the response");
  ex.target = constrained_target(X, y, family, design_t, victim_ridge);
  ex.target.masked_set = {ex.target_column};
  return ex;
}

inline BlammResult run_attack(const ExperimentData& ex, const BilevelConfig& cfg) {
  return blamm_train(ex.train, ex.mech_inputs, ex.target, ex.family, cfg);
}

struct TrialAggregate {
  RemediationKind victim = RemediationKind::MeanImpute;
  std::string mechanism;  // "mnar" or "mcar"
  double mean_norm_l1_alpha = 0, sd_norm_l1_alpha = 0;
  double mean_p = 0, sd_p = 0;
  double mean_audit = 0, sd_audit = 0;
  double mean_target_missing = 0;
};

struct EvaluationResult {
  std::vector<TrialAggregate> rows;

  csv::Table to_table() const {
    csv::Table t;
    t.header = {"victim",  "mechanism",        "mean_norm_l1_alpha", "sd_norm_l1_alpha",
                "mean_p",  "sd_p",             "mean_audit",         "sd_audit",
                "mean_target_missing_rate"};
    for (const auto& r : rows)
      t.rows.push_back({to_string(r.victim), r.mechanism,
                        csv::format_value(r.mean_norm_l1_alpha),
                        csv::format_value(r.sd_norm_l1_alpha), csv::format_value(r.mean_p),
                        csv::format_value(r.sd_p), csv::format_value(r.mean_audit),
                        csv::format_value(r.sd_audit),
                        csv::format_value(r.mean_target_missing)});
    return t;
  }
};

// Samples `trials` masks from the learned mechanism and from its matched MCAR
// marginal, runs every victim strategy on each, and aggregates mean/sd.
inline EvaluationResult evaluate_mechanism(const ExperimentData& ex,
                                           const MechanismNet& net,
                                           const std::vector<RemediationKind>& victims,
                                           int trials, std::uint64_t seed0,
                                           double victim_ridge = 0.0) {
  MaskDistribution dist = mechanism_forward(net, ex.mech_inputs);
  MaskDistribution mcar = mcar_distribution(dist);

  struct Cell {
    std::vector<double> norm_l1, pval, audit, miss;
  };
  std::vector<Cell> cells(victims.size() * 2);

  for (int t = 0; t < trials; ++t) {
    for (int which = 0; which < 2; ++which) {
      const MaskDistribution& d = which == 0 ? dist : mcar;
      MaskMatrix mask = sample_masks(d, net.masked_set, ex.train.cols(),
                                     seed0 + static_cast<std::uint64_t>(2 * t + which));
      PartialDataset p = apply_mask(ex.train, mask);
      for (std::size_t v = 0; v < victims.size(); ++v) {
        VictimReport rep =
            victim_fit_report(p, victims[v], ex.family, ex.target, ex.theta_complete,
                              ex.audit, victim_ridge);
        Cell& c = cells[2 * v + static_cast<std::size_t>(which)];
        c.norm_l1.push_back(rep.norm_l1_to_alpha);
        c.pval.push_back(rep.target_p_value);
        c.audit.push_back(rep.audit_metric);
        c.miss.push_back(rep.missing_rates[ex.target_column]);
      }
    }
  }

  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto sd = [&mean](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean(v), s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };

  EvaluationResult out;
  for (std::size_t v = 0; v < victims.size(); ++v) {
    for (int which = 0; which < 2; ++which) {
      const Cell& c = cells[2 * v + static_cast<std::size_t>(which)];
      TrialAggregate a;
      a.victim = victims[v];
      a.mechanism = which == 0 ? "mnar" : "mcar";
      a.mean_norm_l1_alpha = mean(c.norm_l1);
      a.sd_norm_l1_alpha = sd(c.norm_l1);
      a.mean_p = mean(c.pval);
      a.sd_p = sd(c.pval);
      a.mean_audit = mean(c.audit);
      a.sd_audit = sd(c.audit);
      a.mean_target_missing = mean(c.miss);
      out.rows.push_back(a);
    }
  }
  return out;
}

inline csv::Table sweep_to_table(const std::vector<SweepEntry>& sweep) {
  csv::Table t;
  t.header = {"fraction", "distance_to_alpha", "distance_to_true", "target_p_value"};
  for (const auto& e : sweep)
    t.rows.push_back({csv::format_value(e.fraction), csv::format_value(e.report.l1_to_alpha),
                      csv::format_value(e.report.l1_to_complete),
                      csv::format_value(e.report.target_p_value)});
  return t;
}

}  // namespace am
