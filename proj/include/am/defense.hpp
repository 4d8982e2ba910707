#pragma once

// Data-valuation defense: exact KNN-Shapley values of training rows against a
// clean validation set, and the discard-lowest-k refit sweep.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "am/dataset.hpp"
#include "am/glm.hpp"
#include "am/victim.hpp"

namespace am {

struct ValuationResult {
  Eigen::VectorXd values;  // per training row
  int k_neighbors = 0;
  Eigen::Index validation_size = 0;
};

// Exact Shapley values under the k-nearest-neighbor utility, by the backward
// recursion over distance-sorted training rows. Classification utility is
// label agreement; regression uses a variance-normalized squared-error
// agreement. Ties in distance break by row index.
inline ValuationResult knn_shapley_values(const Dataset& train, const Dataset& validation,
                                          int k, const GlmFamily& family) {
  if (k < 1) throw std::invalid_argument("knn_shapley_values: k must be >= 1");
  if (validation.rows() == 0)
    throw std::invalid_argument("knn_shapley_values: empty validation set");

  const Eigen::Index n = train.rows();
  Eigen::MatrixXd Xt = train.design();
  Eigen::MatrixXd Xv = validation.design();
  Eigen::VectorXd yt = train.response();
  Eigen::VectorXd yv = validation.response();

  double yvar = 1.0;
  if (family.kind == FamilyKind::Gaussian) {
    double m = yv.mean();
    yvar = (yv.array() - m).square().mean();
    if (yvar <= 0) yvar = 1.0;
  }

  ValuationResult res;
  res.k_neighbors = k;
  res.validation_size = validation.rows();
  res.values = Eigen::VectorXd::Zero(n);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  Eigen::VectorXd s(n), u(n);
  for (Eigen::Index v = 0; v < validation.rows(); ++v) {
    Eigen::VectorXd dist = (Xt.rowwise() - Xv.row(v)).rowwise().squaredNorm();
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&dist](Eigen::Index a, Eigen::Index b) {
      return dist[a] < dist[b];
    });
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index t = order[static_cast<std::size_t>(i)];
      if (family.kind == FamilyKind::Bernoulli) {
        u[i] = (yt[t] == yv[v]) ? 1.0 : 0.0;
      } else {
        double d2 = (yt[t] - yv[v]) * (yt[t] - yv[v]);
        u[i] = 1.0 - std::min(1.0, d2 / yvar);
      }
    }
    s[n - 1] = u[n - 1] / static_cast<double>(n);
    for (Eigen::Index i = n - 2; i >= 0; --i) {
      double pos = static_cast<double>(i + 1);  // 1-based rank
      s[i] = s[i + 1] + (u[i] - u[i + 1]) * std::min<double>(k, pos) /
                            (static_cast<double>(k) * pos);
    }
    for (Eigen::Index i = 0; i < n; ++i) res.values[order[static_cast<std::size_t>(i)]] += s[i];
  }
  res.values /= static_cast<double>(validation.rows());
  return res;
}

struct SweepEntry {
  double fraction = 0;
  VictimReport report;
};

// Impute once, value once, then drop the lowest-valued share and refit for
// each fraction. Valuation and refitting both use the imputed training set.
inline std::vector<SweepEntry> defense_sweep(const PartialDataset& poisoned,
                                             RemediationKind strategy,
                                             const GlmFamily& family,
                                             const AttackTarget& target,
                                             const Eigen::VectorXd& theta_complete,
                                             const Dataset& validation,
                                             const std::vector<double>& discard_fractions,
                                             int k = 10, double ridge = 0.0) {
  for (double f : discard_fractions)
    if (f < 0 || f >= 1)
      throw std::invalid_argument("defense_sweep: fractions must lie in [0, 1)");

  Dataset imputed = remediate(poisoned, strategy);
  // standardize features for the distance metric only, shared scaler
  std::set<int> ex = default_scaling_exclusions(imputed);
  Dataset train_std = imputed, val_std = validation;
  ScalerParams scaler = fit_scaler(imputed, ex);
  train_std = apply_scaler(imputed, scaler);
  val_std = apply_scaler(val_std, scaler);
  ValuationResult val = knn_shapley_values(train_std, val_std, k, family);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(imputed.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&val](Eigen::Index a, Eigen::Index b) {
    return val.values[a] < val.values[b];
  });

  std::vector<SweepEntry> out;
  for (double f : discard_fractions) {
    Eigen::Index drop =
        static_cast<Eigen::Index>(std::floor(f * static_cast<double>(imputed.rows())));
    std::vector<Eigen::Index> keep(order.begin() + drop, order.end());
    std::sort(keep.begin(), keep.end());

    Dataset sub = imputed;
    sub.values.resize(static_cast<Eigen::Index>(keep.size()), imputed.cols());
    for (std::size_t i = 0; i < keep.size(); ++i)
      sub.values.row(static_cast<Eigen::Index>(i)) = imputed.values.row(keep[i]);

    Eigen::MatrixXd X = sub.design();
    Eigen::VectorXd y = sub.response();
    WeightedGlmData wd = unit_weight_data(X, y);

    SweepEntry e;
    e.fraction = f;
    e.report.strategy = strategy;
    e.report.fit = irls_fit(wd, family, ridge);
    wald_inference(wd, family, e.report.fit);
    e.report.target_p_value = e.report.fit.p_values[target.target_index];
    double alpha_norm = target.theta_alpha.lpNorm<1>();
    e.report.l1_to_alpha = (e.report.fit.theta - target.theta_alpha).lpNorm<1>();
    e.report.l1_to_complete = (e.report.fit.theta - theta_complete).lpNorm<1>();
    e.report.norm_l1_to_alpha = e.report.l1_to_alpha / alpha_norm;
    e.report.norm_l1_to_complete = e.report.l1_to_complete / alpha_norm;
    e.report.audit_metric = audit_score(e.report.fit.theta, validation, family);
    e.report.missing_rates = Eigen::VectorXd::Zero(imputed.cols());
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace am
