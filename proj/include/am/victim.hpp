#pragma once

// The simulated modeler: remediate a partially observed dataset (CCA, mean
// imputation or regression-based imputation), fit the GLM, and report
// coefficients, p-values, distances to the adversarial and complete-data
// parameters, and the audit metric.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "am/dataset.hpp"
#include "am/glm.hpp"
#include "am/remediation.hpp"

namespace am {

namespace detail {

inline Dataset partial_to_dataset(const PartialDataset& p) {
  Dataset d;
  d.values = p.values;
  d.column_names = p.column_names;
  d.feature_kinds.assign(p.column_names.size(), FeatureKind::Continuous);
  d.response_index = p.response_index;
  for (std::size_t j = 0; j < p.column_names.size(); ++j) {
    if (p.column_names[j] == "(intercept)") {
      d.intercept_added = true;
      d.intercept_index = static_cast<int>(j);
    }
  }
  return d;
}

}  // namespace detail

struct RemediateOptions {
  bool linear_use_response = false;  // include y among the imputation regressors
};

inline Dataset remediate(const PartialDataset& p, RemediationKind strategy,
                         const RemediateOptions& opt = {}) {
  const Eigen::Index n = p.rows();
  const Eigen::Index d = p.cols();
  for (Eigen::Index i = 0; i < n; ++i)
    if (p.is_na(i, p.response_index))
      throw std::runtime_error("remediate: NA in the response column");

  if (strategy == RemediationKind::Cca) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < n; ++i) {
      bool complete = true;
      for (Eigen::Index j = 0; j < d && complete; ++j)
        if (p.is_na(i, j)) complete = false;
      if (complete) keep.push_back(i);
    }
    if (static_cast<Eigen::Index>(keep.size()) < d)
      throw std::runtime_error("remediate: only " + std::to_string(keep.size()) +
                               " complete rows remain, need at least " +
                               std::to_string(d));
    Dataset out = detail::partial_to_dataset(p);
    Eigen::MatrixXd vals(static_cast<Eigen::Index>(keep.size()), d);
    for (std::size_t i = 0; i < keep.size(); ++i)
      vals.row(static_cast<Eigen::Index>(i)) = p.values.row(keep[i]);
    out.values = vals;
    return out;
  }

  Dataset out = detail::partial_to_dataset(p);

  if (strategy == RemediationKind::MeanImpute) {
    for (Eigen::Index j = 0; j < d; ++j) {
      double sum = 0;
      Eigen::Index count = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (!p.is_na(i, j)) {
          sum += p.values(i, j);
          ++count;
        }
      if (count == n) continue;
      if (count == 0)
        throw std::runtime_error("remediate: column '" + p.column_names[j] +
                                 "' has no observed values");
      double mean = sum / static_cast<double>(count);
      for (Eigen::Index i = 0; i < n; ++i)
        if (p.is_na(i, j)) out.values(i, j) = mean;
    }
    return out;
  }

  // linear regression imputation: regress each incomplete column on the
  // always-complete feature columns (plus intercept) using its observed rows.
  std::vector<Eigen::Index> incomplete, complete_cols;
  for (Eigen::Index j = 0; j < d; ++j) {
    bool has_na = false;
    for (Eigen::Index i = 0; i < n && !has_na; ++i)
      if (p.is_na(i, j)) has_na = true;
    if (has_na) {
      incomplete.push_back(j);
    } else if (opt.linear_use_response || static_cast<int>(j) != p.response_index) {
      complete_cols.push_back(j);
    }
  }
  if (incomplete.empty()) return out;
  if (complete_cols.empty())
    throw std::runtime_error("remediate: no fully observed regressor columns");

  bool have_intercept_col = out.intercept_added;
  const Eigen::Index pr =
      static_cast<Eigen::Index>(complete_cols.size()) + (have_intercept_col ? 0 : 1);
  Eigen::MatrixXd reg(n, pr);
  for (std::size_t k = 0; k < complete_cols.size(); ++k)
    reg.col(static_cast<Eigen::Index>(k)) = p.values.col(complete_cols[k]);
  if (!have_intercept_col) reg.col(pr - 1).setOnes();

  for (Eigen::Index j : incomplete) {
    std::vector<Eigen::Index> obs;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!p.is_na(i, j)) obs.push_back(i);
    if (static_cast<Eigen::Index>(obs.size()) < pr)
      throw std::runtime_error("remediate: too few observed rows (" +
                               std::to_string(obs.size()) + ") to impute column '" +
                               p.column_names[j] + "'");
    Eigen::MatrixXd Ao(static_cast<Eigen::Index>(obs.size()), pr);
    Eigen::VectorXd bo(static_cast<Eigen::Index>(obs.size()));
    for (std::size_t i = 0; i < obs.size(); ++i) {
      Ao.row(static_cast<Eigen::Index>(i)) = reg.row(obs[i]);
      bo[static_cast<Eigen::Index>(i)] = p.values(obs[i], j);
    }
    Eigen::VectorXd beta =
        weighted_ls_coeffs(Ao, bo, Eigen::VectorXd::Ones(Ao.rows()));
    for (Eigen::Index i = 0; i < n; ++i)
      if (p.is_na(i, j)) out.values(i, j) = reg.row(i).dot(beta);
  }
  return out;
}

struct VictimReport {
  RemediationKind strategy = RemediationKind::Cca;
  GlmFit fit;
  double target_p_value = 1.0;
  double l1_to_alpha = 0;
  double l1_to_complete = 0;
  double norm_l1_to_alpha = 0;
  double norm_l1_to_complete = 0;
  double audit_metric = 0;  // NMSE (gaussian) or accuracy (bernoulli)
  Eigen::VectorXd missing_rates;
};

inline double audit_score(const Eigen::VectorXd& theta, const Dataset& audit,
                          const GlmFamily& family) {
  Eigen::MatrixXd X = audit.design();
  Eigen::VectorXd y = audit.response();
  if (family.kind == FamilyKind::Gaussian) {
    double mse = (y - X * theta).squaredNorm() / static_cast<double>(y.size());
    double mean = y.mean();
    double var = (y.array() - mean).square().mean();
    return mse / var;  // NMSE
  }
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double pred = family.mean(X.row(i).dot(theta)) >= 0.5 ? 1.0 : 0.0;
    if (pred == y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

inline VictimReport victim_fit_report(const PartialDataset& p, RemediationKind strategy,
                                      const GlmFamily& family, const AttackTarget& target,
                                      const Eigen::VectorXd& theta_complete,
                                      const Dataset& audit, double ridge = 0.0,
                                      const RemediateOptions& opt = {}) {
  VictimReport rep;
  rep.strategy = strategy;

  Dataset imputed = remediate(p, strategy, opt);
  Eigen::MatrixXd X = imputed.design();
  Eigen::VectorXd y = imputed.response();
  WeightedGlmData wd = unit_weight_data(X, y);
  rep.fit = irls_fit(wd, family, ridge);
  wald_inference(wd, family, rep.fit);

  rep.target_p_value = rep.fit.p_values[target.target_index];
  double alpha_norm = target.theta_alpha.lpNorm<1>();
  rep.l1_to_alpha = (rep.fit.theta - target.theta_alpha).lpNorm<1>();
  rep.l1_to_complete = (rep.fit.theta - theta_complete).lpNorm<1>();
  rep.norm_l1_to_alpha = rep.l1_to_alpha / alpha_norm;
  rep.norm_l1_to_complete = rep.l1_to_complete / alpha_norm;
  rep.audit_metric = audit_score(rep.fit.theta, audit, family);

  rep.missing_rates.resize(p.cols());
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    Eigen::Index na = 0;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      if (p.is_na(i, j)) ++na;
    rep.missing_rates[j] = static_cast<double>(na) / static_cast<double>(p.rows());
  }
  return rep;
}

}  // namespace am
