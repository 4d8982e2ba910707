#pragma once

// Canonical-form GLM families (gaussian-identity, bernoulli-logit), weighted
// score/gradient/Hessian, the missingness-weighted IRLS solver, Wald
// inference, constrained adversarial targets and KL distance between fits.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "am/dataset.hpp"

namespace am {

enum class FamilyKind { Gaussian, Bernoulli };

struct GlmFamily {
  FamilyKind kind = FamilyKind::Gaussian;
  double dispersion = 1.0;  // sigma; fixed to 1 for bernoulli

  // partition function A and derivatives
  double partition(double eta) const {
    if (kind == FamilyKind::Gaussian) return 0.5 * eta * eta;
    // log(1+e^eta), overflow-safe
    return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
  }
  double mean(double eta) const {  // A'
    if (kind == FamilyKind::Gaussian) return eta;
    return 1.0 / (1.0 + std::exp(-eta));
  }
  double variance(double eta) const {  // A''
    if (kind == FamilyKind::Gaussian) return 1.0;
    double p = mean(eta);
    return p * (1.0 - p);
  }

  static GlmFamily gaussian(double sigma = 1.0) { return {FamilyKind::Gaussian, sigma}; }
  static GlmFamily bernoulli() { return {FamilyKind::Bernoulli, 1.0}; }
};

// Per-example log-likelihood up to the theta-independent base measure.
inline double glm_score(const Eigen::VectorXd& x, double y, const Eigen::VectorXd& theta,
                        const GlmFamily& family) {
  if (x.size() != theta.size())
    throw std::invalid_argument("glm_score: dimension mismatch");
  if (!x.allFinite() || !std::isfinite(y) || !theta.allFinite())
    throw std::invalid_argument("glm_score: non-finite input");
  double eta = theta.dot(x);
  return (eta * y - family.partition(eta)) / family.dispersion;
}

// Flattened per-(row, mask) batch: rows of X are (possibly imputed) feature
// vectors, w holds the mechanism weights. All scaling lives in w.
struct WeightedGlmData {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd w;

  void validate() const {
    if (X.rows() != y.size() || X.rows() != w.size())
      throw std::invalid_argument("WeightedGlmData: inconsistent row counts");
    if (!w.allFinite() || (w.array() < 0).any())
      throw std::invalid_argument("WeightedGlmData: weights must be finite and >= 0");
  }
};

inline double weighted_objective(const WeightedGlmData& d, const Eigen::VectorXd& theta,
                                 const GlmFamily& family) {
  d.validate();
  const double s2 = family.dispersion * family.dispersion;
  double f = 0.0;
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    if (d.w[i] == 0.0) continue;
    double eta = d.X.row(i).dot(theta);
    f += d.w[i] * (eta * d.y[i] - family.partition(eta));
  }
  return f / s2;
}

inline Eigen::VectorXd weighted_gradient(const WeightedGlmData& d,
                                         const Eigen::VectorXd& theta,
                                         const GlmFamily& family) {
  d.validate();
  if (d.X.cols() != theta.size())
    throw std::invalid_argument("weighted_gradient: dimension mismatch");
  const double s2 = family.dispersion * family.dispersion;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    if (d.w[i] == 0.0) continue;
    double eta = d.X.row(i).dot(theta);
    g.noalias() += d.w[i] * (d.y[i] - family.mean(eta)) * d.X.row(i).transpose();
  }
  return g / s2;
}

inline Eigen::MatrixXd weighted_hessian(const WeightedGlmData& d,
                                        const Eigen::VectorXd& theta,
                                        const GlmFamily& family) {
  d.validate();
  if (d.X.cols() != theta.size())
    throw std::invalid_argument("weighted_hessian: dimension mismatch");
  const double s2 = family.dispersion * family.dispersion;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(theta.size(), theta.size());
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    if (d.w[i] == 0.0) continue;
    double eta = d.X.row(i).dot(theta);
    h.noalias() -= d.w[i] * family.variance(eta) * d.X.row(i).transpose() * d.X.row(i);
  }
  return h / s2;
}

struct GlmFit {
  Eigen::VectorXd theta;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd p_values;
  double log_likelihood = 0.0;
  bool converged = false;
  int iterations = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["coefficients"] = std::vector<double>(theta.data(), theta.data() + theta.size());
    j["p_values"] = std::vector<double>(p_values.data(), p_values.data() + p_values.size());
    std::vector<std::vector<double>> cov;
    for (Eigen::Index i = 0; i < covariance.rows(); ++i)
      cov.emplace_back(covariance.row(i).begin(), covariance.row(i).end());
    j["covariance"] = cov;
    j["log_likelihood"] = log_likelihood;
    j["converged"] = converged;
    j["iterations"] = iterations;
    return j;
  }
};

// Two-sided normal tail probability via erfc.
inline double two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

// Newton/IRLS on the weighted objective, started at theta = 0. The ridge term
// -lambda_lower * ||theta||^2 / 2 covers all coefficients including the
// intercept. Stops on the relative change of the penalized objective.
inline GlmFit irls_fit(const WeightedGlmData& d, const GlmFamily& family,
                       double lambda_lower = 0.0, double tol = 1e-8,
                       int max_iter = 100) {
  d.validate();
  if (d.w.sum() <= 0.0)
    throw std::invalid_argument("irls_fit: weights are all zero");
  const Eigen::Index p = d.X.cols();
  GlmFit fit;
  fit.theta = Eigen::VectorXd::Zero(p);

  auto penalized = [&](const Eigen::VectorXd& th) {
    return weighted_objective(d, th, family) - 0.5 * lambda_lower * th.squaredNorm();
  };

  double f_prev = penalized(fit.theta);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd g = weighted_gradient(d, fit.theta, family) - lambda_lower * fit.theta;
    if (g.norm() <= 1e-12 * (1.0 + fit.theta.norm())) {
      fit.converged = true;
      fit.iterations = it;
      break;
    }
    Eigen::MatrixXd hn = -weighted_hessian(d, fit.theta, family);
    hn.diagonal().array() += lambda_lower;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(hn);
    if (!lu.isInvertible()) {
      if (lambda_lower == 0.0)
        throw std::runtime_error(
            "irls_fit: singular Hessian; the design is rank deficient, consider a "
            "small lower-level ridge");
      throw std::runtime_error("irls_fit: singular Hessian despite ridge");
    }
    fit.theta += lu.solve(g);
    fit.iterations = it + 1;
    double f = penalized(fit.theta);
    if (!std::isfinite(f))
      throw std::runtime_error("irls_fit: objective diverged to non-finite value");
    if (std::abs(f - f_prev) < tol * std::abs(f_prev)) {
      f_prev = f;
      break;
    }
    f_prev = f;
  }
  fit.log_likelihood = weighted_objective(d, fit.theta, family);
  Eigen::VectorXd g_final =
      weighted_gradient(d, fit.theta, family) - lambda_lower * fit.theta;
  fit.converged = g_final.norm() <= 1e-6 * (1.0 + fit.theta.norm());
  return fit;
}

// Wald covariance and two-sided p-values at theta. For the gaussian family the
// scale is estimated from the weighted residual sum of squares.
inline void wald_inference(const WeightedGlmData& d, const GlmFamily& family,
                           GlmFit& fit) {
  d.validate();
  const Eigen::Index p = d.X.cols();
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);  // X^T diag(w A'') X
  double rss = 0.0;
  double wsum = 0.0;
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    if (d.w[i] == 0.0) continue;
    double eta = d.X.row(i).dot(fit.theta);
    info.noalias() +=
        d.w[i] * family.variance(eta) * d.X.row(i).transpose() * d.X.row(i);
    double res = d.y[i] - eta;
    rss += d.w[i] * res * res;
    wsum += d.w[i];
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
  if (!lu.isInvertible())
    throw std::runtime_error("wald_inference: singular information matrix");
  Eigen::MatrixXd inv = lu.inverse();
  if (family.kind == FamilyKind::Gaussian) {
    double dof = wsum - static_cast<double>(p);
    if (dof <= 0.0)
      throw std::runtime_error("wald_inference: not enough rows to estimate the scale");
    inv *= rss / dof;
  }
  fit.covariance = 0.5 * (inv + inv.transpose());
  fit.p_values.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    double se = std::sqrt(std::max(fit.covariance(j, j), 0.0));
    fit.p_values[j] = se > 0.0 ? two_sided_p(fit.theta[j] / se) : 0.0;
  }
}

inline WeightedGlmData unit_weight_data(const Eigen::MatrixXd& X,
                                        const Eigen::VectorXd& y) {
  return {X, y, Eigen::VectorXd::Ones(X.rows())};
}

// Complete-data fit with inference.
inline GlmFit glm_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const GlmFamily& family, double ridge = 0.0) {
  WeightedGlmData d = unit_weight_data(X, y);
  GlmFit fit = irls_fit(d, family, ridge);
  wald_inference(d, family, fit);
  return fit;
}

struct AttackTarget {
  Eigen::VectorXd theta_alpha;   // design-space coefficients, exactly 0 at target
  int target_index = -1;         // position within the design
  std::vector<int> masked_set;   // dataset column indices the mechanism may hide
};

// Constrained MLE with the target coefficient pinned to zero: fit on the
// design without column t, re-insert 0.
inline AttackTarget constrained_target(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                       const GlmFamily& family, int t,
                                       double ridge = 0.0) {
  if (t < 0 || t >= X.cols())
    throw std::invalid_argument("constrained_target: target index out of range");
  Eigen::MatrixXd Xr(X.rows(), X.cols() - 1);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    if (j != t) Xr.col(k++) = X.col(j);
  GlmFit fit = irls_fit(unit_weight_data(Xr, y), family, ridge);
  AttackTarget target;
  target.target_index = t;
  target.theta_alpha = Eigen::VectorXd::Zero(X.cols());
  k = 0;
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    if (j != t) target.theta_alpha[j] = fit.theta[k++];
  return target;
}

// Mean KL divergence over the empirical feature distribution,
// KL(P(y|x; theta_alpha) || P(y|x; theta_tilde)). Gaussian uses sigma = 1.
inline double kl_distance(const Eigen::VectorXd& theta_tilde,
                          const Eigen::VectorXd& theta_alpha, const Eigen::MatrixXd& X,
                          const GlmFamily& family) {
  if (theta_tilde.size() != X.cols() || theta_alpha.size() != X.cols())
    throw std::invalid_argument("kl_distance: dimension mismatch");
  const Eigen::Index n = X.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double ea = X.row(i).dot(theta_alpha);
    double et = X.row(i).dot(theta_tilde);
    if (family.kind == FamilyKind::Gaussian) {
      double diff = ea - et;
      total += 0.5 * diff * diff;
    } else {
      double pa = 1.0 / (1.0 + std::exp(-ea));
      double pt = 1.0 / (1.0 + std::exp(-et));
      pt = std::clamp(pt, 1e-12, 1.0 - 1e-12);
      pa = std::clamp(pa, 1e-15, 1.0 - 1e-15);
      total += pa * std::log(pa / pt) + (1.0 - pa) * std::log((1.0 - pa) / (1.0 - pt));
    }
  }
  return total / static_cast<double>(n);
}

// d Delta / d theta_tilde for the KL distance above. Both families reduce to
// x * (A'(eta_tilde) - A'(eta_alpha)) in canonical form.
inline Eigen::VectorXd kl_distance_gradient(const Eigen::VectorXd& theta_tilde,
                                            const Eigen::VectorXd& theta_alpha,
                                            const Eigen::MatrixXd& X,
                                            const GlmFamily& family) {
  const Eigen::Index n = X.rows();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(X.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    double ea = X.row(i).dot(theta_alpha);
    double et = X.row(i).dot(theta_tilde);
    g.noalias() += (family.mean(et) - family.mean(ea)) * X.row(i).transpose();
  }
  return g / static_cast<double>(n);
}

}  // namespace am
