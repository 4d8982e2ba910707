#pragma once

// Differentiable surrogates of the modeler's objective under CCA, mean
// imputation and regression-based imputation. The surrogate weighs imputed
// pseudo-rows by mask probabilities; estimators (conditional means, weighted
// least-squares coefficients) are themselves functions of the mechanism, and
// the adjoint methods propagate cotangents back to the mask distribution.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "am/dataset.hpp"
#include "am/glm.hpp"
#include "am/mechanism.hpp"

namespace am {

enum class RemediationKind { Cca, MeanImpute, LinearImpute };

inline const char* to_string(RemediationKind k) {
  switch (k) {
    case RemediationKind::Cca: return "cca";
    case RemediationKind::MeanImpute: return "mean";
    case RemediationKind::LinearImpute: return "linear";
  }
  return "?";
}

inline RemediationKind remediation_from_string(const std::string& s) {
  if (s == "cca") return RemediationKind::Cca;
  if (s == "mean") return RemediationKind::MeanImpute;
  if (s == "linear") return RemediationKind::LinearImpute;
  throw std::invalid_argument("unknown remediation kind '" + s + "'");
}

// pi_j(phi): marginal probability of observing masked column at position
// `pos` within M.
inline double observe_prob_pi(const Eigen::MatrixXd& probs, int pos, int m_size) {
  const Eigen::Index n = probs.rows();
  double total = 0.0;
  for (Eigen::Index k = 0; k < probs.cols(); ++k)
    if (mask_bit(static_cast<int>(k), pos, m_size) == 1) total += probs.col(k).sum();
  return total / static_cast<double>(n);
}

// Consistent estimator of E[Z_j | R_j = 1] for column values `z`.
inline double conditional_mean(const Eigen::VectorXd& z, const Eigen::MatrixXd& probs,
                               int pos, int m_size) {
  const Eigen::Index n = probs.rows();
  double q_total = 0.0;
  double weighted = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double q = 0.0;
    for (Eigen::Index k = 0; k < probs.cols(); ++k)
      if (mask_bit(static_cast<int>(k), pos, m_size) == 1) q += probs(i, k);
    q_total += q;
    weighted += z[i] * q;
  }
  if (q_total / static_cast<double>(n) <= 1e-8)
    throw std::runtime_error("conditional_mean: observation probability below floor");
  return weighted / q_total;
}

// beta_hat(phi): weighted least squares of b on A with per-row weights w,
// solved by LDLT of A^T W A with a diagonal jitter retry.
inline Eigen::VectorXd weighted_ls_coeffs(const Eigen::MatrixXd& A,
                                          const Eigen::VectorXd& b,
                                          const Eigen::VectorXd& w) {
  if (A.rows() != b.size() || A.rows() != w.size())
    throw std::invalid_argument("weighted_ls_coeffs: dimension mismatch");
  Eigen::MatrixXd C = A.transpose() * w.asDiagonal() * A;
  Eigen::VectorXd u = A.transpose() * (w.asDiagonal() * b);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(C);
  if (!lu.isInvertible()) {
    C.diagonal().array() += 1e-10;
    Eigen::FullPivLU<Eigen::MatrixXd> lu2(C);
    if (!lu2.isInvertible())
      throw std::runtime_error(
          "weighted_ls_coeffs: singular normal matrix even after 1e-10 jitter");
    return lu2.solve(u);
  }
  return lu.solve(u);
}

class SurrogateObjective {
 public:
  SurrogateObjective(const Dataset& data, std::vector<int> masked_set,
                     RemediationKind kind, GlmFamily family)
      : kind_(kind), family_(family), masked_set_(std::move(masked_set)) {
    n_ = data.rows();
    d_ = data.cols();
    for (int j : masked_set_) {
      if (j == data.response_index)
        throw std::invalid_argument("surrogate: response column cannot be masked");
      if (data.intercept_added && j == data.intercept_index)
        throw std::invalid_argument("surrogate: intercept column cannot be masked");
    }
    m_size_ = static_cast<int>(masked_set_.size());
    num_masks_ = 1 << m_size_;

    feature_cols_ = data.feature_columns();
    X_ = data.design();
    y_ = data.response();
    design_pos_.assign(static_cast<std::size_t>(d_), -1);
    for (std::size_t k = 0; k < feature_cols_.size(); ++k)
      design_pos_[static_cast<std::size_t>(feature_cols_[k])] = static_cast<int>(k);
    masked_design_pos_.resize(static_cast<std::size_t>(m_size_));
    masked_values_.resize(n_, m_size_);
    for (int pos = 0; pos < m_size_; ++pos) {
      int col = masked_set_[static_cast<std::size_t>(pos)];
      masked_design_pos_[static_cast<std::size_t>(pos)] = design_pos_[static_cast<std::size_t>(col)];
      masked_values_.col(pos) = data.values.col(col);
    }

    if (kind_ == RemediationKind::LinearImpute) {
      // regressors: always-observed feature columns (response excluded)
      for (int j : feature_cols_) {
        bool masked = false;
        for (int m : masked_set_)
          if (m == j) masked = true;
        if (!masked) regressor_cols_.push_back(j);
      }
      if (regressor_cols_.empty())
        throw std::invalid_argument("surrogate: linear imputation needs observed columns");
      A_.resize(n_, static_cast<Eigen::Index>(regressor_cols_.size()));
      for (std::size_t k = 0; k < regressor_cols_.size(); ++k)
        A_.col(static_cast<Eigen::Index>(k)) = data.values.col(regressor_cols_[k]);
    }
  }

  int num_masks() const { return num_masks_; }
  int m_size() const { return m_size_; }
  const std::vector<int>& masked_set() const { return masked_set_; }
  const Eigen::MatrixXd& design() const { return X_; }
  const Eigen::VectorXd& response() const { return y_; }
  const GlmFamily& family() const { return family_; }
  RemediationKind kind() const { return kind_; }

  // Everything derived from one mask distribution: per-column observation
  // probabilities q, the estimators, and the flattened weighted batch.
  struct Batch {
    Eigen::MatrixXd probs;       // N x K
    Eigen::MatrixXd q;           // N x |M|, P(R_j = 1 | z_i)
    Eigen::VectorXd pi;          // |M|
    Eigen::VectorXd mu;          // |M| (mean imputation)
    std::vector<Eigen::VectorXd> beta;      // per masked pos (linear imputation)
    std::vector<Eigen::MatrixXd> c_inv;     // (A^T W A)^-1 per masked pos
    WeightedGlmData wd;          // N*K (or N for CCA) pseudo-rows
  };

  Batch prepare(const Eigen::MatrixXd& probs) const {
    if (probs.rows() != n_ || probs.cols() != num_masks_)
      throw std::invalid_argument("surrogate: distribution shape mismatch");
    Batch b;
    b.probs = probs;
    b.q.resize(n_, m_size_);
    for (int pos = 0; pos < m_size_; ++pos) {
      b.q.col(pos).setZero();
      for (Eigen::Index k = 0; k < num_masks_; ++k)
        if (mask_bit(static_cast<int>(k), pos, m_size_) == 1)
          b.q.col(pos) += probs.col(k);
    }
    b.pi = b.q.colwise().mean().transpose();

    if (kind_ == RemediationKind::MeanImpute) {
      b.mu.resize(m_size_);
      for (int pos = 0; pos < m_size_; ++pos) {
        if (b.pi[pos] <= 1e-8)
          throw std::runtime_error("surrogate: observation probability below 1e-8 floor");
        b.mu[pos] = masked_values_.col(pos).dot(b.q.col(pos)) / b.q.col(pos).sum();
      }
    } else if (kind_ == RemediationKind::LinearImpute) {
      b.beta.resize(static_cast<std::size_t>(m_size_));
      b.c_inv.resize(static_cast<std::size_t>(m_size_));
      for (int pos = 0; pos < m_size_; ++pos) {
        Eigen::VectorXd w = b.q.col(pos);
        Eigen::MatrixXd C = A_.transpose() * w.asDiagonal() * A_;
        Eigen::FullPivLU<Eigen::MatrixXd> lu(C);
        if (!lu.isInvertible()) {
          C.diagonal().array() += 1e-10;
          lu.compute(C);
          if (!lu.isInvertible())
            throw std::runtime_error("surrogate: singular weighted normal matrix");
        }
        b.c_inv[static_cast<std::size_t>(pos)] = lu.inverse();
        b.beta[static_cast<std::size_t>(pos)] =
            b.c_inv[static_cast<std::size_t>(pos)] *
            (A_.transpose() * (w.asDiagonal() * masked_values_.col(pos)));
      }
    }

    build_weighted_batch(b);
    return b;
  }

  double value(const Batch& b, const Eigen::VectorXd& theta) const {
    return weighted_objective(b.wd, theta, family_);
  }

  Eigen::VectorXd theta_gradient(const Batch& b, const Eigen::VectorXd& theta) const {
    return weighted_gradient(b.wd, theta, family_);
  }

  Eigen::MatrixXd theta_hessian(const Batch& b, const Eigen::VectorXd& theta) const {
    return weighted_hessian(b.wd, theta, family_);
  }

  GlmFit inner_fit(const Batch& b, double lambda_lower, double tol = 1e-8,
                   int max_iter = 100) const {
    return irls_fit(b.wd, family_, lambda_lower, tol, max_iter);
  }

  // d f_tilde / d probs.
  Eigen::MatrixXd prob_adjoint_value(const Batch& b, const Eigen::VectorXd& theta) const {
    return prob_adjoint(b, theta, nullptr);
  }

  // d <grad_theta f_tilde, v> / d probs, theta held fixed. This is the B-block
  // VJP the implicit-function-theorem step needs.
  Eigen::MatrixXd prob_adjoint_grad_dot(const Batch& b, const Eigen::VectorXd& theta,
                                        const Eigen::VectorXd& v) const {
    return prob_adjoint(b, theta, &v);
  }

 private:
  // The all-zeros full-row mask is excluded from the imputation sum; with the
  // response always observed this can only trigger when M covers every column.
  bool mask_excluded(Eigen::Index k) const {
    return k == 0 && static_cast<Eigen::Index>(m_size_) == d_;
  }

  Eigen::VectorXd imputed_design_row(const Batch& b, Eigen::Index i, Eigen::Index k) const {
    Eigen::VectorXd x = X_.row(i).transpose();
    for (int pos = 0; pos < m_size_; ++pos) {
      if (mask_bit(static_cast<int>(k), pos, m_size_) == 1) continue;
      int pj = masked_design_pos_[static_cast<std::size_t>(pos)];
      if (kind_ == RemediationKind::MeanImpute) {
        x[pj] = b.mu[pos];
      } else {
        x[pj] = A_.row(i).dot(b.beta[static_cast<std::size_t>(pos)]);
      }
    }
    return x;
  }

  void build_weighted_batch(Batch& b) const {
    const double inv_n = 1.0 / static_cast<double>(n_);
    if (kind_ == RemediationKind::Cca) {
      b.wd.X = X_;
      b.wd.y = y_;
      b.wd.w = b.probs.col(num_masks_ - 1) * inv_n;
      return;
    }
    const Eigen::Index rows = n_ * num_masks_;
    b.wd.X.resize(rows, X_.cols());
    b.wd.y.resize(rows);
    b.wd.w.resize(rows);
    for (Eigen::Index i = 0; i < n_; ++i) {
      for (Eigen::Index k = 0; k < num_masks_; ++k) {
        Eigen::Index r = i * num_masks_ + k;
        b.wd.y[r] = y_[i];
        if (mask_excluded(k)) {
          b.wd.X.row(r) = X_.row(i);
          b.wd.w[r] = 0.0;
          continue;
        }
        b.wd.X.row(r) = imputed_design_row(b, i, k).transpose();
        b.wd.w[r] = b.probs(i, k) * inv_n;
      }
    }
  }

  // Shared adjoint: v == nullptr differentiates f_tilde itself, otherwise
  // <grad_theta f_tilde, v>. Both decompose into a direct omega path and an
  // estimator path that chains through mu_hat(phi) or beta_hat(phi).
  Eigen::MatrixXd prob_adjoint(const Batch& b, const Eigen::VectorXd& theta,
                               const Eigen::VectorXd* v) const {
    const double inv_n = 1.0 / static_cast<double>(n_);
    const double s2 = family_.dispersion * family_.dispersion;
    Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(n_, num_masks_);

    if (kind_ == RemediationKind::Cca) {
      for (Eigen::Index i = 0; i < n_; ++i) {
        double eta = X_.row(i).dot(theta);
        double s;
        if (v == nullptr) {
          s = (eta * y_[i] - family_.partition(eta)) / s2;
        } else {
          s = X_.row(i).dot(*v) * (y_[i] - family_.mean(eta)) / s2;
        }
        adj(i, num_masks_ - 1) = inv_n * s;
      }
      return adj;
    }

    Eigen::VectorXd dmu = Eigen::VectorXd::Zero(m_size_);
    std::vector<Eigen::VectorXd> dbeta;
    if (kind_ == RemediationKind::LinearImpute) {
      dbeta.assign(static_cast<std::size_t>(m_size_),
                   Eigen::VectorXd::Zero(A_.cols()));
    }

    for (Eigen::Index i = 0; i < n_; ++i) {
      for (Eigen::Index k = 0; k < num_masks_; ++k) {
        if (mask_excluded(k)) continue;
        const Eigen::Index r = i * num_masks_ + k;
        const auto xhat = b.wd.X.row(r);
        double eta = xhat.dot(theta);
        double mu_eta = family_.mean(eta);
        double s;                 // per-term scalar
        Eigen::VectorXd dx;       // d s / d xhat, lazily built
        bool need_dx = false;
        for (int pos = 0; pos < m_size_ && !need_dx; ++pos)
          if (mask_bit(static_cast<int>(k), pos, m_size_) == 0) need_dx = true;

        if (v == nullptr) {
          s = (eta * y_[i] - family_.partition(eta)) / s2;
          if (need_dx) dx = theta * ((y_[i] - mu_eta) / s2);
        } else {
          double xv = xhat.dot(*v);
          s = xv * (y_[i] - mu_eta) / s2;
          if (need_dx)
            dx = ((*v) * (y_[i] - mu_eta) - xv * family_.variance(eta) * theta) / s2;
        }
        adj(i, k) += inv_n * s;  // omega path

        if (!need_dx) continue;
        const double scale = b.probs(i, k) * inv_n;
        for (int pos = 0; pos < m_size_; ++pos) {
          if (mask_bit(static_cast<int>(k), pos, m_size_) == 1) continue;
          int pj = masked_design_pos_[static_cast<std::size_t>(pos)];
          if (kind_ == RemediationKind::MeanImpute) {
            dmu[pos] += scale * dx[pj];
          } else {
            dbeta[static_cast<std::size_t>(pos)].noalias() +=
                scale * dx[pj] * A_.row(i).transpose();
          }
        }
      }
    }

    // estimator path: chain d mu / d q or d beta / d w back onto the masks
    // that observe the column.
    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(n_, m_size_);
    if (kind_ == RemediationKind::MeanImpute) {
      for (int pos = 0; pos < m_size_; ++pos) {
        if (dmu[pos] == 0.0) continue;
        double q_total = b.q.col(pos).sum();
        dq.col(pos) =
            dmu[pos] * (masked_values_.col(pos).array() - b.mu[pos]) / q_total;
      }
    } else {
      for (int pos = 0; pos < m_size_; ++pos) {
        const auto& db = dbeta[static_cast<std::size_t>(pos)];
        if (db.isZero(0.0)) continue;
        // d beta / d w_i = C^-1 a_i (b_i - a_i^T beta)
        Eigen::VectorXd cdb = b.c_inv[static_cast<std::size_t>(pos)] * db;
        Eigen::VectorXd resid =
            masked_values_.col(pos) - A_ * b.beta[static_cast<std::size_t>(pos)];
        dq.col(pos) = (A_ * cdb).cwiseProduct(resid);
      }
    }
    for (int pos = 0; pos < m_size_; ++pos)
      for (Eigen::Index k = 0; k < num_masks_; ++k)
        if (mask_bit(static_cast<int>(k), pos, m_size_) == 1)
          adj.col(k) += dq.col(pos);

    return adj;
  }

  RemediationKind kind_;
  GlmFamily family_;
  std::vector<int> masked_set_;
  Eigen::Index n_ = 0, d_ = 0;
  int m_size_ = 0;
  int num_masks_ = 0;
  std::vector<int> feature_cols_;
  std::vector<int> design_pos_;
  std::vector<int> masked_design_pos_;
  Eigen::MatrixXd X_;       // design (features, response dropped)
  Eigen::VectorXd y_;
  Eigen::MatrixXd masked_values_;  // N x |M| raw values of the maskable columns
  std::vector<int> regressor_cols_;
  Eigen::MatrixXd A_;       // always-observed regressors (linear imputation)
};

// Convenience free functions mirroring the per-operation contracts.

inline double cca_objective(const Dataset& data, const Eigen::VectorXd& theta,
                            const Eigen::MatrixXd& probs,
                            const std::vector<int>& masked_set,
                            const GlmFamily& family) {
  SurrogateObjective s(data, masked_set, RemediationKind::Cca, family);
  return s.value(s.prepare(probs), theta);
}

inline double imputation_objective(const Dataset& data, const Eigen::VectorXd& theta,
                                   const Eigen::MatrixXd& probs,
                                   const std::vector<int>& masked_set,
                                   RemediationKind kind, const GlmFamily& family) {
  if (kind == RemediationKind::Cca)
    throw std::invalid_argument("imputation_objective: kind must be an imputation");
  SurrogateObjective s(data, masked_set, kind, family);
  return s.value(s.prepare(probs), theta);
}

// Single-row imputation given precomputed estimators (mean imputation form).
inline Eigen::VectorXd imputed_row_mean(const Eigen::VectorXd& z,
                                        const std::vector<int>& masked_set,
                                        const std::vector<int>& mask_bits,
                                        const Eigen::VectorXd& mu) {
  if (mask_bits.size() != masked_set.size() ||
      static_cast<int>(masked_set.size()) != mu.size())
    throw std::invalid_argument("imputed_row_mean: estimator coverage mismatch");
  Eigen::VectorXd out = z;
  for (std::size_t pos = 0; pos < masked_set.size(); ++pos)
    if (mask_bits[pos] == 0) out[masked_set[pos]] = mu[static_cast<Eigen::Index>(pos)];
  return out;
}

}  // namespace am
