#pragma once

// BLAMM: gradient descent on the adversary's upper loss. Each epoch re-solves
// the inner (simulated modeler) problem from zero, evaluates
// l = Delta + lambda * Omega, and assembles the total mechanism gradient with
// the implicit-function-theorem vector-Jacobian product; the B block of the
// argmax Jacobian is never materialized.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "am/csv.hpp"
#include "am/glm.hpp"
#include "am/mechanism.hpp"
#include "am/remediation.hpp"

namespace am {

struct BilevelConfig {
  double lambda_upper = 0.01;  // missingness penalty
  double lambda_lower = 0.0;   // inner ridge
  double learning_rate = 0.01;
  int epochs = 200;
  double warm_start_fraction = 0.6;   // LinearImpute: CCA phase share
  double post_switch_lr_divisor = 100.0;
  std::uint64_t seed = 0;
  RemediationKind kind = RemediationKind::MeanImpute;
  int hidden_dim = 100;

  void validate() const {
    if (!(learning_rate > 0)) throw std::invalid_argument("config: learning_rate must be > 0");
    if (warm_start_fraction < 0 || warm_start_fraction > 1)
      throw std::invalid_argument("config: warm_start_fraction must lie in [0,1]");
    if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (lambda_upper < 0 || lambda_lower < 0)
      throw std::invalid_argument("config: regularization must be nonnegative");
  }
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0;
  double delta = 0;
  double missing_fraction = 0;
  double grad_norm = 0;
  Eigen::VectorXd theta_tilde;
};

struct TrainTrace {
  std::vector<EpochRecord> records;

  void write_csv(const std::string& path) const {
    csv::Table t;
    t.header = {"epoch", "loss", "delta", "missing_fraction", "grad_norm"};
    for (const auto& r : records)
      t.rows.push_back({std::to_string(r.epoch), csv::format_value(r.loss),
                        csv::format_value(r.delta), csv::format_value(r.missing_fraction),
                        csv::format_value(r.grad_norm)});
    csv::write_file(path, t);
  }
};

// theta_tilde = argmax of the surrogate for the current mechanism.
inline GlmFit inner_solve(const SurrogateObjective& surrogate,
                          const SurrogateObjective::Batch& batch, double lambda_lower) {
  GlmFit fit = surrogate.inner_fit(batch, lambda_lower);
  if (!fit.converged)
    throw std::runtime_error("inner_solve: IRLS did not converge after " +
                             std::to_string(fit.iterations) + " iterations");
  return fit;
}

inline double upper_loss(double delta, double missing_fraction, double lambda_upper) {
  return delta + lambda_upper * missing_fraction;
}

// IFT contribution in mask-probability space: solve A u = v with A the
// (penalized) inner Hessian, then return d<grad_theta f, -u>/d probs.
inline Eigen::MatrixXd ift_vjp(const SurrogateObjective& surrogate,
                               const SurrogateObjective::Batch& batch,
                               const Eigen::VectorXd& theta_tilde, double lambda_lower,
                               const Eigen::VectorXd& v) {
  Eigen::MatrixXd a = surrogate.theta_hessian(batch, theta_tilde);
  a.diagonal().array() -= lambda_lower;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible())
    throw std::runtime_error(
        "ift_vjp: singular inner Hessian; consider a lower-level ridge");
  Eigen::VectorXd u = lu.solve(v);
  return surrogate.prob_adjoint_grad_dot(batch, theta_tilde, -u);
}

struct UpperEvaluation {
  double loss = 0;
  double delta = 0;
  double missing_fraction = 0;
  Eigen::VectorXd theta_tilde;
  Eigen::MatrixXd prob_adjoint;  // d loss / d probs
};

// One full evaluation of the upper loss and its mask-probability adjoint for a
// fixed distribution. Delta depends on phi only through theta_tilde, so the
// direct term covers Omega alone.
inline UpperEvaluation evaluate_upper(const SurrogateObjective& surrogate,
                                      const Eigen::MatrixXd& probs,
                                      const AttackTarget& target,
                                      const BilevelConfig& cfg, Eigen::Index d_cols) {
  SurrogateObjective::Batch batch = surrogate.prepare(probs);
  GlmFit fit = inner_solve(surrogate, batch, cfg.lambda_lower);

  UpperEvaluation ev;
  ev.theta_tilde = fit.theta;
  ev.delta = kl_distance(fit.theta, target.theta_alpha, surrogate.design(),
                         surrogate.family());
  MaskDistribution dist_view;
  dist_view.probs = probs;
  ev.missing_fraction =
      expected_missing_fraction(dist_view, d_cols, surrogate.m_size());
  ev.loss = upper_loss(ev.delta, ev.missing_fraction, cfg.lambda_upper);

  Eigen::VectorXd v = kl_distance_gradient(fit.theta, target.theta_alpha,
                                           surrogate.design(), surrogate.family());
  ev.prob_adjoint =
      cfg.lambda_upper *
      expected_missing_fraction_adjoint(dist_view, d_cols, surrogate.m_size());
  ev.prob_adjoint += ift_vjp(surrogate, batch, fit.theta, cfg.lambda_lower, v);
  return ev;
}

struct BlammResult {
  MechanismNet net;
  TrainTrace trace;
};

// data: the attacker's working dataset (standardized, intercept added);
// inputs: the rows fed to the mechanism network.
inline BlammResult blamm_train(const Dataset& data, const Eigen::MatrixXd& inputs,
                               const AttackTarget& target, const GlmFamily& family,
                               const BilevelConfig& cfg) {
  cfg.validate();
  if (inputs.rows() != data.rows())
    throw std::invalid_argument("blamm_train: inputs/data row mismatch");
  if (target.masked_set.empty())
    throw std::invalid_argument("blamm_train: masked set is empty");

  BlammResult out;
  out.net = MechanismNet::init(target.masked_set, static_cast<int>(inputs.cols()),
                               cfg.hidden_dim, cfg.seed);

  const bool staged = cfg.kind == RemediationKind::LinearImpute;
  const int switch_epoch =
      staged ? static_cast<int>(std::ceil(cfg.warm_start_fraction * cfg.epochs)) : 0;

  SurrogateObjective main_surrogate(data, target.masked_set, cfg.kind, family);
  SurrogateObjective warm_surrogate(data, target.masked_set, RemediationKind::Cca,
                                    family);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool warm = staged && epoch < switch_epoch;
    const SurrogateObjective& surrogate = warm ? warm_surrogate : main_surrogate;
    const double lr =
        (staged && !warm) ? cfg.learning_rate / cfg.post_switch_lr_divisor
                          : cfg.learning_rate;

    MaskDistribution dist = mechanism_forward(out.net, inputs);
    UpperEvaluation ev =
        evaluate_upper(surrogate, dist.probs, target, cfg, data.cols());
    if (!std::isfinite(ev.loss))
      throw std::runtime_error("blamm_train: loss diverged at epoch " +
                               std::to_string(epoch));

    MechanismGrad grad = mechanism_backward(out.net, inputs, dist, ev.prob_adjoint);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = ev.loss;
    rec.delta = ev.delta;
    rec.missing_fraction = ev.missing_fraction;
    rec.grad_norm = grad.norm();
    rec.theta_tilde = ev.theta_tilde;
    out.trace.records.push_back(std::move(rec));

    apply_update(out.net, grad, lr);
  }
  return out;
}

}  // namespace am
