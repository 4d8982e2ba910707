#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "am/bilevel.hpp"

using namespace am;

namespace {

Dataset toy_data(int n, std::uint64_t seed, FamilyKind kind = FamilyKind::Gaussian) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Dataset d;
  d.values.resize(n, 4);
  d.column_names = {"x1", "x2", "(intercept)", "y"};
  d.feature_kinds.assign(4, FeatureKind::Continuous);
  d.response_index = 3;
  d.intercept_added = true;
  d.intercept_index = 2;
  for (int i = 0; i < n; ++i) {
    double x1 = gauss(rng);
    double x2 = 0.6 * x1 + 0.8 * gauss(rng);
    d.values(i, 0) = x1;
    d.values(i, 1) = x2;
    d.values(i, 2) = 1.0;
    double eta = 1.2 * x1 - 0.4 * x2 + 0.3;
    if (kind == FamilyKind::Gaussian)
      d.values(i, 3) = eta + 0.4 * gauss(rng);
    else
      d.values(i, 3) = unif(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
  }
  return d;
}

Eigen::MatrixXd mech_inputs(const Dataset& d) {
  Eigen::MatrixXd z(d.rows(), d.cols() - 1);
  int k = 0;
  for (int j = 0; j < d.cols(); ++j) {
    if (d.intercept_added && j == d.intercept_index) continue;
    z.col(k++) = d.values.col(j);
  }
  return z;
}

AttackTarget make_target(const Dataset& d, const GlmFamily& fam) {
  AttackTarget t = constrained_target(d.design(), d.response(), fam, 0);
  t.masked_set = {0};
  return t;
}

}  // namespace

TEST_CASE("upper_loss hand values") {
  CHECK_THAT(upper_loss(0.01, 0.05, 0.05), Catch::Matchers::WithinAbs(0.0125, 1e-15));
  CHECK(upper_loss(0.3, 0.5, 0.0) == 0.3);
  CHECK(upper_loss(0.0, 1.0, 0.01) == 0.01);
}

TEST_CASE("evaluate_upper matches the closed-form one-dimensional CCA oracle") {
  // single regressor x, no intercept: theta_tilde(q) = sum q x y / sum q x^2
  const int n = 9;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  d.values.resize(n, 2);
  d.column_names = {"x", "y"};
  d.feature_kinds.assign(2, FeatureKind::Continuous);
  d.response_index = 1;
  for (int i = 0; i < n; ++i) {
    d.values(i, 0) = gauss(rng) + 1.5;
    d.values(i, 1) = 0.8 * d.values(i, 0) + 0.3 * gauss(rng);
  }
  Eigen::VectorXd x = d.values.col(0), y = d.values.col(1);

  GlmFamily fam = GlmFamily::gaussian();
  AttackTarget target;
  target.theta_alpha = Eigen::VectorXd::Constant(1, 0.25);
  target.target_index = 0;
  target.masked_set = {0};

  BilevelConfig cfg;
  cfg.kind = RemediationKind::Cca;
  cfg.lambda_upper = 0.05;
  cfg.lambda_lower = 0.0;

  Eigen::MatrixXd probs(n, 2);
  std::uniform_real_distribution<double> unif(0.2, 0.8);
  for (int i = 0; i < n; ++i) {
    probs(i, 1) = unif(rng);
    probs(i, 0) = 1.0 - probs(i, 1);
  }

  SurrogateObjective surrogate(d, {0}, RemediationKind::Cca, fam);
  UpperEvaluation ev = evaluate_upper(surrogate, probs, target, cfg, d.cols());

  double sqx = (probs.col(1).array() * x.array().square()).sum();
  double sxy = (probs.col(1).array() * x.array() * y.array()).sum();
  double theta = sxy / sqx;
  CHECK_THAT(ev.theta_tilde[0], Catch::Matchers::WithinAbs(theta, 1e-10));

  double c = x.array().square().mean();
  double alpha = target.theta_alpha[0];
  double delta = 0.5 * c * (theta - alpha) * (theta - alpha);
  CHECK_THAT(ev.delta, Catch::Matchers::WithinAbs(delta, 1e-10));
  double omega = probs.col(0).mean() / 2.0;  // one of two columns maskable
  CHECK_THAT(ev.missing_fraction, Catch::Matchers::WithinAbs(omega, 1e-12));
  CHECK_THAT(ev.loss, Catch::Matchers::WithinAbs(delta + 0.05 * omega, 1e-10));

  for (int i = 0; i < n; ++i) {
    double dtheta_dq = (x[i] * y[i] - x[i] * x[i] * theta) / sqx;
    double expect_obs = c * (theta - alpha) * dtheta_dq;
    double expect_hide = 0.05 / (2.0 * n);
    CHECK_THAT(ev.prob_adjoint(i, 1), Catch::Matchers::WithinAbs(expect_obs, 1e-8));
    CHECK_THAT(ev.prob_adjoint(i, 0), Catch::Matchers::WithinAbs(expect_hide, 1e-12));
  }
}

TEST_CASE("total upper gradient through the IFT passes finite differences") {
  GlmFamily fam = GlmFamily::gaussian();
  for (auto kind :
       {RemediationKind::Cca, RemediationKind::MeanImpute, RemediationKind::LinearImpute}) {
    Dataset d = toy_data(14, 5 + static_cast<int>(kind));
    Eigen::MatrixXd inputs = mech_inputs(d);
    AttackTarget target = make_target(d, fam);
    BilevelConfig cfg;
    cfg.kind = kind;
    cfg.lambda_upper = 0.03;
    cfg.lambda_lower = 1e-7;
    SurrogateObjective surrogate(d, target.masked_set, kind, fam);
    MechanismNet net = MechanismNet::init(target.masked_set,
                                          static_cast<int>(inputs.cols()), 3, 11);

    auto loss = [&]() {
      MaskDistribution dist = mechanism_forward(net, inputs);
      return evaluate_upper(surrogate, dist.probs, target, cfg, d.cols()).loss;
    };
    MaskDistribution dist = mechanism_forward(net, inputs);
    UpperEvaluation ev = evaluate_upper(surrogate, dist.probs, target, cfg, d.cols());
    MechanismGrad g = mechanism_backward(net, inputs, dist, ev.prob_adjoint);

    const double h = 1e-5;
    auto check_block = [&](auto& block, const auto& gblock) {
      for (Eigen::Index i = 0; i < block.rows(); ++i)
        for (Eigen::Index j = 0; j < block.cols(); ++j) {
          double keep = block(i, j);
          block(i, j) = keep + h;
          double fp = loss();
          block(i, j) = keep - h;
          double fm = loss();
          block(i, j) = keep;
          double fd = (fp - fm) / (2 * h);
          CHECK(std::abs(fd - gblock(i, j)) <= 1e-4 * (1.0 + std::abs(gblock(i, j))));
        }
    };
    check_block(net.w1, g.w1);
    check_block(net.w2, g.w2);
    check_block(net.b1, g.b1);
    check_block(net.b2, g.b2);
  }
}

TEST_CASE("total upper gradient finite differences, bernoulli family") {
  GlmFamily fam = GlmFamily::bernoulli();
  Dataset d = toy_data(16, 21, FamilyKind::Bernoulli);
  Eigen::MatrixXd inputs = mech_inputs(d);
  AttackTarget target = make_target(d, fam);
  BilevelConfig cfg;
  cfg.kind = RemediationKind::MeanImpute;
  cfg.lambda_upper = 0.02;
  cfg.lambda_lower = 1e-7;
  SurrogateObjective surrogate(d, target.masked_set, cfg.kind, fam);
  MechanismNet net =
      MechanismNet::init(target.masked_set, static_cast<int>(inputs.cols()), 2, 8);

  auto loss = [&]() {
    MaskDistribution dist = mechanism_forward(net, inputs);
    return evaluate_upper(surrogate, dist.probs, target, cfg, d.cols()).loss;
  };
  MaskDistribution dist = mechanism_forward(net, inputs);
  UpperEvaluation ev = evaluate_upper(surrogate, dist.probs, target, cfg, d.cols());
  MechanismGrad g = mechanism_backward(net, inputs, dist, ev.prob_adjoint);

  const double h = 1e-5;
  auto check_block = [&](auto& block, const auto& gblock) {
    for (Eigen::Index i = 0; i < block.rows(); ++i)
      for (Eigen::Index j = 0; j < block.cols(); ++j) {
        double keep = block(i, j);
        block(i, j) = keep + h;
        double fp = loss();
        block(i, j) = keep - h;
        double fm = loss();
        block(i, j) = keep;
        double fd = (fp - fm) / (2 * h);
        // bernoulli IRLS is iterative; allow a slightly looser tolerance
        CHECK(std::abs(fd - gblock(i, j)) <= 5e-4 * (1.0 + std::abs(gblock(i, j))));
      }
  };
  check_block(net.w1, g.w1);
  check_block(net.w2, g.w2);
  check_block(net.b1, g.b1);
  check_block(net.b2, g.b2);
}

TEST_CASE("inner solution is stationary for the surrogate") {
  Dataset d = toy_data(30, 33);
  GlmFamily fam = GlmFamily::gaussian();
  for (auto kind :
       {RemediationKind::Cca, RemediationKind::MeanImpute, RemediationKind::LinearImpute}) {
    SurrogateObjective s(d, {0}, kind, fam);
    Eigen::MatrixXd probs(d.rows(), 2);
    std::mt19937_64 rng(34);
    std::uniform_real_distribution<double> unif(0.2, 0.8);
    for (int i = 0; i < d.rows(); ++i) {
      probs(i, 1) = unif(rng);
      probs(i, 0) = 1.0 - probs(i, 1);
    }
    auto batch = s.prepare(probs);
    GlmFit fit = inner_solve(s, batch, 1e-7);
    Eigen::VectorXd g = s.theta_gradient(batch, fit.theta) - 1e-7 * fit.theta;
    CHECK(g.norm() <= 1e-6 * (1.0 + fit.theta.norm()));
  }
}

TEST_CASE("a huge missingness penalty drives the mechanism toward full observation") {
  Dataset d = toy_data(40, 44);
  Eigen::MatrixXd inputs = mech_inputs(d);
  GlmFamily fam = GlmFamily::gaussian();
  AttackTarget target = make_target(d, fam);
  BilevelConfig cfg;
  cfg.kind = RemediationKind::Cca;
  cfg.lambda_upper = 1e3;
  cfg.lambda_lower = 1e-7;
  cfg.epochs = 120;
  cfg.learning_rate = 0.05;
  cfg.hidden_dim = 4;
  cfg.seed = 2;
  BlammResult res = blamm_train(d, inputs, target, fam, cfg);
  CHECK(res.trace.records.back().missing_fraction < 0.01);
  CHECK(res.trace.records.back().missing_fraction <
        res.trace.records.front().missing_fraction + 1e-12);
}

TEST_CASE("blamm_train is deterministic for a fixed seed") {
  Dataset d = toy_data(20, 55);
  Eigen::MatrixXd inputs = mech_inputs(d);
  GlmFamily fam = GlmFamily::gaussian();
  AttackTarget target = make_target(d, fam);
  BilevelConfig cfg;
  cfg.kind = RemediationKind::MeanImpute;
  cfg.epochs = 15;
  cfg.hidden_dim = 3;
  cfg.seed = 9;
  cfg.lambda_lower = 1e-7;
  BlammResult a = blamm_train(d, inputs, target, fam, cfg);
  BlammResult b = blamm_train(d, inputs, target, fam, cfg);
  CHECK(a.net.w1 == b.net.w1);
  CHECK(a.net.w2 == b.net.w2);
  CHECK(a.net.b1 == b.net.b1);
  CHECK(a.net.b2 == b.net.b2);
  REQUIRE(a.trace.records.size() == b.trace.records.size());
  for (std::size_t i = 0; i < a.trace.records.size(); ++i)
    CHECK(a.trace.records[i].loss == b.trace.records[i].loss);
}

TEST_CASE("training trace stays finite and descends on a well-behaved problem") {
  Dataset d = toy_data(30, 66);
  Eigen::MatrixXd inputs = mech_inputs(d);
  GlmFamily fam = GlmFamily::gaussian();
  AttackTarget target = make_target(d, fam);
  BilevelConfig cfg;
  cfg.kind = RemediationKind::Cca;
  cfg.epochs = 60;
  cfg.hidden_dim = 4;
  cfg.lambda_lower = 1e-7;
  cfg.learning_rate = 0.05;
  BlammResult res = blamm_train(d, inputs, target, fam, cfg);
  REQUIRE(res.trace.records.size() == 60);
  for (const auto& r : res.trace.records) {
    CHECK(std::isfinite(r.loss));
    CHECK(std::isfinite(r.grad_norm));
    CHECK(r.missing_fraction >= 0.0);
    CHECK(r.missing_fraction <= 1.0);
  }
  CHECK(res.trace.records.back().loss < res.trace.records.front().loss);

  auto path = std::filesystem::temp_directory_path() / "am_trace.csv";
  res.trace.write_csv(path.string());
  csv::Table t = csv::read_file(path.string());
  CHECK(t.header.size() == 5);
  CHECK(t.rows.size() == 60);
  std::filesystem::remove(path);
}

TEST_CASE("linear-impute training uses the warm-start schedule without diverging") {
  Dataset d = toy_data(25, 77);
  Eigen::MatrixXd inputs = mech_inputs(d);
  GlmFamily fam = GlmFamily::gaussian();
  AttackTarget target = make_target(d, fam);
  BilevelConfig cfg;
  cfg.kind = RemediationKind::LinearImpute;
  cfg.epochs = 20;
  cfg.hidden_dim = 3;
  cfg.lambda_lower = 1e-7;
  cfg.seed = 4;
  BlammResult res = blamm_train(d, inputs, target, fam, cfg);
  REQUIRE(res.trace.records.size() == 20);
  for (const auto& r : res.trace.records) CHECK(std::isfinite(r.loss));
}

TEST_CASE("config validation rejects bad settings") {
  BilevelConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.epochs = 0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.warm_start_fraction = 1.5;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.lambda_upper = -0.1;
  CHECK_THROWS(cfg.validate());
}
