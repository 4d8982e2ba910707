#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "am/mechanism.hpp"
#include "am/victim.hpp"

using namespace am;

namespace {

PartialDataset make_partial(const Eigen::MatrixXd& vals,
                            const std::vector<std::string>& names, int resp,
                            const std::vector<std::pair<int, int>>& holes) {
  Dataset d;
  d.values = vals;
  d.column_names = names;
  d.feature_kinds.assign(names.size(), FeatureKind::Continuous);
  d.response_index = resp;
  for (std::size_t j = 0; j < names.size(); ++j)
    if (names[j] == "(intercept)") {
      d.intercept_added = true;
      d.intercept_index = static_cast<int>(j);
    }
  MaskMatrix m;
  m.bits = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>::Ones(vals.rows(),
                                                                    vals.cols());
  for (auto [i, j] : holes) m.bits(i, j) = 0;
  return apply_mask(d, m);
}

Dataset rand_dataset(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  d.values.resize(n, 4);
  d.column_names = {"x1", "x2", "(intercept)", "y"};
  d.feature_kinds.assign(4, FeatureKind::Continuous);
  d.response_index = 3;
  d.intercept_added = true;
  d.intercept_index = 2;
  for (int i = 0; i < n; ++i) {
    d.values(i, 0) = gauss(rng);
    d.values(i, 1) = gauss(rng);
    d.values(i, 2) = 1.0;
    d.values(i, 3) = 0.7 * d.values(i, 0) - 0.3 * d.values(i, 1) + 0.2 * gauss(rng);
  }
  return d;
}

}  // namespace

TEST_CASE("remediate with no missingness is the identity for all strategies") {
  Dataset d = rand_dataset(12, 1);
  MaskMatrix ones;
  ones.bits = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>::Ones(12, 4);
  PartialDataset p = apply_mask(d, ones);
  for (auto s :
       {RemediationKind::Cca, RemediationKind::MeanImpute, RemediationKind::LinearImpute}) {
    Dataset out = remediate(p, s);
    CHECK(out.values == d.values);
  }
}

TEST_CASE("mean imputation fills (1, NA, 3) with 2") {
  Eigen::MatrixXd vals(3, 2);
  vals << 1, 10, 2, 20, 3, 30;
  PartialDataset p = make_partial(vals, {"x", "y"}, 1, {{1, 0}});
  Dataset out = remediate(p, RemediationKind::MeanImpute);
  CHECK(out.values(1, 0) == 2.0);
  CHECK(out.values(0, 0) == 1.0);
  CHECK(out.values(2, 0) == 3.0);

  // observed column means are preserved
  Dataset d = rand_dataset(20, 2);
  MaskMatrix m;
  m.bits = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>::Ones(20, 4);
  m.bits(3, 0) = m.bits(7, 0) = m.bits(11, 1) = 0;
  PartialDataset pr = apply_mask(d, m);
  Dataset imp = remediate(pr, RemediationKind::MeanImpute);
  double obs_mean = 0;
  int cnt = 0;
  for (int i = 0; i < 20; ++i)
    if (i != 3 && i != 7) {
      obs_mean += d.values(i, 0);
      ++cnt;
    }
  obs_mean /= cnt;
  CHECK_THAT(imp.values(3, 0), Catch::Matchers::WithinAbs(obs_mean, 1e-12));
  CHECK_THAT(imp.values(7, 0), Catch::Matchers::WithinAbs(obs_mean, 1e-12));
}

TEST_CASE("cca keeps exactly the complete rows, bitwise") {
  Dataset d = rand_dataset(15, 3);
  MaskMatrix m;
  m.bits = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>::Ones(15, 4);
  m.bits(2, 0) = 0;
  m.bits(9, 1) = 0;
  PartialDataset p = apply_mask(d, m);
  Dataset out = remediate(p, RemediationKind::Cca);
  REQUIRE(out.rows() == 13);
  int k = 0;
  for (int i = 0; i < 15; ++i) {
    if (i == 2 || i == 9) continue;
    CHECK(out.values.row(k++) == d.values.row(i));
  }
}

TEST_CASE("cca errors out when too few complete rows remain") {
  Dataset d = rand_dataset(6, 4);
  MaskMatrix m;
  m.bits = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>::Ones(6, 4);
  for (int i = 0; i < 4; ++i) m.bits(i, 0) = 0;  // only 2 complete rows, need 4
  CHECK_THROWS_WITH(remediate(apply_mask(d, m), RemediationKind::Cca),
                    Catch::Matchers::ContainsSubstring("complete rows"));
}

TEST_CASE("linear imputation recovers an exactly collinear column") {
  // x2 = 3 x1 - 1 exactly; hidden entries must be reconstructed to 1e-10
  const int n = 12;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd vals(n, 4);
  for (int i = 0; i < n; ++i) {
    double x1 = gauss(rng);
    vals(i, 0) = x1;
    vals(i, 1) = 3.0 * x1 - 1.0;
    vals(i, 2) = 1.0;
    vals(i, 3) = gauss(rng);
  }
  PartialDataset p = make_partial(vals, {"x1", "x2", "(intercept)", "y"}, 3,
                                  {{0, 1}, {5, 1}, {9, 1}});
  Dataset out = remediate(p, RemediationKind::LinearImpute);
  CHECK(std::abs(out.values(0, 1) - (3.0 * vals(0, 0) - 1.0)) < 1e-10);
  CHECK(std::abs(out.values(5, 1) - (3.0 * vals(5, 0) - 1.0)) < 1e-10);
  CHECK(std::abs(out.values(9, 1) - (3.0 * vals(9, 0) - 1.0)) < 1e-10);
  // observed entries untouched
  CHECK(out.values(1, 1) == vals(1, 1));
}

TEST_CASE("linear imputation excludes the response unless asked") {
  // x2 is a function of y alone; default imputer cannot see it
  const int n = 10;
  Eigen::MatrixXd vals(n, 3);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    vals(i, 0) = gauss(rng);
    vals(i, 2) = gauss(rng);
    vals(i, 1) = 2.0 * vals(i, 2);
  }
  PartialDataset p = make_partial(vals, {"x1", "x2", "y"}, 2, {{4, 1}});
  Dataset def = remediate(p, RemediationKind::LinearImpute);
  CHECK(std::abs(def.values(4, 1) - 2.0 * vals(4, 2)) > 0.1);
  RemediateOptions opt;
  opt.linear_use_response = true;
  Dataset with = remediate(p, RemediationKind::LinearImpute, opt);
  CHECK(std::abs(with.values(4, 1) - 2.0 * vals(4, 2)) < 1e-8);
}

TEST_CASE("remediate rejects NA in the response") {
  Eigen::MatrixXd vals(3, 2);
  vals << 1, 2, 3, 4, 5, 6;
  PartialDataset p = make_partial(vals, {"x", "y"}, 1, {{1, 1}});
  CHECK_THROWS_WITH(remediate(p, RemediationKind::MeanImpute),
                    Catch::Matchers::ContainsSubstring("response"));
}

TEST_CASE("remediate rejects a fully missing column") {
  Eigen::MatrixXd vals(3, 3);
  vals << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  PartialDataset p =
      make_partial(vals, {"x1", "x2", "y"}, 2, {{0, 0}, {1, 0}, {2, 0}});
  CHECK_THROWS(remediate(p, RemediationKind::MeanImpute));
}

TEST_CASE("audit_score hand values") {
  Dataset audit;
  audit.values.resize(4, 2);
  audit.values << 1, 1, 2, 2, 3, 3, 4, 4;  // y == x
  audit.column_names = {"x", "y"};
  audit.feature_kinds.assign(2, FeatureKind::Continuous);
  audit.response_index = 1;
  Eigen::VectorXd theta(1);
  theta << 1.0;
  CHECK(audit_score(theta, audit, GlmFamily::gaussian()) == 0.0);
  theta << 0.0;
  // predictions all 0: mse = mean y^2, nmse = mean y^2 / popvar(y)
  double mse = (1.0 + 4 + 9 + 16) / 4.0;
  double var = ((1 - 2.5) * (1 - 2.5) + (2 - 2.5) * (2 - 2.5) + (3 - 2.5) * (3 - 2.5) +
                (4 - 2.5) * (4 - 2.5)) /
               4.0;
  CHECK_THAT(audit_score(theta, audit, GlmFamily::gaussian()),
             Catch::Matchers::WithinAbs(mse / var, 1e-12));

  Dataset cls;
  cls.values.resize(4, 2);
  cls.values << -2, 0, -1, 0, 1, 1, 2, 0;  // last row misclassified by eta = x
  cls.column_names = {"x", "y"};
  cls.feature_kinds.assign(2, FeatureKind::Continuous);
  cls.response_index = 1;
  theta << 1.0;
  CHECK_THAT(audit_score(theta, cls, GlmFamily::bernoulli()),
             Catch::Matchers::WithinAbs(0.75, 1e-12));
}

TEST_CASE("victim_fit_report distances satisfy the triangle inequality") {
  Dataset d = rand_dataset(60, 9);
  GlmFamily fam = GlmFamily::gaussian();
  GlmFit complete = glm_fit(d.design(), d.response(), fam);
  AttackTarget target = constrained_target(d.design(), d.response(), fam, 0);
  target.masked_set = {0};

  MaskMatrix m;
  m.bits = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>::Ones(60, 4);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < 60; ++i)
    if (unif(rng) < 0.2) m.bits(i, 0) = 0;
  PartialDataset p = apply_mask(d, m);

  Dataset audit = rand_dataset(30, 11);
  for (auto s :
       {RemediationKind::Cca, RemediationKind::MeanImpute, RemediationKind::LinearImpute}) {
    VictimReport rep = victim_fit_report(p, s, fam, target, complete.theta, audit);
    double ac = (target.theta_alpha - complete.theta).lpNorm<1>();
    CHECK(rep.l1_to_alpha + rep.l1_to_complete >= ac - 1e-10);
    CHECK(rep.target_p_value >= 0.0);
    CHECK(rep.target_p_value <= 1.0);
    CHECK_THAT(rep.missing_rates[0],
               Catch::Matchers::WithinAbs(
                   static_cast<double>(60 - m.bits.col(0).sum()) / 60.0, 1e-12));
    CHECK(rep.missing_rates[3] == 0.0);
  }
}

TEST_CASE("victim report on complete data reproduces the complete fit") {
  Dataset d = rand_dataset(50, 12);
  GlmFamily fam = GlmFamily::gaussian();
  GlmFit complete = glm_fit(d.design(), d.response(), fam);
  AttackTarget target = constrained_target(d.design(), d.response(), fam, 0);
  target.masked_set = {0};
  MaskMatrix ones;
  ones.bits = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>::Ones(50, 4);
  PartialDataset p = apply_mask(d, ones);
  Dataset audit = rand_dataset(25, 13);
  VictimReport rep =
      victim_fit_report(p, RemediationKind::Cca, fam, target, complete.theta, audit);
  CHECK((rep.fit.theta - complete.theta).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(rep.l1_to_complete) < 1e-10);
}
