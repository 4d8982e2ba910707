#pragma once

// Pinned synthetic data generators: the 2-d logistic demo and a linear
// regression surrogate with one dominant, partially redundant feature.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>

#include "am/dataset.hpp"

namespace am {

// Two anisotropic Gaussian clusters whose long axis runs along (1,1): both
// coordinates carry the class signal through a shared factor, so either one
// alone classifies nearly as well as the pair. The clean model reaches
// roughly 83-84% accuracy. Columns: x1 (attack target), x2, y.
inline Dataset make_fig1_dataset(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  Dataset d;
  d.values.resize(n, 3);
  d.column_names = {"x1", "x2", "y"};
  d.feature_kinds = {FeatureKind::Continuous, FeatureKind::Continuous,
                     FeatureKind::Binary};
  d.response_index = 2;
  for (Eigen::Index i = 0; i < n; ++i) {
    double y = static_cast<double>(coin(rng));
    double u = 0.85 * (2.0 * y - 1.0) + gauss(rng);  // shared within-cluster factor
    d.values(i, 0) = u + 0.15 * gauss(rng);
    d.values(i, 1) = u + 0.15 * gauss(rng);
    d.values(i, 2) = y;
  }
  return d;
}

// Linear regression surrogate: x1 dominates the response but shares a latent
// factor with x2, so the constrained target can reroute its effect. Columns:
// x1 (attack target), x2, x3, y.
inline Dataset make_regression_surrogate(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  d.values.resize(n, 4);
  d.column_names = {"x1", "x2", "x3", "y"};
  d.feature_kinds = {FeatureKind::Continuous, FeatureKind::Continuous,
                     FeatureKind::Continuous, FeatureKind::Continuous};
  d.response_index = 3;
  for (Eigen::Index i = 0; i < n; ++i) {
    double h = gauss(rng);
    double x1 = h + 0.15 * gauss(rng);
    double x2 = h + 0.15 * gauss(rng);
    double x3 = gauss(rng);
    double y = 2.0 * x1 + 0.6 * x3 + 0.8 * gauss(rng);
    d.values(i, 0) = x1;
    d.values(i, 1) = x2;
    d.values(i, 2) = x3;
    d.values(i, 3) = y;
  }
  return d;
}

}  // namespace am
