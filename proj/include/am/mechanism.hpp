#pragma once

// The parameterized missingness mechanism: a one-hidden-layer tanh network
// mapping a data row to a softmax distribution over the 2^|M| masks of the
// masked column set M. Includes the exact reverse-mode pass, mask sampling,
// the matched MCAR marginal and the expected-missingness regularizer.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "am/dataset.hpp"

namespace am {

// Binary-to-decimal mask index; first bit most significant.
inline int gamma_index(const std::vector<int>& bits) {
  int v = 0;
  for (int b : bits) v = (v << 1) | (b & 1);
  return v;
}

// Bit of mask index `idx` for position `pos` within M (0 = first = MSB).
inline int mask_bit(int idx, int pos, int m_size) { return (idx >> (m_size - 1 - pos)) & 1; }

struct MechanismNet {
  std::vector<int> masked_set;  // dataset column indices, |M| <= 10
  int input_dim = 0;
  int hidden_dim = 100;
  Eigen::MatrixXd w1;  // hidden x input
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // 2^|M| x hidden
  Eigen::VectorXd b2;

  int num_masks() const { return 1 << static_cast<int>(masked_set.size()); }

  static MechanismNet init(std::vector<int> masked_set, int input_dim, int hidden_dim,
                           std::uint64_t seed) {
    if (masked_set.empty()) throw std::invalid_argument("MechanismNet: M is empty");
    if (masked_set.size() > 10)
      throw std::invalid_argument("MechanismNet: |M| capped at 10");
    MechanismNet net;
    net.masked_set = std::move(masked_set);
    net.input_dim = input_dim;
    net.hidden_dim = hidden_dim;
    const int out = net.num_masks();
    std::mt19937_64 rng(seed);
    auto glorot = [&rng](Eigen::MatrixXd& w, int fan_in, int fan_out) {
      double lim = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> u(-lim, lim);
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = u(rng);
    };
    net.w1.resize(hidden_dim, input_dim);
    glorot(net.w1, input_dim, hidden_dim);
    net.b1 = Eigen::VectorXd::Zero(hidden_dim);
    net.w2.resize(out, hidden_dim);
    glorot(net.w2, hidden_dim, out);
    net.b2 = Eigen::VectorXd::Zero(out);
    return net;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["masked_set"] = masked_set;
    j["input_dim"] = input_dim;
    j["hidden_dim"] = hidden_dim;
    auto dump = [](const Eigen::MatrixXd& m) {
      std::vector<double> v(m.size());
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index k = 0; k < m.cols(); ++k)
          v[static_cast<std::size_t>(i * m.cols() + k)] = m(i, k);  // row-major
      return v;
    };
    j["w1"] = dump(w1);
    j["b1"] = std::vector<double>(b1.data(), b1.data() + b1.size());
    j["w2"] = dump(w2);
    j["b2"] = std::vector<double>(b2.data(), b2.data() + b2.size());
    return j;
  }

  static MechanismNet from_json(const nlohmann::json& j) {
    if (j.at("format_version").get<int>() != 1)
      throw std::runtime_error("MechanismNet: unsupported format version");
    MechanismNet net;
    net.masked_set = j.at("masked_set").get<std::vector<int>>();
    net.input_dim = j.at("input_dim").get<int>();
    net.hidden_dim = j.at("hidden_dim").get<int>();
    const int out = net.num_masks();
    auto load = [](const std::vector<double>& v, Eigen::Index r, Eigen::Index c) {
      if (static_cast<Eigen::Index>(v.size()) != r * c)
        throw std::runtime_error("MechanismNet: weight block size mismatch");
      Eigen::MatrixXd m(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index k = 0; k < c; ++k) m(i, k) = v[static_cast<std::size_t>(i * c + k)];
      return m;
    };
    net.w1 = load(j.at("w1").get<std::vector<double>>(), net.hidden_dim, net.input_dim);
    {
      auto b1v = j.at("b1").get<std::vector<double>>();
      net.b1 = Eigen::Map<const Eigen::VectorXd>(b1v.data(), net.hidden_dim);
    }
    net.w2 = load(j.at("w2").get<std::vector<double>>(), out, net.hidden_dim);
    {
      auto b2v = j.at("b2").get<std::vector<double>>();
      net.b2 = Eigen::Map<const Eigen::VectorXd>(b2v.data(), out);
    }
    return net;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("MechanismNet: cannot write " + path);
    out << to_json().dump(2) << '\n';
  }

  static MechanismNet load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("MechanismNet: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }
};

// Parameter-shaped gradient accumulator.
struct MechanismGrad {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;

  static MechanismGrad zero(const MechanismNet& net) {
    MechanismGrad g;
    g.w1 = Eigen::MatrixXd::Zero(net.w1.rows(), net.w1.cols());
    g.b1 = Eigen::VectorXd::Zero(net.b1.size());
    g.w2 = Eigen::MatrixXd::Zero(net.w2.rows(), net.w2.cols());
    g.b2 = Eigen::VectorXd::Zero(net.b2.size());
    return g;
  }

  MechanismGrad& operator+=(const MechanismGrad& o) {
    w1 += o.w1;
    b1 += o.b1;
    w2 += o.w2;
    b2 += o.b2;
    return *this;
  }

  MechanismGrad& operator*=(double s) {
    w1 *= s;
    b1 *= s;
    w2 *= s;
    b2 *= s;
    return *this;
  }

  double norm() const {
    return std::sqrt(w1.squaredNorm() + b1.squaredNorm() + w2.squaredNorm() +
                     b2.squaredNorm());
  }
};

inline void apply_update(MechanismNet& net, const MechanismGrad& g, double step) {
  net.w1 -= step * g.w1;
  net.b1 -= step * g.b1;
  net.w2 -= step * g.w2;
  net.b2 -= step * g.b2;
}

// Row-wise distribution over the 2^|M| masks (restricted to masks that observe
// everything outside M) plus the cached hidden activations for backprop.
struct MaskDistribution {
  Eigen::MatrixXd probs;   // N x 2^|M|
  Eigen::MatrixXd hidden;  // N x hidden_dim (tanh outputs)
};

inline MaskDistribution mechanism_forward(const MechanismNet& net,
                                          const Eigen::MatrixXd& inputs) {
  if (inputs.cols() != net.input_dim)
    throw std::invalid_argument("mechanism_forward: input dimension mismatch");
  MaskDistribution dist;
  dist.hidden = ((inputs * net.w1.transpose()).rowwise() + net.b1.transpose())
                    .array()
                    .tanh();
  Eigen::MatrixXd logits =
      (dist.hidden * net.w2.transpose()).rowwise() + net.b2.transpose();
  if (!logits.allFinite())
    throw std::runtime_error("mechanism_forward: non-finite activations");
  dist.probs.resizeLike(logits);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double m = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
    dist.probs.row(i) = e / e.sum();
  }
  return dist;
}

// Exact reverse-mode gradient of sum_i <upstream_i, probs_i> w.r.t. the
// network parameters; `dist` must be the forward cache for `inputs`.
inline MechanismGrad mechanism_backward(const MechanismNet& net,
                                        const Eigen::MatrixXd& inputs,
                                        const MaskDistribution& dist,
                                        const Eigen::MatrixXd& upstream) {
  if (upstream.rows() != dist.probs.rows() || upstream.cols() != dist.probs.cols())
    throw std::invalid_argument("mechanism_backward: upstream shape mismatch");
  if (!upstream.allFinite())
    throw std::invalid_argument("mechanism_backward: non-finite upstream");

  // softmax jacobian: dL/do = p .* (u - <u, p>)
  Eigen::MatrixXd dlogits(upstream.rows(), upstream.cols());
  for (Eigen::Index i = 0; i < upstream.rows(); ++i) {
    double dot = upstream.row(i).dot(dist.probs.row(i));
    dlogits.row(i) =
        dist.probs.row(i).array() * (upstream.row(i).array() - dot);
  }

  MechanismGrad g;
  g.w2 = dlogits.transpose() * dist.hidden;
  g.b2 = dlogits.colwise().sum().transpose();
  Eigen::MatrixXd dhidden =
      (dlogits * net.w2).array() * (1.0 - dist.hidden.array().square());
  g.w1 = dhidden.transpose() * inputs;
  g.b1 = dhidden.colwise().sum().transpose();
  return g;
}

// Inverse-CDF sampling of one mask row per data row; columns outside M stay 1.
inline MaskMatrix sample_masks(const MaskDistribution& dist,
                               const std::vector<int>& masked_set, Eigen::Index d,
                               std::uint64_t seed) {
  const Eigen::Index n = dist.probs.rows();
  const int m_size = static_cast<int>(masked_set.size());
  MaskMatrix mask;
  mask.bits = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>::Ones(n, d);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double u = unif(rng);
    double cum = 0.0;
    int chosen = static_cast<int>(dist.probs.cols()) - 1;
    for (Eigen::Index k = 0; k < dist.probs.cols(); ++k) {
      cum += dist.probs(i, k);
      if (u <= cum) {
        chosen = static_cast<int>(k);
        break;
      }
    }
    for (int pos = 0; pos < m_size; ++pos)
      mask.bits(i, masked_set[static_cast<std::size_t>(pos)]) =
          mask_bit(chosen, pos, m_size);
  }
  return mask;
}

// Row-averaged marginal P_R(r); the matched-missingness MCAR baseline.
inline Eigen::VectorXd mcar_baseline(const MaskDistribution& dist) {
  return dist.probs.colwise().mean().transpose();
}

inline MaskDistribution mcar_distribution(const MaskDistribution& dist) {
  MaskDistribution out;
  Eigen::VectorXd marginal = mcar_baseline(dist);
  out.probs = marginal.transpose().replicate(dist.probs.rows(), 1);
  return out;
}

// Expected fraction of missing cells per row, averaged over rows: the
// Omega regularizer of the upper-level loss.
inline double expected_missing_fraction(const MaskDistribution& dist, Eigen::Index d,
                                        int m_size) {
  const Eigen::Index k = dist.probs.cols();
  double total = 0.0;
  for (Eigen::Index c = 0; c < k; ++c) {
    int zeros = 0;
    for (int pos = 0; pos < m_size; ++pos)
      if (mask_bit(static_cast<int>(c), pos, m_size) == 0) ++zeros;
    total += dist.probs.col(c).sum() * (static_cast<double>(zeros) / static_cast<double>(d));
  }
  return total / static_cast<double>(dist.probs.rows());
}

// d Omega / d probs, same shape as the distribution.
inline Eigen::MatrixXd expected_missing_fraction_adjoint(const MaskDistribution& dist,
                                                         Eigen::Index d, int m_size) {
  const Eigen::Index n = dist.probs.rows();
  const Eigen::Index k = dist.probs.cols();
  Eigen::MatrixXd adj(n, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    int zeros = 0;
    for (int pos = 0; pos < m_size; ++pos)
      if (mask_bit(static_cast<int>(c), pos, m_size) == 0) ++zeros;
    adj.col(c).setConstant(static_cast<double>(zeros) /
                           (static_cast<double>(d) * static_cast<double>(n)));
  }
  return adj;
}

}  // namespace am
