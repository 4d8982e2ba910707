#pragma once

// Dataset ingestion, one-hot encoding, standardization, row splitting,
// mask application and (de)serialization of partially observed data.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "am/csv.hpp"

namespace am {

enum class FeatureKind { Continuous, Binary, Categorical };

struct ColumnSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Continuous;
};

// Declares the raw CSV layout: per-column kinds, the response column and the
// attack's target column (by raw name).
struct Schema {
  std::vector<ColumnSpec> columns;
  std::string response;
  std::string target;

  static Schema from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("schema: cannot open " + path);
    nlohmann::json j;
    in >> j;
    Schema s;
    s.response = j.at("response").get<std::string>();
    if (j.contains("target")) s.target = j.at("target").get<std::string>();
    for (const auto& c : j.at("columns")) {
      ColumnSpec spec;
      spec.name = c.at("name").get<std::string>();
      std::string k = c.at("kind").get<std::string>();
      if (k == "continuous") spec.kind = FeatureKind::Continuous;
      else if (k == "binary") spec.kind = FeatureKind::Binary;
      else if (k == "categorical") spec.kind = FeatureKind::Categorical;
      else throw std::runtime_error("schema: unknown kind '" + k + "' for " + spec.name);
      s.columns.push_back(spec);
    }
    return s;
  }
};

struct Dataset {
  Eigen::MatrixXd values;  // N x d, fully observed
  std::vector<std::string> column_names;
  std::vector<FeatureKind> feature_kinds;  // per encoded column
  int response_index = -1;
  bool intercept_added = false;
  int intercept_index = -1;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }

  int column_index(const std::string& name) const {
    auto it = std::find(column_names.begin(), column_names.end(), name);
    if (it == column_names.end())
      throw std::runtime_error("dataset: no column named '" + name + "'");
    return static_cast<int>(it - column_names.begin());
  }

  // Feature columns in order, excluding the response.
  std::vector<int> feature_columns() const {
    std::vector<int> idx;
    for (int j = 0; j < cols(); ++j)
      if (j != response_index) idx.push_back(j);
    return idx;
  }

  Eigen::MatrixXd design() const {
    auto idx = feature_columns();
    Eigen::MatrixXd X(rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) X.col(k) = values.col(idx[k]);
    return X;
  }

  Eigen::VectorXd response() const { return values.col(response_index); }
};

inline Dataset add_intercept(const Dataset& d) {
  if (d.intercept_added) return d;
  Dataset out = d;
  out.values.resize(d.rows(), d.cols() + 1);
  out.values.leftCols(d.cols()) = d.values;
  out.values.col(d.cols()).setOnes();
  out.column_names.push_back("(intercept)");
  out.feature_kinds.push_back(FeatureKind::Continuous);
  out.intercept_added = true;
  out.intercept_index = static_cast<int>(d.cols());
  return out;
}

struct MaskMatrix {
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> bits;  // 1 = observed

  Eigen::Index zero_count() const {
    return bits.size() - static_cast<Eigen::Index>(bits.sum());
  }
};

struct PartialDataset {
  Eigen::MatrixXd values;  // NaN marks NA
  std::vector<std::string> column_names;
  int response_index = -1;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }

  bool is_na(Eigen::Index i, Eigen::Index j) const { return std::isnan(values(i, j)); }

  Eigen::Index na_count() const {
    Eigen::Index n = 0;
    for (Eigen::Index i = 0; i < rows(); ++i)
      for (Eigen::Index j = 0; j < cols(); ++j)
        if (is_na(i, j)) ++n;
    return n;
  }
};

struct ScalerParams {
  Eigen::VectorXd mean;  // per column; identity entries for excluded columns
  Eigen::VectorXd stdev;
  std::set<int> excluded;
};

namespace detail {

inline double parse_cell(const std::string& s, std::size_t row, const std::string& col) {
  if (s.empty() || s == "NA" || s == "NaN" || s == "nan")
    throw std::runtime_error("load_csv: missing value at row " + std::to_string(row) +
                             ", column '" + col + "' (attack input must be complete)");
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("load_csv: cannot parse '" + s + "' at row " +
                             std::to_string(row) + ", column '" + col + "'");
  }
  if (pos != s.size())
    throw std::runtime_error("load_csv: trailing characters in '" + s + "' at row " +
                             std::to_string(row) + ", column '" + col + "'");
  if (!std::isfinite(v))
    throw std::runtime_error("load_csv: non-finite value at row " + std::to_string(row) +
                             ", column '" + col + "'");
  return v;
}

}  // namespace detail

// Parses a complete CSV under the schema. Categorical columns with L observed
// levels expand into L-1 indicator columns, dropping the first level in sorted
// order; encoded columns are appended after the non-categorical ones.
inline Dataset load_csv(const std::string& path, const Schema& schema) {
  csv::Table t = csv::read_file(path);
  if (t.header.size() != schema.columns.size())
    throw std::runtime_error("load_csv: header has " + std::to_string(t.header.size()) +
                             " columns, schema declares " +
                             std::to_string(schema.columns.size()));
  for (std::size_t j = 0; j < t.header.size(); ++j)
    if (t.header[j] != schema.columns[j].name)
      throw std::runtime_error("load_csv: header column '" + t.header[j] +
                               "' does not match schema '" + schema.columns[j].name + "'");
  if (t.rows.empty()) throw std::runtime_error("load_csv: no data rows in " + path);

  const std::size_t n = t.rows.size();
  const std::size_t raw_d = schema.columns.size();

  // Collect categorical level sets first.
  std::vector<std::vector<std::string>> levels(raw_d);
  for (std::size_t j = 0; j < raw_d; ++j) {
    if (schema.columns[j].kind != FeatureKind::Categorical) continue;
    std::set<std::string> seen;
    for (const auto& r : t.rows) {
      if (r[j].empty())
        throw std::runtime_error("load_csv: missing value in categorical column '" +
                                 schema.columns[j].name + "'");
      seen.insert(r[j]);
    }
    levels[j].assign(seen.begin(), seen.end());
    if (levels[j].size() < 2)
      throw std::runtime_error("load_csv: categorical column '" + schema.columns[j].name +
                               "' has fewer than two levels");
  }

  Dataset d;
  for (std::size_t j = 0; j < raw_d; ++j) {
    if (schema.columns[j].kind == FeatureKind::Categorical) continue;
    d.column_names.push_back(schema.columns[j].name);
    d.feature_kinds.push_back(schema.columns[j].kind);
  }
  for (std::size_t j = 0; j < raw_d; ++j) {
    if (schema.columns[j].kind != FeatureKind::Categorical) continue;
    for (std::size_t l = 1; l < levels[j].size(); ++l) {
      d.column_names.push_back(schema.columns[j].name + "=" + levels[j][l]);
      d.feature_kinds.push_back(FeatureKind::Binary);
    }
  }

  d.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d.column_names.size()));
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Index out_j = 0;
    for (std::size_t j = 0; j < raw_d; ++j) {
      if (schema.columns[j].kind == FeatureKind::Categorical) continue;
      d.values(static_cast<Eigen::Index>(i), out_j++) =
          detail::parse_cell(t.rows[i][j], i + 2, schema.columns[j].name);
    }
    for (std::size_t j = 0; j < raw_d; ++j) {
      if (schema.columns[j].kind != FeatureKind::Categorical) continue;
      const std::string& cell = t.rows[i][j];
      auto it = std::find(levels[j].begin(), levels[j].end(), cell);
      if (it == levels[j].end())
        throw std::runtime_error("load_csv: unknown level '" + cell + "' in column '" +
                                 schema.columns[j].name + "' at row " + std::to_string(i + 2));
      std::size_t idx = static_cast<std::size_t>(it - levels[j].begin());
      for (std::size_t l = 1; l < levels[j].size(); ++l)
        d.values(static_cast<Eigen::Index>(i), out_j++) = (idx == l) ? 1.0 : 0.0;
    }
  }
  d.response_index = d.column_index(schema.response);
  return d;
}

// Deterministic row split: round(fraction*N) training rows, remainder audit.
inline std::pair<Dataset, Dataset> split(const Dataset& d, double train_fraction,
                                         std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw std::invalid_argument("split: train_fraction must lie in (0, 1]");
  if (d.rows() < 2) throw std::invalid_argument("split: need at least 2 rows");

  const Eigen::Index n = d.rows();
  const Eigen::Index n_train = static_cast<Eigen::Index>(std::llround(train_fraction * static_cast<double>(n)));
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  auto take = [&d](const std::vector<Eigen::Index>& rows) {
    Dataset out = d;
    out.values.resize(static_cast<Eigen::Index>(rows.size()), d.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.values.row(static_cast<Eigen::Index>(i)) = d.values.row(rows[i]);
    return out;
  };
  std::vector<Eigen::Index> train_rows(perm.begin(), perm.begin() + n_train);
  std::vector<Eigen::Index> audit_rows(perm.begin() + n_train, perm.end());
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(audit_rows.begin(), audit_rows.end());
  return {take(train_rows), take(audit_rows)};
}

inline ScalerParams fit_scaler(const Dataset& d, const std::set<int>& exclude) {
  ScalerParams p;
  const Eigen::Index n = d.rows();
  p.mean = Eigen::VectorXd::Zero(d.cols());
  p.stdev = Eigen::VectorXd::Ones(d.cols());
  p.excluded = exclude;
  for (int j = 0; j < d.cols(); ++j) {
    if (exclude.count(j)) continue;
    double m = d.values.col(j).mean();
    // population (1/N) standard deviation
    double var = (d.values.col(j).array() - m).square().sum() / static_cast<double>(n);
    double sd = std::sqrt(var);
    if (sd <= 0.0)
      throw std::runtime_error("standardize: column '" + d.column_names[j] +
                               "' has zero variance");
    p.mean[j] = m;
    p.stdev[j] = sd;
  }
  return p;
}

inline Dataset apply_scaler(const Dataset& d, const ScalerParams& p) {
  Dataset out = d;
  for (int j = 0; j < d.cols(); ++j) {
    if (p.excluded.count(j)) continue;
    out.values.col(j) = (d.values.col(j).array() - p.mean[j]) / p.stdev[j];
  }
  return out;
}

inline Dataset invert_scaler(const Dataset& d, const ScalerParams& p) {
  Dataset out = d;
  for (int j = 0; j < d.cols(); ++j) {
    if (p.excluded.count(j)) continue;
    out.values.col(j) = d.values.col(j).array() * p.stdev[j] + p.mean[j];
  }
  return out;
}

inline std::pair<Dataset, ScalerParams> standardize(const Dataset& d,
                                                    const std::set<int>& exclude) {
  if (d.response_index >= 0 && !exclude.count(d.response_index))
    throw std::invalid_argument("standardize: response column must be excluded");
  if (d.intercept_added && !exclude.count(d.intercept_index))
    throw std::invalid_argument("standardize: intercept column must be excluded");
  ScalerParams p = fit_scaler(d, exclude);
  return {apply_scaler(d, p), p};
}

// Default exclusion set: response, intercept and binary indicator columns.
inline std::set<int> default_scaling_exclusions(const Dataset& d) {
  std::set<int> ex;
  if (d.response_index >= 0) ex.insert(d.response_index);
  if (d.intercept_added) ex.insert(d.intercept_index);
  for (int j = 0; j < d.cols(); ++j)
    if (d.feature_kinds[j] == FeatureKind::Binary) ex.insert(j);
  return ex;
}

inline PartialDataset apply_mask(const Dataset& d, const MaskMatrix& m) {
  if (m.bits.rows() != d.rows() || m.bits.cols() != d.cols())
    throw std::invalid_argument("apply_mask: shape mismatch");
  PartialDataset p;
  p.values = d.values;
  p.column_names = d.column_names;
  p.response_index = d.response_index;
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    for (Eigen::Index j = 0; j < d.cols(); ++j)
      if (m.bits(i, j) == 0) p.values(i, j) = std::numeric_limits<double>::quiet_NaN();
  return p;
}

inline void serialize_partial(const PartialDataset& p, const std::string& path) {
  csv::Table t;
  t.header = p.column_names;
  t.rows.reserve(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    csv::Row r(static_cast<std::size_t>(p.cols()));
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      r[static_cast<std::size_t>(j)] = p.is_na(i, j) ? "" : csv::format_value(p.values(i, j));
    t.rows.push_back(std::move(r));
  }
  csv::write_file(path, t);
}

inline PartialDataset deserialize_partial(const std::string& path,
                                          const std::string& response_name) {
  csv::Table t = csv::read_file(path);
  PartialDataset p;
  p.column_names = t.header;
  auto it = std::find(t.header.begin(), t.header.end(), response_name);
  if (it == t.header.end())
    throw std::runtime_error("deserialize_partial: response column '" + response_name +
                             "' not found");
  p.response_index = static_cast<int>(it - t.header.begin());
  p.values.resize(static_cast<Eigen::Index>(t.rows.size()),
                  static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t j = 0; j < t.header.size(); ++j) {
      const std::string& cell = t.rows[i][j];
      if (cell.empty()) {
        if (static_cast<int>(j) == p.response_index)
          throw std::runtime_error("deserialize_partial: NA in response column at row " +
                                   std::to_string(i + 2));
        p.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            std::numeric_limits<double>::quiet_NaN();
      } else {
        p.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            std::stod(cell);
      }
    }
  }
  return p;
}

inline void write_mask_csv(const MaskMatrix& m, const std::vector<std::string>& names,
                           const std::string& path) {
  csv::Table t;
  t.header = names;
  for (Eigen::Index i = 0; i < m.bits.rows(); ++i) {
    csv::Row r(static_cast<std::size_t>(m.bits.cols()));
    for (Eigen::Index j = 0; j < m.bits.cols(); ++j)
      r[static_cast<std::size_t>(j)] = m.bits(i, j) ? "1" : "0";
    t.rows.push_back(std::move(r));
  }
  csv::write_file(path, t);
}

inline MaskMatrix read_mask_csv(const std::string& path) {
  csv::Table t = csv::read_file(path);
  MaskMatrix m;
  m.bits.resize(static_cast<Eigen::Index>(t.rows.size()),
                static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < t.header.size(); ++j) {
      int v = std::stoi(t.rows[i][j]);
      if (v != 0 && v != 1) throw std::runtime_error("mask csv: entries must be 0/1");
      m.bits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  return m;
}

}  // namespace am
