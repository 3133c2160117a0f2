#pragma once

// Soft-margin linear SVM trained by dual coordinate descent on the hinge loss.
//
// Minimizes
//     (1/2)(||w||^2 + b^2) + C * sum_i k_i * max(0, 1 - y_i (w.x_i + b))
// where k_i is the class weight of y_i. The bias is an implicit constant-1
// feature and is therefore regularized together with w.
//
// With `balanced`, k_c = n / (2 n_c), so k_pos * n_pos == k_neg * n_neg.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "harmless/error.hpp"
#include "harmless/sparse.hpp"

namespace harmless::svm {

struct Params {
  double C = 1.0;
  bool balanced = true;
  // Common multiplier on both class weights.
  double weight_scale = 1.0;
  std::uint64_t seed = 0;
  // Stop when the dual objective improves by less than this over a full pass.
  double tolerance = 1e-6;
  // and no projected dual gradient on that pass exceeds this in magnitude.
  double gradient_tolerance = 1e-6;
  int max_passes = 1000;
};

struct Model {
  std::vector<double> weights;
  double bias = 0.0;
  double C = 1.0;
  double weight_pos = 1.0;
  double weight_neg = 1.0;
  int passes = 0;

  std::size_t dim() const noexcept { return weights.size(); }

  double decision(const SparseRow& x) const noexcept { return x.dot(weights) + bias; }

  double decision(std::span<const double> dense) const {
    if (dense.size() != weights.size()) throw ArgumentError("decision: dimension mismatch");
    return std::inner_product(dense.begin(), dense.end(), weights.begin(), bias);
  }

  // Solver bookkeeping (`passes`) is not part of model identity.
  bool operator==(const Model& o) const {
    return weights == o.weights && bias == o.bias && C == o.C && weight_pos == o.weight_pos &&
           weight_neg == o.weight_neg;
  }
};

inline std::pair<double, double> class_weights(std::span<const int> labels, bool balanced) {
  if (!balanced) return {1.0, 1.0};
  const auto n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const auto n = static_cast<double>(labels.size());
  const double n_neg = n - n_pos;
  return {n / (2.0 * n_pos), n / (2.0 * n_neg)};
}

// Primal objective of `model` on the given data, bias regularized.
inline double objective(const Model& model, std::span<const SparseRow> rows, std::span<const int> labels) {
  double reg = model.bias * model.bias;
  for (double w : model.weights) reg += w * w;
  double loss = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double k = labels[i] > 0 ? model.weight_pos : model.weight_neg;
    loss += k * std::max(0.0, 1.0 - labels[i] * model.decision(rows[i]));
  }
  return 0.5 * reg + model.C * loss;
}

inline Model train(std::span<const SparseRow> rows, std::span<const int> labels, std::size_t dim,
                   const Params& params = {}) {
  if (rows.size() != labels.size()) throw ArgumentError("train: rows and labels differ in length");
  if (!(params.C > 0.0)) throw ArgumentError("train: C must be positive");
  std::size_t n_pos = 0;
  for (int y : labels) {
    if (y != 1 && y != -1) throw ArgumentError("train: labels must be +1 or -1");
    n_pos += y == 1;
  }
  if (n_pos == 0 || n_pos == labels.size()) throw TrainingError("train: both classes are required");

  const std::size_t n = rows.size();
  std::vector<double> qd(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < rows[i].nnz(); ++k) {
      if (rows[i].indices[k] >= dim) throw ArgumentError("train: feature index exceeds dimension");
      if (!std::isfinite(rows[i].values[k])) throw TrainingError("train: non-finite feature value");
    }
    qd[i] = rows[i].squared_norm() + 1.0;
  }

  Model model;
  model.C = params.C;
  if (!(params.weight_scale > 0.0)) throw ArgumentError("train: weight_scale must be positive");
  std::tie(model.weight_pos, model.weight_neg) = class_weights(labels, params.balanced);
  model.weight_pos *= params.weight_scale;
  model.weight_neg *= params.weight_scale;
  model.weights.assign(dim, 0.0);
  const double upper_pos = params.C * model.weight_pos;
  const double upper_neg = params.C * model.weight_neg;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(params.seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<double> alpha(n, 0.0);
  auto& w = model.weights;
  double& b = model.bias;
  // Shrinking: coordinates pinned at a bound with a gradient pushing outward
  // are dropped from the active set. Convergence must then be confirmed by a
  // pass over all coordinates.
  std::vector<std::size_t> active = order;
  double pg_max_old = std::numeric_limits<double>::infinity();
  double pg_min_old = -std::numeric_limits<double>::infinity();
  int pass = 0;
  while (pass < params.max_passes) {
    ++pass;
    const bool full = active.size() == n;
    double improvement = 0.0;
    double pg_max = -std::numeric_limits<double>::infinity();
    double pg_min = std::numeric_limits<double>::infinity();
    std::size_t kept = 0;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t i = active[k];
      const int y = labels[i];
      const double upper = y > 0 ? upper_pos : upper_neg;
      const double g = y * (rows[i].dot(w) + b) - 1.0;
      double pg = 0.0;
      if (alpha[i] == 0.0) {
        if (g > pg_max_old) continue;
        if (g < 0.0) pg = g;
      } else if (alpha[i] == upper) {
        if (g < pg_min_old) continue;
        if (g > 0.0) pg = g;
      } else {
        pg = g;
      }
      active[kept++] = i;
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (pg == 0.0) continue;
      const double old = alpha[i];
      alpha[i] = std::clamp(old - g / qd[i], 0.0, upper);
      const double delta = alpha[i] - old;
      if (delta == 0.0) continue;
      // Dual objective change: g * delta + (1/2) q_ii delta^2 (negative).
      improvement -= g * delta + 0.5 * qd[i] * delta * delta;
      const double step = delta * y;
      const auto& x = rows[i];
      for (std::size_t j = 0; j < x.nnz(); ++j) w[x.indices[j]] += step * x.values[j];
      b += step;
    }
    active.resize(kept);
    if (improvement < params.tolerance) {
      const bool complete = full && kept == n;
      const bool flat = std::max(pg_max, -pg_min) <= params.gradient_tolerance;
      if (complete && flat) break;
      if (!complete) {
        active = order;
        pg_max_old = std::numeric_limits<double>::infinity();
        pg_min_old = -std::numeric_limits<double>::infinity();
        continue;
      }
    }
    pg_max_old = pg_max > 0.0 ? pg_max : std::numeric_limits<double>::infinity();
    pg_min_old = pg_min < 0.0 ? pg_min : -std::numeric_limits<double>::infinity();
  }
  model.passes = pass;
  return model;
}

inline Model train(const CsrMatrix& x, std::span<const int> labels, const Params& params = {}) {
  std::vector<SparseRow> rows;
  rows.reserve(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) rows.push_back(x.row(i));
  return train(rows, labels, x.cols(), params);
}

inline std::vector<double> decision_values(const Model& model, const CsrMatrix& x) {
  if (x.cols() != model.dim()) throw ArgumentError("decision_values: matrix has " + std::to_string(x.cols()) +
                                                   " columns, model expects " + std::to_string(model.dim()));
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = model.decision(x.row(i));
  return out;
}

// Flat text format:
//   harmless-svm 1
//   dim <n>
//   bias <b>
//   C <c>
//   class_weights <pos> <neg>
//   nnz <k>
//   <index> <value>     (k lines, non-zero weights only)
inline std::string serialize(const Model& m) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "harmless-svm 1\n"
      << "dim " << m.dim() << "\nbias " << m.bias << "\nC " << m.C << "\nclass_weights " << m.weight_pos << ' '
      << m.weight_neg << '\n';
  std::size_t nnz = 0;
  for (double v : m.weights) nnz += v != 0.0;
  out << "nnz " << nnz << '\n';
  for (std::size_t i = 0; i < m.weights.size(); ++i)
    if (m.weights[i] != 0.0) out << i << ' ' << m.weights[i] << '\n';
  return out.str();
}

inline Model deserialize(const std::string& text) {
  std::istringstream in(text);
  std::string tag;
  int version = 0;
  Model m;
  std::size_t dim = 0, nnz = 0;
  std::string k_dim, k_bias, k_c, k_cw, k_nnz;
  if (!(in >> tag >> version) || tag != "harmless-svm" || version != 1)
    throw IngestError("svm model: bad header");
  if (!(in >> k_dim >> dim >> k_bias >> m.bias >> k_c >> m.C >> k_cw >> m.weight_pos >> m.weight_neg >> k_nnz >>
        nnz) ||
      k_dim != "dim" || k_bias != "bias" || k_c != "C" || k_cw != "class_weights" || k_nnz != "nnz")
    throw IngestError("svm model: malformed fields");
  m.weights.assign(dim, 0.0);
  for (std::size_t k = 0; k < nnz; ++k) {
    std::size_t idx = 0;
    double v = 0.0;
    if (!(in >> idx >> v) || idx >= dim) throw IngestError("svm model: malformed weight entry");
    m.weights[idx] = v;
  }
  return m;
}

inline void save(const Model& m, const std::string& path) {
  std::ofstream out(path);
  out << serialize(m);
  if (!out) throw IngestError("cannot write model file " + path);
}

inline Model load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot read model file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace harmless::svm
