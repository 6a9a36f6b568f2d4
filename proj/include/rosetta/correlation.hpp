#pragma once

// Class prototypes and the prototype-based task correlation chain that
// weights the gating diversity loss:
//   class-to-class MSE matrix -> class-to-task minimum -> task-to-task mean
//   -> controller weight phi in [0,1].

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "rosetta/dataset.hpp"
#include "rosetta/error.hpp"
#include "rosetta/gatednet.hpp"

namespace rosetta {

struct Prototype {
  ClassId class_id = 0;
  std::vector<double> vector;

  friend bool operator==(const Prototype&, const Prototype&) = default;
};

struct CorrelationMatrix {
  TaskId source_task = 0;
  TaskId target_task = 0;
  Tensor entries;  // [|C^source|, |C^target|]

  std::size_t rows() const { return entries.shape.at(0); }
  std::size_t cols() const { return entries.shape.at(1); }
  double at(std::size_t i, std::size_t j) const { return entries.at(i, j); }
};

inline constexpr double kPhiEpsilon = 1e-12;

// Arithmetic mean of features [n,d] per class label.
inline std::vector<Prototype> prototypes_from_features(const Tensor& features, const std::vector<std::size_t>& labels,
                                                       const std::vector<ClassId>& class_ids) {
  const auto d = features.cols();
  std::vector<Prototype> out;
  std::vector<std::size_t> counts(class_ids.size(), 0);
  for (auto id : class_ids) out.push_back({id, std::vector<double>(d, 0.0)});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto k = labels[i];
    if (k >= class_ids.size()) fail(ErrorKind::OutOfRange, "prototype: label outside the task's class list");
    ++counts[k];
    for (std::size_t j = 0; j < d; ++j) out[k].vector[j] += features.data[i * d + j];
  }
  for (std::size_t k = 0; k < class_ids.size(); ++k) {
    if (counts[k] == 0)
      fail(ErrorKind::InvalidArgument, "prototype: class " + std::to_string(class_ids[k]) + " has no samples");
    for (auto& v : out[k].vector) v /= static_cast<double>(counts[k]);
  }
  return out;
}

// Mean final-layer feature per class under the given static gates.
inline std::vector<Prototype> compute_prototypes(const GatedNetwork& net, const Dataset& data,
                                                 const std::vector<ClassId>& class_ids, const BinaryGates& gates) {
  return prototypes_from_features(network_features(net, data.inputs, gates), data.labels, class_ids);
}

inline double prototype_mse(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    fail(ErrorKind::Shape, "prototype dimension mismatch: " + std::to_string(a.size()) + " vs " +
                               std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

// M[i,j] = MSE(p_i^m, p_j^n)
inline CorrelationMatrix class_to_class(const std::vector<Prototype>& protos_m, const std::vector<Prototype>& protos_n,
                                        TaskId m = 0, TaskId n = 0) {
  if (protos_m.empty() || protos_n.empty()) fail(ErrorKind::InvalidArgument, "class_to_class: empty prototype set");
  CorrelationMatrix M{m, n, Tensor::zeros({protos_m.size(), protos_n.size()})};
  for (std::size_t i = 0; i < protos_m.size(); ++i)
    for (std::size_t j = 0; j < protos_n.size(); ++j)
      M.entries.at(i, j) = prototype_mse(protos_m[i].vector, protos_n[j].vector);
  return M;
}

// min_i M[i,j]; within one task the diagonal entry i == j is skipped.
inline double class_to_task(std::size_t j, const CorrelationMatrix& M, bool same_task) {
  if (j >= M.cols()) fail(ErrorKind::OutOfRange, "class_to_task: column out of range");
  if (same_task && M.rows() < 2)
    fail(ErrorKind::InvalidArgument, "class_to_task: intra-task correlation needs at least two classes");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < M.rows(); ++i) {
    if (same_task && i == j) continue;
    best = std::min(best, M.at(i, j));
  }
  return best;
}

// R(p^n, p^m): mean over classes of task n of their class-to-task correlation with task m.
inline double task_to_task(const std::vector<Prototype>& protos_n, const std::vector<Prototype>& protos_m,
                           bool same_task) {
  const auto M = class_to_class(protos_m, protos_n);
  double s = 0.0;
  for (std::size_t j = 0; j < M.cols(); ++j) s += class_to_task(j, M, same_task);
  return s / static_cast<double>(M.cols());
}

// R(p^m, p^m), or 0 for a single-class task where no intra-task spread exists.
inline double intra_task_baseline(const std::vector<Prototype>& protos) {
  if (protos.size() < 2) return 0.0;
  return task_to_task(protos, protos, true);
}

// phi = max{(R_nm - R_mm) / R_nm, 0}, with phi = 0 when R_nm < 1e-12.
inline double gdc_weight(double r_nm, double r_mm) {
  if (!(r_nm >= 0.0) || !(r_mm >= 0.0)) fail(ErrorKind::InvalidArgument, "gdc_weight: correlations must be >= 0");
  if (r_nm < kPhiEpsilon) return 0.0;
  return std::max((r_nm - r_mm) / r_nm, 0.0);
}

}  // namespace rosetta
