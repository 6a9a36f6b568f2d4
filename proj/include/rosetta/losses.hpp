#pragma once

// Training objectives for the gated student: gate sparsity, feature
// distillation against the teacher, and the correlation-weighted gating
// diversity term. Every loss exists as a graph builder (used in training)
// and as a value-level function that evaluates the same builder.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "rosetta/diffcore.hpp"
#include "rosetta/error.hpp"
#include "rosetta/gatednet.hpp"

namespace rosetta {

struct LossWeights {
  double lambda_sparsity = 0.5;
  double lambda_kd = 1.0;
  double lambda_diversity = 1.0;
  double eta = 0.5;

  void validate() const {
    if (!(lambda_sparsity >= 0.0) || !(lambda_kd >= 0.0) || !(lambda_diversity >= 0.0))
      fail(ErrorKind::InvalidArgument, "loss weights must be non-negative");
    if (!(eta > 0.0 && eta < 1.0)) fail(ErrorKind::InvalidArgument, "eta must lie strictly inside (0,1)");
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// Soft gates of a batch, one [n, c_l] tensor per layer, plus the channels of
// each layer that no earlier task has claimed.
struct LayerGateBatch {
  std::vector<Tensor> gates;
  std::vector<GateMask> reserved;
};

inline constexpr double kRatioEpsilon = 1e-12;

// ---------------------------------------------------------------------------
// Graph builders.

// E_batch[ (1/L) sum_l ||G_l||_1 / c_l ]
inline NodeId sparsity_node(Graph& g, const std::vector<NodeId>& gates) {
  if (gates.empty()) fail(ErrorKind::InvalidArgument, "sparsity loss needs at least one layer");
  if (g.value(gates.front()).shape.at(0) == 0) fail(ErrorKind::InvalidArgument, "sparsity loss: empty batch");
  NodeId per_sample = g.mean(gates[0], 1);
  for (std::size_t l = 1; l < gates.size(); ++l) per_sample = g.add(per_sample, g.mean(gates[l], 1));
  return g.mean_all(g.scale(per_sample, 1.0 / static_cast<double>(gates.size())));
}

// (1/L) sum_l MSE(f_l, teacher_l); the teacher enters as constants.
inline NodeId kd_node(Graph& g, const std::vector<NodeId>& student, const std::vector<Tensor>& teacher) {
  if (student.size() != teacher.size() || student.empty())
    fail(ErrorKind::Shape, "kd loss: " + std::to_string(student.size()) + " student layers vs " +
                               std::to_string(teacher.size()) + " teacher layers");
  NodeId total = g.mse(student[0], g.constant(teacher[0]));
  for (std::size_t l = 1; l < student.size(); ++l) total = g.add(total, g.mse(student[l], g.constant(teacher[l])));
  return g.scale(total, 1.0 / static_cast<double>(student.size()));
}

// Indicator 1[g >= eta] on reserved channels, frozen as a constant.
inline Tensor activation_indicator(const Tensor& gates, const GateMask& reserved, double eta) {
  Tensor m = Tensor::zeros(gates.shape);
  const auto c = gates.cols();
  for (std::size_t i = 0; i < gates.numel(); ++i) m.data[i] = (reserved.at(i % c) && gates.data[i] >= eta) ? 1.0 : 0.0;
  return m;
}

// Per-sample ratio q = sum g 1[g>=eta] / sum g over reserved channels, [n].
// Samples whose reserved gate mass is below 1e-12 get q = 0.
inline NodeId activation_ratio_node(Graph& g, NodeId gates, const GateMask& reserved, double eta,
                                    const std::optional<Tensor>& indicator = std::nullopt) {
  const Tensor gv = g.value(gates);
  if (gv.rank() != 2 || reserved.size() != gv.shape[1])
    fail(ErrorKind::Shape, "activation ratio: reserved mask length " + std::to_string(reserved.size()) +
                               " vs gates " + Tensor::shape_string(gv.shape));
  const NodeId masked = g.mul(gates, g.constant(gate_tensor(reserved)));
  const Tensor ind = indicator ? *indicator : activation_indicator(gv, reserved, eta);
  const NodeId num = g.sum(g.mul(masked, g.constant(ind)), 1);
  const NodeId den = g.sum(masked, 1);
  const Tensor dv = g.value(den);
  Tensor guard = Tensor::zeros(dv.shape), keep = Tensor::zeros(dv.shape);
  for (std::size_t i = 0; i < dv.numel(); ++i) {
    const bool empty = dv.data[i] < kRatioEpsilon;
    guard.data[i] = empty ? 1.0 : 0.0;
    keep.data[i] = empty ? 0.0 : 1.0;
  }
  return g.div(g.mul(num, g.constant(keep)), g.add(den, g.constant(guard)));
}

// q log q + (1-q) log(1-q), element-wise, logs clamped at 1e-12.
inline NodeId layer_diversity_node(Graph& g, NodeId q) {
  const NodeId r = g.one_minus(q);
  return g.add(g.mul(q, g.log(q)), g.mul(r, g.log(r)));
}

// (1/L)(1/(t-1)) sum_l sum_i phi_i * mean_batch(L_div^{l})
inline NodeId weighted_diversity_node(Graph& g, const std::vector<NodeId>& gates, const std::vector<GateMask>& reserved,
                                      const std::vector<double>& phis, double eta,
                                      const std::vector<Tensor>* indicators = nullptr) {
  if (phis.empty()) fail(ErrorKind::InvalidArgument, "diversity loss applies only from the second task on");
  if (gates.size() != reserved.size() || gates.empty())
    fail(ErrorKind::Shape, "diversity loss: gate layers and reserved masks differ in count");
  NodeId total = 0;
  for (std::size_t l = 0; l < gates.size(); ++l) {
    std::optional<Tensor> ind;
    if (indicators) ind = indicators->at(l);
    const NodeId layer = g.mean_all(layer_diversity_node(g, activation_ratio_node(g, gates[l], reserved[l], eta, ind)));
    for (std::size_t i = 0; i < phis.size(); ++i) {
      const NodeId term = g.scale(layer, phis[i]);
      total = (l == 0 && i == 0) ? term : g.add(total, term);
    }
  }
  return g.scale(total, 1.0 / (static_cast<double>(gates.size()) * static_cast<double>(phis.size())));
}

// task + ls*sparsity + lkd*kd + ld*diversity; absent terms are skipped.
inline NodeId total_objective_node(Graph& g, NodeId task_loss, std::optional<NodeId> sparsity, std::optional<NodeId> kd,
                                   std::optional<NodeId> diversity, const LossWeights& w) {
  NodeId total = task_loss;
  if (sparsity) total = g.add(total, g.scale(*sparsity, w.lambda_sparsity));
  if (kd) total = g.add(total, g.scale(*kd, w.lambda_kd));
  if (diversity) total = g.add(total, g.scale(*diversity, w.lambda_diversity));
  return total;
}

// ---------------------------------------------------------------------------
// Value-level functions.

inline double sparsity_loss(const LayerGateBatch& batch) {
  Graph g;
  std::vector<NodeId> nodes;
  for (const auto& t : batch.gates) nodes.push_back(g.constant(t));
  return g.value(sparsity_node(g, nodes)).item();
}

inline double kd_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher) {
  Graph g;
  std::vector<NodeId> nodes;
  for (const auto& t : student) nodes.push_back(g.constant(t));
  return g.value(kd_node(g, nodes, teacher)).item();
}

// q for one gate vector already restricted to reserved channels.
inline double activation_ratio(std::span<const double> gates, double eta) {
  if (gates.empty()) return 0.0;
  Graph g;
  const NodeId n = g.constant(Tensor::matrix(1, gates.size(), {gates.begin(), gates.end()}));
  return g.value(activation_ratio_node(g, n, GateMask(gates.size(), 1), eta)).item();
}

inline double layer_diversity_loss(double q) {
  if (!(q >= 0.0 && q <= 1.0)) fail(ErrorKind::InvalidArgument, "diversity: q must lie in [0,1]");
  Graph g;
  return g.value(layer_diversity_node(g, g.constant(Tensor::scalar(q)))).item();
}

inline double weighted_diversity_loss(const LayerGateBatch& batch, const std::vector<double>& phis, double eta) {
  Graph g;
  std::vector<NodeId> nodes;
  for (const auto& t : batch.gates) nodes.push_back(g.constant(t));
  return g.value(weighted_diversity_node(g, nodes, batch.reserved, phis, eta)).item();
}

inline double total_objective(double task_loss, double sparsity, double kd, double diversity, const LossWeights& w) {
  for (double v : {task_loss, sparsity, kd, diversity})
    if (std::isnan(v)) fail(ErrorKind::NonFinite, "total objective: NaN component");
  w.validate();
  Graph g;
  const NodeId n = total_objective_node(g, g.constant(Tensor::scalar(task_loss)), g.constant(Tensor::scalar(sparsity)),
                                        g.constant(Tensor::scalar(kd)), g.constant(Tensor::scalar(diversity)), w);
  return g.value(n).item();
}

}  // namespace rosetta
