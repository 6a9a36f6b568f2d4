#pragma once

// Per-task pipeline: teacher training, gated student training with the
// composite objective, validation thresholds, discretization to static
// binary gates, fine-tuning of newly claimed channels, freezing, prototype
// extraction and the memory-bank commit. Plus binary-gated inference.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "rosetta/correlation.hpp"
#include "rosetta/dataset.hpp"
#include "rosetta/diffcore.hpp"
#include "rosetta/error.hpp"
#include "rosetta/gatednet.hpp"
#include "rosetta/losses.hpp"
#include "rosetta/membank.hpp"

namespace rosetta {

struct TrainConfig {
  std::size_t epochs_teacher = 20;
  std::size_t epochs_student = 30;
  std::size_t epochs_finetune = 2;
  double learning_rate = 0.2;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  LossWeights weights;
  std::size_t probe_count = 32;

  void validate() const {
    if (epochs_finetune < 1) fail(ErrorKind::InvalidArgument, "epochs_finetune must be at least 1");
    if (batch_size < 1) fail(ErrorKind::InvalidArgument, "batch_size must be at least 1");
    if (!(learning_rate > 0.0)) fail(ErrorKind::InvalidArgument, "learning_rate must be positive");
    weights.validate();
  }

  ConfigFingerprint fingerprint() const {
    return {seed, weights.lambda_sparsity, weights.lambda_kd, weights.lambda_diversity, weights.eta};
  }
};

// gamma per layer per channel.
struct ThresholdVector {
  std::vector<std::vector<double>> layers;
};

inline std::mt19937_64 task_rng(std::uint64_t seed, TaskId task, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(task), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

// Shuffled mini-batch row lists for one epoch.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch)));
  return out;
}

inline double accuracy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (labels.empty()) return 0.0;
  const auto k = logits.cols();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* z = &logits.data[i * k];
    const auto pred = static_cast<std::size_t>(std::max_element(z, z + k) - z);
    correct += pred == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Soft-gated student forward inside a graph.

struct StudentForward {
  NodeId embedding = 0;
  std::vector<NodeId> gates;
  std::vector<NodeId> features;
  NodeId logits = 0;
};

inline StudentForward student_forward(Graph& g, const NetworkNodes& nodes, const Tensor& class_embeddings,
                                      const Tensor& inputs) {
  StudentForward s;
  s.embedding = task_embedding_node(g, nodes.fc_class, g.constant(class_embeddings));
  NodeId f = g.constant(inputs);
  for (std::size_t l = 0; l < nodes.layers.size(); ++l) {
    const NodeId gate = soft_gates_node(g, nodes.gate_hidden[l], nodes.gate_output[l], f, s.embedding);
    f = gated_layer_node(g, nodes.layers[l], f, gate);
    s.gates.push_back(gate);
    s.features.push_back(f);
  }
  s.logits = apply(g, nodes.head, f);
  return s;
}

// Per-sample soft gates for every layer, each [n, c_l].
inline std::vector<Tensor> soft_gate_samples(const GatedNetwork& net, TaskId task, const Tensor& class_embeddings,
                                             const Tensor& inputs) {
  Graph g;
  const auto nodes = bind_network(g, net, task, BindOptions{});
  const auto s = student_forward(g, nodes, class_embeddings, inputs);
  std::vector<Tensor> out;
  for (auto id : s.gates) out.push_back(g.value(id));
  return out;
}

// gamma_l^c = mean over samples of the soft gate.
inline ThresholdVector estimate_thresholds(const std::vector<Tensor>& samples) {
  ThresholdVector t;
  for (const auto& layer : samples) {
    const auto n = layer.rows(), c = layer.cols();
    if (layer.rank() != 2 || n == 0) fail(ErrorKind::InvalidArgument, "estimate_thresholds: empty validation set");
    std::vector<double> gamma(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) gamma[j] += layer.data[i * c + j];
    for (auto& v : gamma) v /= static_cast<double>(n);
    t.layers.push_back(std::move(gamma));
  }
  return t;
}

inline ThresholdVector estimate_thresholds(const GatedNetwork& net, TaskId task, const Tensor& class_embeddings,
                                           const Dataset& val) {
  if (val.size() == 0) fail(ErrorKind::InvalidArgument, "estimate_thresholds: empty validation set");
  return estimate_thresholds(soft_gate_samples(net, task, class_embeddings, val.inputs));
}

// A channel is on when g >= gamma on a strict majority of samples.
inline BinaryGates discretize(const std::vector<Tensor>& samples, const ThresholdVector& thresholds) {
  if (samples.size() != thresholds.layers.size())
    fail(ErrorKind::Shape, "discretize: layer count differs between samples and thresholds");
  BinaryGates gates;
  for (std::size_t l = 0; l < samples.size(); ++l) {
    const auto& s = samples[l];
    const auto n = s.rows(), c = s.cols();
    if (thresholds.layers[l].size() != c) fail(ErrorKind::Shape, "discretize: threshold length mismatch");
    GateMask m(c, 0);
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t votes = 0;
      for (std::size_t i = 0; i < n; ++i) votes += s.data[i * c + j] >= thresholds.layers[l][j] ? 1 : 0;
      m[j] = 2 * votes > n ? 1 : 0;
    }
    gates.push_back(std::move(m));
  }
  return gates;
}

inline void freeze(GatedNetwork& net, const BinaryGates& gates) {
  if (gates.size() != net.freeze_mask.size()) fail(ErrorKind::Shape, "freeze: gate layer count mismatch");
  for (std::size_t l = 0; l < gates.size(); ++l) {
    if (gates[l].size() != net.freeze_mask[l].size()) fail(ErrorKind::Shape, "freeze: gate length mismatch");
    for (std::size_t c = 0; c < gates[l].size(); ++c) net.freeze_mask[l][c] |= gates[l][c];
  }
}

// SGD with static binary gates; only the head of `task` and the filters of
// unfrozen, gate-on channels move (gate-off channels receive zero gradient).
inline void finetune(GatedNetwork& net, TaskId task, const BinaryGates& gates, const Dataset& train,
                     const TrainConfig& config, std::mt19937_64& rng) {
  config.validate();
  const auto gate_values = gate_tensors(gates);
  for (std::size_t epoch = 0; epoch < config.epochs_finetune; ++epoch) {
    for (const auto& rows : epoch_batches(train.size(), config.batch_size, rng)) {
      const auto batch = train.gather(rows);
      Graph g;
      const auto nodes = bind_network(g, net, task, BindOptions{.train_layers = true, .train_head = true, .with_gate = false});
      NodeId f = g.constant(batch.inputs);
      for (std::size_t l = 0; l < nodes.layers.size(); ++l)
        f = gated_layer_node(g, nodes.layers[l], f, g.constant(gate_values[l]));
      const NodeId loss = g.softmax_cross_entropy(apply(g, nodes.head, f), batch.labels);
      masked_update(net, g.backward(loss), config.learning_rate, task);
    }
  }
}

inline void train_teacher(TeacherNetwork& teacher, const Dataset& train, const TrainConfig& config,
                          std::mt19937_64& rng) {
  for (std::size_t epoch = 0; epoch < config.epochs_teacher; ++epoch) {
    for (const auto& rows : epoch_batches(train.size(), config.batch_size, rng)) {
      const auto batch = train.gather(rows);
      Graph g;
      std::vector<LinearNodes> layers;
      for (std::size_t l = 0; l < teacher.layers.size(); ++l)
        layers.push_back(bind_linear(g, layer_name(l), teacher.layers[l], true));
      const auto head = bind_linear(g, "head", teacher.head, true);
      NodeId f = g.constant(batch.inputs);
      for (const auto& l : layers) f = gated_layer_node(g, l, f, std::nullopt);
      const auto grads = g.backward(g.softmax_cross_entropy(apply(g, head, f), batch.labels));
      for (std::size_t l = 0; l < teacher.layers.size(); ++l)
        detail::sgd(teacher.layers[l], grads, layer_name(l), config.learning_rate);
      detail::sgd(teacher.head, grads, "head", config.learning_rate);
    }
  }
}

// Current task's classes passed through every stored task's sub-network and
// compared with that task's stored prototypes.
inline std::vector<CrossTaskCorrelation> cross_task_correlations(const GatedNetwork& net, const MemoryBank& bank,
                                                                 const TaskData& task) {
  std::vector<CrossTaskCorrelation> out;
  for (const auto& rec : bank.records()) {
    CrossTaskCorrelation c;
    c.source_task = rec.task_id;
    c.prototypes = compute_prototypes(net, task.train, task.class_ids, rec.gates);
    c.r_cross = task_to_task(c.prototypes, rec.prototypes, false);
    c.phi = gdc_weight(c.r_cross, rec.baseline);
    out.push_back(std::move(c));
  }
  return out;
}

inline void train_student(GatedNetwork& net, TaskId task, const Tensor& class_embeddings, const TeacherNetwork& teacher,
                          const Dataset& train, const std::vector<double>& phis, const TrainConfig& config,
                          std::mt19937_64& rng) {
  const auto& w = config.weights;
  std::vector<GateMask> reserved;
  for (const auto& m : net.freeze_mask) {
    GateMask r(m.size());
    for (std::size_t c = 0; c < m.size(); ++c) r[c] = m[c] ? 0 : 1;
    reserved.push_back(std::move(r));
  }
  for (std::size_t epoch = 0; epoch < config.epochs_student; ++epoch) {
    for (const auto& rows : epoch_batches(train.size(), config.batch_size, rng)) {
      const auto batch = train.gather(rows);
      Graph g;
      const auto nodes =
          bind_network(g, net, task, BindOptions{.train_layers = true, .train_head = true, .train_gate = true});
      const auto s = student_forward(g, nodes, class_embeddings, batch.inputs);
      const NodeId task_loss = g.softmax_cross_entropy(s.logits, batch.labels);
      std::optional<NodeId> sparsity, kd, diversity;
      if (w.lambda_sparsity > 0.0) sparsity = sparsity_node(g, s.gates);
      if (w.lambda_kd > 0.0) kd = kd_node(g, s.features, teacher_forward(teacher, batch.inputs).features);
      if (w.lambda_diversity > 0.0 && !phis.empty())
        diversity = weighted_diversity_node(g, s.gates, reserved, phis, w.eta);
      const NodeId total = total_objective_node(g, task_loss, sparsity, kd, diversity, w);
      masked_update(net, g.backward(total), config.learning_rate, task);
    }
  }
}

// Classifier output of a stored task: its static gates and its stored head.
inline Tensor infer(const GatedNetwork& net, const MemoryBank& bank, TaskId task, const Tensor& input) {
  const auto& rec = bank.record(task);
  return network_forward(net, input, gate_tensors(rec.gates), rec.head).logits;
}

// Everything the stored tasks need, rebuilt from the bank alone: every
// claimed filter, each task's head, and the freeze mask. Unclaimed filters
// are zero; they are gated off for every stored task.
inline GatedNetwork reconstruct_network(const MemoryBank& bank) {
  GatedNetwork net;
  net.arch = Architecture::from_fingerprint(bank.fingerprint());
  for (std::size_t l = 0; l < net.arch.depth(); ++l) {
    net.layers.push_back({Tensor::zeros({net.arch.out_width(l), net.arch.in_width(l)}),
                          Tensor::zeros({net.arch.out_width(l)})});
    net.freeze_mask.emplace_back(net.arch.out_width(l), 0);
  }
  std::mt19937_64 rng(0);
  net.gate = GateModule::init(net.arch, rng);
  for (const auto& rec : bank.records()) {
    for (const auto& f : rec.filters) {
      auto& layer = net.layers.at(f.layer);
      std::copy(f.weights.begin(), f.weights.end(),
                layer.weight.data.begin() + static_cast<std::ptrdiff_t>(f.channel * layer.in_features()));
      layer.bias.data.at(f.channel) = f.bias;
    }
    net.heads[rec.task_id] = rec.head;
    freeze(net, rec.gates);
  }
  return net;
}

// Runs the full per-task pipeline and commits the result. On any failure the
// network and the bank are left exactly as they were.
inline TaskRecord train_task(GatedNetwork& net, MemoryBank& bank, const TaskData& task, const TrainConfig& config) {
  config.validate();
  if (bank.contains(task.task_id))
    fail(ErrorKind::Duplicate, "task " + std::to_string(task.task_id) + " already trained");
  if (task.train.size() == 0 || task.val.size() == 0)
    fail(ErrorKind::InvalidArgument, "task " + std::to_string(task.task_id) + " needs train and val samples");

  GatedNetwork work = net;
  const auto id = task.task_id;
  const auto classes = ClassEmbeddingSet::lookup(id, task.class_ids, work.arch.embed_dim);
  auto rng = task_rng(config.seed, id, 0);

  // (1) teacher
  TeacherNetwork teacher = TeacherNetwork::from_student(work, task.class_ids.size(), rng());
  train_teacher(teacher, task.train, config, rng);

  // (2) gated student; the diversity term is weighted per stored task
  TaskRecord rec;
  rec.task_id = id;
  rec.class_ids = task.class_ids;
  rec.config = config.fingerprint();
  rec.correlations = cross_task_correlations(work, bank, task);
  std::vector<double> phis;
  for (const auto& c : rec.correlations) phis.push_back(c.phi);
  work.add_head(id, task.class_ids.size(), rng());
  train_student(work, id, classes.embeddings, teacher, task.train, phis, config, rng);

  // (3)-(4) thresholds and static gates from the validation split
  const auto val_gates = soft_gate_samples(work, id, classes.embeddings, task.val.inputs);
  rec.gates = discretize(val_gates, estimate_thresholds(val_gates));

  // (5)-(6)
  finetune(work, id, rec.gates, task.train, config, rng);
  const auto before = work.freeze_mask;
  freeze(work, rec.gates);
  for (std::size_t l = 0; l < work.layers.size(); ++l) {
    const auto& layer = work.layers[l];
    const auto in = layer.in_features();
    for (std::size_t c = 0; c < layer.out_features(); ++c) {
      if (before[l][c] || !rec.gates[l][c]) continue;
      FilterSnapshot f{static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(c), {}, layer.bias.data[c]};
      f.weights.assign(layer.weight.data.begin() + static_cast<std::ptrdiff_t>(c * in),
                       layer.weight.data.begin() + static_cast<std::ptrdiff_t>((c + 1) * in));
      rec.filters.push_back(std::move(f));
    }
  }

  // (7) prototypes under the static gates
  rec.prototypes = compute_prototypes(work, task.train, task.class_ids, rec.gates);
  rec.baseline = intra_task_baseline(rec.prototypes);
  rec.task_embedding = task_embedding(classes, work.gate);
  rec.head = work.head(id);
  const auto probes = std::min(config.probe_count, task.val.size());
  rec.probe_inputs = task.val.slice(0, probes).inputs;
  rec.probe_logits = network_forward(work, rec.probe_inputs, gate_tensors(rec.gates), rec.head).logits;

  // (8) commit
  bank.store(rec);
  net = std::move(work);
  return rec;
}

}  // namespace rosetta
