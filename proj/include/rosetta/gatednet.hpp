#pragma once

// Task-aware gated network: per-channel gates generated from the layer input
// and a task embedding, gated dense layers, per-task heads and the
// monotone per-channel freeze mask.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rosetta/diffcore.hpp"
#include "rosetta/error.hpp"

namespace rosetta {

using diff::Graph;
using diff::GradientMap;
using diff::NodeId;
using diff::Tensor;

using TaskId = std::uint64_t;
using ClassId = std::uint64_t;

// One flag per output channel of a gated layer.
using GateMask = std::vector<std::uint8_t>;
// Static binary gates, one mask per gated layer.
using BinaryGates = std::vector<GateMask>;

struct Architecture {
  std::size_t input_dim = 8;
  std::vector<std::size_t> widths{64, 64, 64};
  std::size_t embed_dim = 16;
  std::size_t task_dim = 16;
  std::size_t gate_hidden = 32;
  // Initial bias of the gate MLP output, i.e. sigmoid(gate_bias_init) is the
  // starting gate value.
  double gate_bias_init = 1.0;

  std::size_t depth() const { return widths.size(); }
  std::size_t in_width(std::size_t layer) const { return layer == 0 ? input_dim : widths.at(layer - 1); }
  std::size_t out_width(std::size_t layer) const { return widths.at(layer); }
  std::size_t total_channels() const {
    std::size_t n = 0;
    for (auto w : widths) n += w;
    return n;
  }

  // Shape summary persisted in the memory bank header.
  std::vector<std::uint64_t> fingerprint() const {
    std::vector<std::uint64_t> fp{input_dim, widths.size()};
    for (auto w : widths) fp.push_back(w);
    fp.push_back(embed_dim);
    fp.push_back(task_dim);
    fp.push_back(gate_hidden);
    return fp;
  }

  static Architecture from_fingerprint(const std::vector<std::uint64_t>& fp) {
    if (fp.size() < 2 || fp.size() != fp[1] + 5) fail(ErrorKind::Fingerprint, "malformed architecture fingerprint");
    Architecture a;
    a.input_dim = fp[0];
    a.widths.assign(fp.begin() + 2, fp.begin() + 2 + static_cast<std::ptrdiff_t>(fp[1]));
    a.embed_dim = fp[fp.size() - 3];
    a.task_dim = fp[fp.size() - 2];
    a.gate_hidden = fp[fp.size() - 1];
    return a;
  }
};

// Dense layer with weight [out, in] (one row per output channel) and bias [out].
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t out_features() const { return weight.shape.at(0); }
  std::size_t in_features() const { return weight.shape.at(1); }

  static Linear init(std::size_t in, std::size_t out, double stddev, std::mt19937_64& rng, double bias = 0.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    Linear l{Tensor::zeros({out, in}), Tensor::filled({out}, bias)};
    for (auto& w : l.weight.data) w = dist(rng);
    return l;
  }

  friend bool operator==(const Linear&, const Linear&) = default;
};

// ---------------------------------------------------------------------------
// Class embeddings: a fixed pseudo-random lookup table keyed by global class id.

inline constexpr std::uint64_t kClassEmbeddingSeed = 0x524f534554544131ULL;

inline std::vector<double> class_embedding(ClassId id, std::size_t dim) {
  std::mt19937_64 rng(kClassEmbeddingSeed ^ (id * 0x9e3779b97f4a7c15ULL));
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = dist(rng);
  return v;
}

struct ClassEmbeddingSet {
  TaskId task_id = 0;
  std::vector<ClassId> class_ids;
  Tensor embeddings;  // [|C|, embed_dim]

  static ClassEmbeddingSet lookup(TaskId task, const std::vector<ClassId>& ids, std::size_t dim) {
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = i + 1; j < ids.size(); ++j)
        if (ids[i] == ids[j]) fail(ErrorKind::Duplicate, "class id " + std::to_string(ids[i]) + " repeated in task");
    ClassEmbeddingSet set{task, ids, Tensor::zeros({ids.size(), dim})};
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto e = class_embedding(ids[i], dim);
      std::copy(e.begin(), e.end(), set.embeddings.data.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    return set;
  }
};

// ---------------------------------------------------------------------------
// Gate module: class projection + one two-layer MLP per gated layer.

struct GateModule {
  Linear fc_class;             // embed_dim -> task_dim
  std::vector<Linear> hidden;  // (in_width(l) + task_dim) -> gate_hidden
  std::vector<Linear> output;  // gate_hidden -> out_width(l)

  static GateModule init(const Architecture& arch, std::mt19937_64& rng) {
    GateModule g;
    g.fc_class = Linear::init(arch.embed_dim, arch.task_dim, 1.0 / std::sqrt(double(arch.embed_dim)), rng);
    for (std::size_t l = 0; l < arch.depth(); ++l) {
      const auto in = arch.in_width(l) + arch.task_dim;
      g.hidden.push_back(Linear::init(in, arch.gate_hidden, std::sqrt(2.0 / double(in)), rng));
      g.output.push_back(Linear::init(arch.gate_hidden, arch.out_width(l), 1.0 / std::sqrt(double(arch.gate_hidden)),
                                      rng, arch.gate_bias_init));
    }
    return g;
  }

  friend bool operator==(const GateModule&, const GateModule&) = default;
};

struct GatedNetwork {
  Architecture arch;
  std::vector<Linear> layers;
  std::vector<GateMask> freeze_mask;
  std::map<TaskId, Linear> heads;
  GateModule gate;

  static GatedNetwork init(const Architecture& arch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    GatedNetwork net;
    net.arch = arch;
    for (std::size_t l = 0; l < arch.depth(); ++l) {
      net.layers.push_back(
          Linear::init(arch.in_width(l), arch.out_width(l), std::sqrt(2.0 / double(arch.in_width(l))), rng));
      net.freeze_mask.emplace_back(arch.out_width(l), 0);
    }
    net.gate = GateModule::init(arch, rng);
    return net;
  }

  // Creates (or replaces) the classifier head for a task.
  void add_head(TaskId task, std::size_t num_classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto in = arch.widths.back();
    heads[task] = Linear::init(in, num_classes, 1.0 / std::sqrt(double(in)), rng);
  }

  const Linear& head(TaskId task) const {
    const auto it = heads.find(task);
    if (it == heads.end()) fail(ErrorKind::NotFound, "no head for task " + std::to_string(task));
    return it->second;
  }

  std::size_t frozen_count() const {
    std::size_t n = 0;
    for (const auto& m : freeze_mask)
      for (auto f : m) n += f ? 1 : 0;
    return n;
  }
};

// Non-gated twin trained per task to guide the student's features.
struct TeacherNetwork {
  std::vector<Linear> layers;
  Linear head;

  // Deep copies the student's layer weights; the teacher never aliases them.
  static TeacherNetwork from_student(const GatedNetwork& net, std::size_t num_classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto in = net.arch.widths.back();
    return TeacherNetwork{net.layers, Linear::init(in, num_classes, 1.0 / std::sqrt(double(in)), rng)};
  }
};

// ---------------------------------------------------------------------------
// Graph binding.

struct LinearNodes {
  NodeId weight = 0;
  NodeId bias = 0;
};

// Per output channel freeze flags expanded to whole filters (row + bias entry).
inline std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> filter_masks(const Linear& l,
                                                                                     const GateMask& channels) {
  const auto out = l.out_features(), in = l.in_features();
  std::vector<std::uint8_t> w(out * in, 0), b(out, 0);
  for (std::size_t c = 0; c < out; ++c) {
    if (!channels.at(c)) continue;
    b[c] = 1;
    std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(c * in), in, std::uint8_t{1});
  }
  return {std::move(w), std::move(b)};
}

inline LinearNodes bind_linear(Graph& g, const std::string& prefix, const Linear& l, bool trainable,
                        const GateMask* frozen_channels = nullptr) {
  if (!trainable) return {g.constant(l.weight), g.constant(l.bias)};
  if (frozen_channels) {
    auto [wm, bm] = filter_masks(l, *frozen_channels);
    return {g.parameter(prefix + ".weight", l.weight, std::move(wm)),
            g.parameter(prefix + ".bias", l.bias, std::move(bm))};
  }
  return {g.parameter(prefix + ".weight", l.weight), g.parameter(prefix + ".bias", l.bias)};
}

// x[n,in] -> x W^T + b
inline NodeId apply(Graph& g, const LinearNodes& l, NodeId x) { return g.add(g.matmul_nt(x, l.weight), l.bias); }

struct BindOptions {
  bool train_layers = false;
  bool train_head = false;
  bool train_gate = false;
  bool with_gate = true;
};

struct NetworkNodes {
  std::vector<LinearNodes> layers;
  LinearNodes head;
  LinearNodes fc_class;
  std::vector<LinearNodes> gate_hidden;
  std::vector<LinearNodes> gate_output;
};

inline std::string layer_name(std::size_t l) { return "layer" + std::to_string(l); }

inline NetworkNodes bind_network(Graph& g, const GatedNetwork& net, TaskId task, const BindOptions& opt) {
  NetworkNodes nodes;
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    nodes.layers.push_back(bind_linear(g, layer_name(l), net.layers[l], opt.train_layers, &net.freeze_mask[l]));
  nodes.head = bind_linear(g, "head", net.head(task), opt.train_head);
  if (opt.with_gate) {
    nodes.fc_class = bind_linear(g, "gate.fc_class", net.gate.fc_class, opt.train_gate);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const auto p = "gate" + std::to_string(l);
      nodes.gate_hidden.push_back(bind_linear(g, p + ".hidden", net.gate.hidden[l], opt.train_gate));
      nodes.gate_output.push_back(bind_linear(g, p + ".output", net.gate.output[l], opt.train_gate));
    }
  }
  return nodes;
}

// Max over classes of the projected class embeddings.
inline NodeId task_embedding_node(Graph& g, const LinearNodes& fc_class, NodeId class_embeddings) {
  return g.max(apply(g, fc_class, class_embeddings), 0);
}

// Soft gates [n, out_width] for every sample of f[n, in_width]. The MLP input
// is the layer input (a 1x1 feature map is its own spatial pool) concatenated
// with the task embedding.
inline NodeId soft_gates_node(Graph& g, const LinearNodes& hidden, const LinearNodes& output, NodeId f, NodeId e) {
  const auto n = g.value(f).shape.at(0);
  const NodeId in = g.concat(f, g.broadcast_rows(e, n));
  return g.sigmoid(apply(g, output, g.relu(apply(g, hidden, in))));
}

// gates (.) relu(F f + b); gates is [c] (static) or [n,c] (per sample).
inline NodeId gated_layer_node(Graph& g, const LinearNodes& layer, NodeId f, std::optional<NodeId> gates) {
  const NodeId y = g.relu(apply(g, layer, f));
  if (!gates) return y;
  const auto& gv = g.value(*gates);
  const auto& yv = g.value(y);
  if (gv.shape != yv.shape && !(gv.rank() == 1 && gv.shape[0] == yv.shape.at(1))) {
    fail(ErrorKind::Shape, "gated layer: gate shape " + Tensor::shape_string(gv.shape) + " does not match output " +
                               Tensor::shape_string(yv.shape));
  }
  return g.mul(y, *gates);
}

inline Tensor gate_tensor(const GateMask& m) {
  Tensor t = Tensor::zeros({m.size()});
  for (std::size_t i = 0; i < m.size(); ++i) t.data[i] = m[i] ? 1.0 : 0.0;
  return t;
}

// ---------------------------------------------------------------------------
// Value-level operations.

inline void check_input(const Tensor& x, std::size_t width, const char* what) {
  if (x.rank() != 2 || x.shape[1] != width) {
    fail(ErrorKind::Shape, std::string(what) + ": expected [n," + std::to_string(width) + "] input, got " +
                               Tensor::shape_string(x.shape));
  }
}

inline std::vector<double> task_embedding(const ClassEmbeddingSet& classes, const GateModule& gate) {
  if (classes.class_ids.empty()) fail(ErrorKind::InvalidArgument, "task_embedding: empty class set");
  Graph g;
  const auto fc = bind_linear(g, "fc", gate.fc_class, false);
  return g.value(task_embedding_node(g, fc, g.constant(classes.embeddings))).data;
}

inline Tensor soft_gates(const Tensor& f, const std::vector<double>& e, const GateModule& gate, std::size_t layer) {
  if (layer >= gate.hidden.size()) {
    fail(ErrorKind::OutOfRange, "soft_gates: layer " + std::to_string(layer) + " out of range");
  }
  check_input(f, gate.hidden[layer].in_features() - e.size(), "soft_gates");
  Graph g;
  const auto h = bind_linear(g, "h", gate.hidden[layer], false);
  const auto o = bind_linear(g, "o", gate.output[layer], false);
  return g.value(soft_gates_node(g, h, o, g.constant(f), g.constant(Tensor::vector(e))));
}

inline Tensor gated_forward(const Tensor& f, const Tensor& gates, const Linear& layer) {
  check_input(f, layer.in_features(), "gated_forward");
  const auto c = layer.out_features();
  if (gates.shape.back() != c) {
    fail(ErrorKind::Shape, "gated_forward: gate length " + std::to_string(gates.shape.back()) + " != channels " +
                               std::to_string(c));
  }
  Graph g;
  const auto l = bind_linear(g, "l", layer, false);
  return g.value(gated_layer_node(g, l, g.constant(f), g.constant(gates)));
}

struct ForwardResult {
  std::vector<Tensor> features;  // output of every gated layer
  Tensor logits;
};

// Forward through every gated layer with the supplied gates (each [c] or
// [n,c]) and the given task's head.
inline ForwardResult network_forward(const GatedNetwork& net, const Tensor& input, const std::vector<Tensor>& gates,
                                     const Linear& head) {
  if (gates.size() != net.layers.size()) {
    fail(ErrorKind::InvalidArgument, "network_forward: expected " + std::to_string(net.layers.size()) +
                                         " gate vectors, got " + std::to_string(gates.size()));
  }
  check_input(input, net.arch.input_dim, "network_forward");
  Graph g;
  ForwardResult r;
  NodeId f = g.constant(input);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    f = gated_layer_node(g, bind_linear(g, layer_name(l), net.layers[l], false), f, g.constant(gates[l]));
    r.features.push_back(g.value(f));
  }
  r.logits = g.value(apply(g, bind_linear(g, "head", head, false), f));
  return r;
}

inline ForwardResult network_forward(const GatedNetwork& net, const Tensor& input, const std::vector<Tensor>& gates,
                                     TaskId task) {
  return network_forward(net, input, gates, net.head(task));
}

inline std::vector<Tensor> gate_tensors(const BinaryGates& gates) {
  std::vector<Tensor> t;
  for (const auto& m : gates) t.push_back(gate_tensor(m));
  return t;
}

inline ForwardResult network_forward(const GatedNetwork& net, const Tensor& input, const BinaryGates& gates,
                                     TaskId task) {
  return network_forward(net, input, gate_tensors(gates), net.head(task));
}

// Output of the last gated layer only; no head required.
inline Tensor network_features(const GatedNetwork& net, const Tensor& input, const BinaryGates& gates) {
  if (gates.size() != net.layers.size()) fail(ErrorKind::InvalidArgument, "network_features: gate count mismatch");
  check_input(input, net.arch.input_dim, "network_features");
  Graph g;
  NodeId f = g.constant(input);
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    f = gated_layer_node(g, bind_linear(g, layer_name(l), net.layers[l], false), f, g.constant(gate_tensor(gates[l])));
  return g.value(f);
}

inline ForwardResult teacher_forward(const TeacherNetwork& teacher, const Tensor& input) {
  Graph g;
  ForwardResult r;
  NodeId f = g.constant(input);
  for (std::size_t l = 0; l < teacher.layers.size(); ++l) {
    f = gated_layer_node(g, bind_linear(g, layer_name(l), teacher.layers[l], false), f, std::nullopt);
    r.features.push_back(g.value(f));
  }
  r.logits = g.value(apply(g, bind_linear(g, "head", teacher.head, false), f));
  return r;
}

// ---------------------------------------------------------------------------
// Parameter updates.

namespace detail {

inline void sgd(Tensor& param, const GradientMap& grads, const std::string& name, double lr,
                const std::vector<std::uint8_t>* frozen = nullptr) {
  const auto it = grads.find(name);
  if (it == grads.end()) return;
  if (it->second.shape != param.shape) {
    fail(ErrorKind::Shape, "update '" + name + "': gradient shape " + Tensor::shape_string(it->second.shape) +
                               " vs parameter " + Tensor::shape_string(param.shape));
  }
  for (std::size_t i = 0; i < param.numel(); ++i) {
    if (frozen && (*frozen)[i]) continue;
    param.data[i] -= lr * it->second.data[i];
  }
}

inline void sgd(Linear& l, const GradientMap& grads, const std::string& prefix, double lr,
                const GateMask* frozen_channels = nullptr) {
  if (frozen_channels) {
    const auto [wm, bm] = filter_masks(l, *frozen_channels);
    sgd(l.weight, grads, prefix + ".weight", lr, &wm);
    sgd(l.bias, grads, prefix + ".bias", lr, &bm);
  } else {
    sgd(l.weight, grads, prefix + ".weight", lr);
    sgd(l.bias, grads, prefix + ".bias", lr);
  }
}

}  // namespace detail

// Plain gradient step. Filters of frozen channels are skipped entirely; the
// head of `task` and the gate module are always updated. Parameters absent
// from `grads` are left alone.
inline void masked_update(GatedNetwork& net, const GradientMap& grads, double lr, std::optional<TaskId> task = {}) {
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    detail::sgd(net.layers[l], grads, layer_name(l), lr, &net.freeze_mask[l]);
  if (task) {
    auto it = net.heads.find(*task);
    if (it != net.heads.end()) detail::sgd(it->second, grads, "head", lr);
  }
  detail::sgd(net.gate.fc_class, grads, "gate.fc_class", lr);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto p = "gate" + std::to_string(l);
    detail::sgd(net.gate.hidden[l], grads, p + ".hidden", lr);
    detail::sgd(net.gate.output[l], grads, p + ".output", lr);
  }
}

}  // namespace rosetta
