#pragma once

// Minimal reverse-mode differentiation over dense row-major double tensors.
//
// Graphs are define-by-run: every node is evaluated when it is added, so node
// ids are already in topological order and backward() is a single reverse
// sweep. All reductions run in a fixed sequential order, which makes repeated
// evaluation bit-identical.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rosetta/error.hpp"

namespace rosetta::diff {

inline constexpr double kLogEpsilon = 1e-12;

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (count(shape) != data.size()) {
      std::ostringstream os;
      os << "tensor data length " << data.size() << " does not match shape " << shape_string(shape);
      fail(ErrorKind::Shape, os.str());
    }
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    const auto n = count(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor filled(std::vector<std::size_t> s, double v) {
    const auto n = count(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor vector(std::vector<double> v) {
    const auto n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
  static std::string shape_string(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  bool is_scalar() const { return data.size() == 1; }
  double item() const { return data.at(0); }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

using NodeId = std::size_t;

enum class Op {
  Parameter,
  Constant,
  MatMul,
  MatMulNT,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  AddScalar,
  Sigmoid,
  Relu,
  Log,
  MeanAxis,
  SumAxis,
  MaxAxis,
  MeanAll,
  SumAll,
  Mse,
  SoftmaxCrossEntropy,
  Concat,
  BroadcastRows,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Parameter: return "parameter";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::MatMulNT: return "matmul_nt";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::Log: return "log";
    case Op::MeanAxis: return "mean_axis";
    case Op::SumAxis: return "sum_axis";
    case Op::MaxAxis: return "max_axis";
    case Op::MeanAll: return "mean_all";
    case Op::SumAll: return "sum_all";
    case Op::Mse: return "mse";
    case Op::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::Concat: return "concat";
    case Op::BroadcastRows: return "broadcast_rows";
  }
  return "?";
}

using GradientMap = std::map<std::string, Tensor>;

class Graph {
 public:
  // A trainable parameter. `frozen` (optional, one flag per element) marks
  // entries whose gradient is forced to exactly zero.
  NodeId parameter(std::string name, Tensor value, std::vector<std::uint8_t> frozen = {}) {
    if (!frozen.empty() && frozen.size() != value.numel()) {
      fail(ErrorKind::Shape, "parameter '" + name + "': frozen mask length does not match value");
    }
    if (params_.count(name)) fail(ErrorKind::Duplicate, "parameter '" + name + "' registered twice");
    Node n;
    n.op = Op::Parameter;
    n.value = std::move(value);
    n.name = name;
    n.frozen = std::move(frozen);
    const auto id = push(std::move(n));
    params_.emplace(std::move(name), id);
    return id;
  }

  NodeId constant(Tensor value) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  std::size_t size() const { return nodes_.size(); }

  // a[n,k] * b[k,m]
  NodeId matmul(NodeId a, NodeId b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require_rank(Op::MatMul, A, 2);
    require_rank(Op::MatMul, B, 2);
    if (A.shape[1] != B.shape[0]) shape_error(Op::MatMul, A, B);
    const std::size_t n = A.shape[0], k = A.shape[1], m = B.shape[1];
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += A.data[i * k + p] * B.data[p * m + j];
        out.data[i * m + j] = s;
      }
    return push_op(Op::MatMul, {a, b}, std::move(out));
  }

  // a[n,k] * b[m,k]^T, the layout used for weight matrices (one row per output channel).
  NodeId matmul_nt(NodeId a, NodeId b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require_rank(Op::MatMulNT, A, 2);
    require_rank(Op::MatMulNT, B, 2);
    if (A.shape[1] != B.shape[1]) shape_error(Op::MatMulNT, A, B);
    const std::size_t n = A.shape[0], k = A.shape[1], m = B.shape[0];
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        const double* ar = &A.data[i * k];
        const double* br = &B.data[j * k];
        for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
        out.data[i * m + j] = s;
      }
    return push_op(Op::MatMulNT, {a, b}, std::move(out));
  }

  NodeId add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
  // Element-wise product; b may also be a per-channel vector broadcast over rows.
  NodeId mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }
  NodeId div(NodeId a, NodeId b) { return binary(Op::Div, a, b); }

  NodeId scale(NodeId a, double s) {
    Tensor out = value(a);
    for (auto& v : out.data) v *= s;
    return push_op(Op::Scale, {a}, std::move(out), s);
  }
  NodeId add_scalar(NodeId a, double s) {
    Tensor out = value(a);
    for (auto& v : out.data) v += s;
    return push_op(Op::AddScalar, {a}, std::move(out), s);
  }
  NodeId one_minus(NodeId a) { return add_scalar(scale(a, -1.0), 1.0); }

  NodeId sigmoid(NodeId a) {
    Tensor out = value(a);
    for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return push_op(Op::Sigmoid, {a}, std::move(out));
  }
  NodeId relu(NodeId a) {
    Tensor out = value(a);
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return push_op(Op::Relu, {a}, std::move(out));
  }
  // log(max(x, 1e-12))
  NodeId log(NodeId a) {
    Tensor out = value(a);
    for (auto& v : out.data) v = std::log(std::max(v, kLogEpsilon));
    return push_op(Op::Log, {a}, std::move(out));
  }

  NodeId mean(NodeId a, std::size_t axis) { return reduce_axis(Op::MeanAxis, a, axis); }
  NodeId sum(NodeId a, std::size_t axis) { return reduce_axis(Op::SumAxis, a, axis); }
  NodeId max(NodeId a, std::size_t axis) { return reduce_axis(Op::MaxAxis, a, axis); }

  NodeId mean_all(NodeId a) {
    const auto& A = value(a);
    double s = 0.0;
    for (double v : A.data) s += v;
    return push_op(Op::MeanAll, {a}, Tensor::scalar(s / static_cast<double>(A.numel())));
  }
  NodeId sum_all(NodeId a) {
    double s = 0.0;
    for (double v : value(a).data) s += v;
    return push_op(Op::SumAll, {a}, Tensor::scalar(s));
  }

  // Mean of squared component differences.
  NodeId mse(NodeId a, NodeId b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.shape != B.shape) shape_error(Op::Mse, A, B);
    double s = 0.0;
    for (std::size_t i = 0; i < A.numel(); ++i) {
      const double d = A.data[i] - B.data[i];
      s += d * d;
    }
    return push_op(Op::Mse, {a, b}, Tensor::scalar(s / static_cast<double>(A.numel())));
  }

  // Mean over rows of the softmax cross-entropy of logits[n,k] against integer labels.
  NodeId softmax_cross_entropy(NodeId logits, const std::vector<std::size_t>& labels) {
    const auto& Z = value(logits);
    require_rank(Op::SoftmaxCrossEntropy, Z, 2);
    const std::size_t n = Z.shape[0], k = Z.shape[1];
    if (labels.size() != n) {
      shape_error(Op::SoftmaxCrossEntropy, Z, Tensor::zeros({labels.size()}));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] >= k) fail(ErrorKind::OutOfRange, "softmax_cross_entropy: label out of range");
      const double* z = &Z.data[i * k];
      const double zmax = *std::max_element(z, z + k);
      double se = 0.0;
      for (std::size_t j = 0; j < k; ++j) se += std::exp(z[j] - zmax);
      total += std::log(se) + zmax - z[labels[i]];
    }
    Node node;
    node.op = Op::SoftmaxCrossEntropy;
    node.inputs = {logits};
    node.value = Tensor::scalar(total / static_cast<double>(n));
    node.aux = labels;
    return push(std::move(node));
  }

  // Column-wise concatenation of two [n,*] matrices.
  NodeId concat(NodeId a, NodeId b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require_rank(Op::Concat, A, 2);
    require_rank(Op::Concat, B, 2);
    if (A.shape[0] != B.shape[0]) shape_error(Op::Concat, A, B);
    const std::size_t n = A.shape[0], ca = A.shape[1], cb = B.shape[1];
    Tensor out = Tensor::zeros({n, ca + cb});
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(&A.data[i * ca], ca, &out.data[i * (ca + cb)]);
      std::copy_n(&B.data[i * cb], cb, &out.data[i * (ca + cb) + ca]);
    }
    return push_op(Op::Concat, {a, b}, std::move(out));
  }

  // Repeat a vector [c] as rows of an [n,c] matrix.
  NodeId broadcast_rows(NodeId v, std::size_t n) {
    const auto& V = value(v);
    require_rank(Op::BroadcastRows, V, 1);
    const std::size_t c = V.shape[0];
    Tensor out = Tensor::zeros({n, c});
    for (std::size_t i = 0; i < n; ++i) std::copy_n(V.data.data(), c, &out.data[i * c]);
    return push_op(Op::BroadcastRows, {v}, std::move(out));
  }

  // Gradients of a scalar node with respect to every parameter in the graph.
  // Parameters the loss does not reach get an all-zero gradient.
  GradientMap backward(NodeId loss) const {
    const auto& L = value(loss);
    if (!L.is_scalar()) {
      fail(ErrorKind::Shape, "backward: loss node " + std::to_string(loss) + " is not scalar, shape " +
                                 Tensor::shape_string(L.shape));
    }
    std::vector<Tensor> grads(loss + 1);
    grads[loss] = Tensor(L.shape, {1.0});
    for (std::size_t idx = loss + 1; idx-- > 0;) {
      if (grads[idx].data.empty()) continue;
      propagate(idx, grads);
    }
    GradientMap out;
    for (const auto& [name, id] : params_) {
      const auto& node = nodes_[id];
      Tensor g = (id <= loss && !grads[id].data.empty()) ? grads[id] : Tensor::zeros(node.value.shape);
      for (std::size_t i = 0; i < node.frozen.size(); ++i)
        if (node.frozen[i]) g.data[i] = 0.0;
      out.emplace(name, std::move(g));
    }
    return out;
  }

  const std::map<std::string, NodeId>& parameters() const { return params_; }

 private:
  struct Node {
    Op op = Op::Constant;
    std::vector<NodeId> inputs;
    Tensor value;
    double scalar = 0.0;
    std::size_t axis = 0;
    std::vector<std::size_t> aux;
    std::string name;
    std::vector<std::uint8_t> frozen;
  };

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId push_op(Op op, std::vector<NodeId> inputs, Tensor value, double scalar = 0.0, std::size_t axis = 0) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.scalar = scalar;
    n.axis = axis;
    return push(std::move(n));
  }

  [[noreturn]] void shape_error(Op op, const Tensor& a, const Tensor& b) const {
    std::ostringstream os;
    os << "node " << nodes_.size() << " (" << op_name(op) << "): shape mismatch " << Tensor::shape_string(a.shape)
       << " vs " << Tensor::shape_string(b.shape);
    fail(ErrorKind::Shape, os.str());
  }

  void require_rank(Op op, const Tensor& t, std::size_t rank) const {
    if (t.rank() != rank) {
      std::ostringstream os;
      os << "node " << nodes_.size() << " (" << op_name(op) << "): expected rank " << rank << ", got shape "
         << Tensor::shape_string(t.shape);
      fail(ErrorKind::Shape, os.str());
    }
  }

  // b broadcasts when it is a vector matching the trailing dimension of a 2-D a.
  bool broadcasts(const Tensor& A, const Tensor& B) const {
    return A.rank() == 2 && B.rank() == 1 && B.shape[0] == A.shape[1];
  }

  NodeId binary(Op op, NodeId a, NodeId b) {
    const auto& A = value(a);
    const auto& B = value(b);
    const bool same = A.shape == B.shape;
    if (!same && !broadcasts(A, B)) shape_error(op, A, B);
    Tensor out = A;
    const std::size_t c = B.numel();
    for (std::size_t i = 0; i < out.numel(); ++i) {
      const double bv = same ? B.data[i] : B.data[i % c];
      switch (op) {
        case Op::Add: out.data[i] = A.data[i] + bv; break;
        case Op::Sub: out.data[i] = A.data[i] - bv; break;
        case Op::Mul: out.data[i] = A.data[i] * bv; break;
        case Op::Div: out.data[i] = A.data[i] / bv; break;
        default: break;
      }
    }
    return push_op(op, {a, b}, std::move(out));
  }

  NodeId reduce_axis(Op op, NodeId a, std::size_t axis) {
    const auto& A = value(a);
    require_rank(op, A, 2);
    if (axis > 1) fail(ErrorKind::OutOfRange, std::string(op_name(op)) + ": axis must be 0 or 1");
    const std::size_t n = A.shape[0], c = A.shape[1];
    if (n == 0 || c == 0) fail(ErrorKind::Shape, std::string(op_name(op)) + ": reduction over empty axis");
    const std::size_t outer = axis == 0 ? c : n;
    const std::size_t inner = axis == 0 ? n : c;
    Tensor out = Tensor::zeros({outer});
    std::vector<std::size_t> argmax(op == Op::MaxAxis ? outer : 0);
    for (std::size_t o = 0; o < outer; ++o) {
      double acc = op == Op::MaxAxis ? -std::numeric_limits<double>::infinity() : 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const double v = axis == 0 ? A.data[i * c + o] : A.data[o * c + i];
        if (op == Op::MaxAxis) {
          if (v > acc || i == 0) {
            acc = v;
            argmax[o] = i;
          }
        } else {
          acc += v;
        }
      }
      out.data[o] = op == Op::MeanAxis ? acc / static_cast<double>(inner) : acc;
    }
    Node node;
    node.op = op;
    node.inputs = {a};
    node.value = std::move(out);
    node.axis = axis;
    node.aux = std::move(argmax);
    return push(std::move(node));
  }

  static void accumulate(Tensor& into, const Tensor& like, std::size_t i, double v) {
    if (into.data.empty()) into = Tensor::zeros(like.shape);
    into.data[i] += v;
  }

  void propagate(std::size_t idx, std::vector<Tensor>& grads) const {
    const Node& node = nodes_[idx];
    const Tensor& g = grads[idx];
    const auto& in = node.inputs;
    switch (node.op) {
      case Op::Parameter:
      case Op::Constant:
        return;
      case Op::MatMul: {
        const auto& A = value(in[0]);
        const auto& B = value(in[1]);
        const std::size_t n = A.shape[0], k = A.shape[1], m = B.shape[1];
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += g.data[i * m + j] * B.data[p * m + j];
            accumulate(grads[in[0]], A, i * k + p, s);
          }
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += A.data[i * k + p] * g.data[i * m + j];
            accumulate(grads[in[1]], B, p * m + j, s);
          }
        return;
      }
      case Op::MatMulNT: {
        const auto& A = value(in[0]);
        const auto& B = value(in[1]);
        const std::size_t n = A.shape[0], k = A.shape[1], m = B.shape[0];
        Tensor& ga = grads[in[0]];
        if (ga.data.empty()) ga = Tensor::zeros(A.shape);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double gij = g.data[i * m + j];
            if (gij == 0.0) continue;
            const double* br = &B.data[j * k];
            double* gr = &ga.data[i * k];
            for (std::size_t p = 0; p < k; ++p) gr[p] += gij * br[p];
          }
        Tensor& gb = grads[in[1]];
        if (gb.data.empty()) gb = Tensor::zeros(B.shape);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double gij = g.data[i * m + j];
            if (gij == 0.0) continue;
            const double* ar = &A.data[i * k];
            double* gr = &gb.data[j * k];
            for (std::size_t p = 0; p < k; ++p) gr[p] += gij * ar[p];
          }
        return;
      }
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div: {
        const auto& A = value(in[0]);
        const auto& B = value(in[1]);
        const bool same = A.shape == B.shape;
        const std::size_t c = B.numel();
        for (std::size_t i = 0; i < A.numel(); ++i) {
          const std::size_t bi = same ? i : i % c;
          const double a = A.data[i], b = B.data[bi], gi = g.data[i];
          double da = 0.0, db = 0.0;
          switch (node.op) {
            case Op::Add: da = gi; db = gi; break;
            case Op::Sub: da = gi; db = -gi; break;
            case Op::Mul: da = gi * b; db = gi * a; break;
            case Op::Div: da = gi / b; db = -gi * a / (b * b); break;
            default: break;
          }
          accumulate(grads[in[0]], A, i, da);
          accumulate(grads[in[1]], B, bi, db);
        }
        return;
      }
      case Op::Scale: {
        const auto& A = value(in[0]);
        for (std::size_t i = 0; i < A.numel(); ++i) accumulate(grads[in[0]], A, i, node.scalar * g.data[i]);
        return;
      }
      case Op::AddScalar: {
        const auto& A = value(in[0]);
        for (std::size_t i = 0; i < A.numel(); ++i) accumulate(grads[in[0]], A, i, g.data[i]);
        return;
      }
      case Op::Sigmoid: {
        const auto& A = value(in[0]);
        for (std::size_t i = 0; i < A.numel(); ++i) {
          const double y = node.value.data[i];
          accumulate(grads[in[0]], A, i, g.data[i] * y * (1.0 - y));
        }
        return;
      }
      case Op::Relu: {
        const auto& A = value(in[0]);
        for (std::size_t i = 0; i < A.numel(); ++i)
          accumulate(grads[in[0]], A, i, A.data[i] > 0.0 ? g.data[i] : 0.0);
        return;
      }
      case Op::Log: {
        const auto& A = value(in[0]);
        for (std::size_t i = 0; i < A.numel(); ++i)
          accumulate(grads[in[0]], A, i, A.data[i] > kLogEpsilon ? g.data[i] / A.data[i] : 0.0);
        return;
      }
      case Op::MeanAxis:
      case Op::SumAxis:
      case Op::MaxAxis: {
        const auto& A = value(in[0]);
        const std::size_t n = A.shape[0], c = A.shape[1];
        const std::size_t outer = node.axis == 0 ? c : n;
        const std::size_t inner = node.axis == 0 ? n : c;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t flat = node.axis == 0 ? i * c + o : o * c + i;
            double d = 0.0;
            if (node.op == Op::MaxAxis) {
              d = node.aux[o] == i ? g.data[o] : 0.0;
            } else {
              d = node.op == Op::MeanAxis ? g.data[o] / static_cast<double>(inner) : g.data[o];
            }
            accumulate(grads[in[0]], A, flat, d);
          }
        return;
      }
      case Op::MeanAll:
      case Op::SumAll: {
        const auto& A = value(in[0]);
        const double d = node.op == Op::MeanAll ? g.item() / static_cast<double>(A.numel()) : g.item();
        for (std::size_t i = 0; i < A.numel(); ++i) accumulate(grads[in[0]], A, i, d);
        return;
      }
      case Op::Mse: {
        const auto& A = value(in[0]);
        const auto& B = value(in[1]);
        const double f = 2.0 * g.item() / static_cast<double>(A.numel());
        for (std::size_t i = 0; i < A.numel(); ++i) {
          const double d = f * (A.data[i] - B.data[i]);
          accumulate(grads[in[0]], A, i, d);
          accumulate(grads[in[1]], B, i, -d);
        }
        return;
      }
      case Op::SoftmaxCrossEntropy: {
        const auto& Z = value(in[0]);
        const std::size_t n = Z.shape[0], k = Z.shape[1];
        const double f = g.item() / static_cast<double>(n);
        std::vector<double> p(k);
        for (std::size_t i = 0; i < n; ++i) {
          const double* z = &Z.data[i * k];
          const double zmax = *std::max_element(z, z + k);
          double se = 0.0;
          for (std::size_t j = 0; j < k; ++j) se += (p[j] = std::exp(z[j] - zmax));
          for (std::size_t j = 0; j < k; ++j) {
            const double target = node.aux[i] == j ? 1.0 : 0.0;
            accumulate(grads[in[0]], Z, i * k + j, f * (p[j] / se - target));
          }
        }
        return;
      }
      case Op::Concat: {
        const auto& A = value(in[0]);
        const auto& B = value(in[1]);
        const std::size_t n = A.shape[0], ca = A.shape[1], cb = B.shape[1];
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < ca; ++j) accumulate(grads[in[0]], A, i * ca + j, g.data[i * (ca + cb) + j]);
          for (std::size_t j = 0; j < cb; ++j)
            accumulate(grads[in[1]], B, i * cb + j, g.data[i * (ca + cb) + ca + j]);
        }
        return;
      }
      case Op::BroadcastRows: {
        const auto& V = value(in[0]);
        const std::size_t c = V.shape[0], n = node.value.shape[0];
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) accumulate(grads[in[0]], V, j, g.data[i * c + j]);
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> params_;
};

// ---------------------------------------------------------------------------
// Finite-difference self-check.

using ParameterSet = std::map<std::string, Tensor>;

// Rebuilds the loss graph from a parameter set and returns the scalar loss node.
using LossBuilder = std::function<NodeId(Graph&, const ParameterSet&)>;

struct ParameterCheck {
  std::string name;
  double max_relative_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<ParameterCheck> parameters;
  double max_relative_error = 0.0;
  bool passed = false;
};

// Compares backward() against central differences for every element of every
// parameter in `params`. Relative error is |analytic - numeric| / max(|numeric|, 1e-8).
inline GradCheckReport grad_check(const LossBuilder& build, const ParameterSet& params, double h, double tol) {
  if (!(h > 0.0)) fail(ErrorKind::InvalidArgument, "grad_check: h must be positive");
  // tol == 0 is accepted and can never pass; it is how callers confirm the check has teeth.
  if (!(tol >= 0.0)) fail(ErrorKind::InvalidArgument, "grad_check: tol must be non-negative");

  Graph graph;
  const NodeId loss = build(graph, params);
  const GradientMap analytic = graph.backward(loss);

  auto evaluate = [&](const ParameterSet& p) {
    Graph g;
    const NodeId l = build(g, p);
    return g.value(l).item();
  };

  GradCheckReport report;
  report.passed = true;
  ParameterSet probe = params;
  for (const auto& [name, tensor] : params) {
    const auto it = analytic.find(name);
    if (it == analytic.end()) fail(ErrorKind::NotFound, "grad_check: builder did not register '" + name + "'");
    ParameterCheck check{name, 0.0, true};
    Tensor& slot = probe.at(name);
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      const double orig = tensor.data[i];
      slot.data[i] = orig + h;
      const double up = evaluate(probe);
      slot.data[i] = orig - h;
      const double down = evaluate(probe);
      slot.data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = std::abs(it->second.data[i] - numeric) / std::max(std::abs(numeric), 1e-8);
      check.max_relative_error = std::max(check.max_relative_error, rel);
    }
    check.passed = check.max_relative_error < tol;
    report.passed = report.passed && check.passed;
    report.max_relative_error = std::max(report.max_relative_error, check.max_relative_error);
    report.parameters.push_back(std::move(check));
  }
  return report;
}

}  // namespace rosetta::diff
