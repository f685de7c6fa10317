// Reverse-mode automatic differentiation over a flat tape of tensor nodes.
//
// The operation set is closed: thirteen compute kinds plus leaf nodes.
// Nodes evaluate eagerly as the graph is built; forward() re-evaluates the
// tape after leaf values change, and backward() accumulates gradients for
// parameter leaves in reverse topological (= insertion) order. detach is
// identity in the forward pass and a hard stop in the backward pass.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowhijack/tensor.hpp"

namespace flowhijack {

enum class Op {
  kInput,
  kParam,
  kAdd,
  kSub,
  kMul,
  kMatmul,
  kTanh,
  kConcat,
  kSum,
  kMean,
  kSqNorm,
  kL2Norm,
  kAbs,
  kScale,
  kDetach,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kMatmul: return "matmul";
    case Op::kTanh: return "tanh";
    case Op::kConcat: return "concat";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSqNorm: return "sqnorm";
    case Op::kL2Norm: return "l2norm";
    case Op::kAbs: return "abs";
    case Op::kScale: return "scale";
    case Op::kDetach: return "detach";
  }
  return "?";
}

class GraphError : public std::runtime_error {
 public:
  GraphError(std::size_t node, Op op, const std::string& what)
      : std::runtime_error("node " + std::to_string(node) + " (" +
                           op_name(op) + "): " + what) {}
};

using NodeId = std::size_t;

class Graph {
 public:
  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;        // empty until backward touches it
    double attr = 0.0;  // scale factor
    std::string name;   // leaves only
  };

  NodeId input(Tensor t, std::string name = {}) {
    return push_leaf(Op::kInput, std::move(t), std::move(name));
  }

  NodeId param(Tensor t, std::string name = {}) {
    NodeId id = push_leaf(Op::kParam, std::move(t), std::move(name));
    params_.push_back(id);
    return id;
  }

  NodeId add(NodeId a, NodeId b) { return push_binary(Op::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return push_binary(Op::kSub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return push_binary(Op::kMul, a, b); }

  NodeId matmul(NodeId a, NodeId b) {
    Node n{Op::kMatmul, {a, b}, {}, {}, 0.0, {}};
    n.value = eval_matmul(nodes_.size(), value(a), value(b));
    return push(std::move(n));
  }

  NodeId tanh(NodeId a) { return push_unary(Op::kTanh, a); }

  NodeId concat(const std::vector<NodeId>& parts) {
    if (parts.empty())
      throw GraphError(nodes_.size(), Op::kConcat, "no inputs");
    Node n{Op::kConcat, parts, {}, {}, 0.0, {}};
    n.value = eval_concat(parts);
    return push(std::move(n));
  }

  NodeId sum(NodeId a) { return push_unary(Op::kSum, a); }
  NodeId mean(NodeId a) { return push_unary(Op::kMean, a); }
  NodeId sqnorm(NodeId a) { return push_unary(Op::kSqNorm, a); }
  NodeId l2norm(NodeId a) { return push_unary(Op::kL2Norm, a); }
  NodeId abs(NodeId a) { return push_unary(Op::kAbs, a); }

  NodeId scale(NodeId a, double factor) {
    Node n{Op::kScale, {a}, {}, {}, factor, {}};
    n.value = eval_node(nodes_.size(), n);
    return push(std::move(n));
  }

  NodeId detach(NodeId a) { return push_unary(Op::kDetach, a); }

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  const Tensor& grad(NodeId id) const { return nodes_.at(id).grad; }
  Op op(NodeId id) const { return nodes_.at(id).op; }
  const std::string& name(NodeId id) const { return nodes_.at(id).name; }
  const std::vector<NodeId>& params() const { return params_; }

  // Rebind a leaf. Callers must run forward() before reading op values.
  void set_value(NodeId id, Tensor t) {
    Node& n = nodes_.at(id);
    if (n.op != Op::kInput && n.op != Op::kParam)
      throw GraphError(id, n.op, "only leaves can be rebound");
    if (!t.same_shape(n.value))
      throw GraphError(id, n.op,
                       "rebind shape " + t.shape_str() + " != " +
                           n.value.shape_str());
    n.value = std::move(t);
  }

  double* leaf_data(NodeId id) {
    Node& n = nodes_.at(id);
    if (n.op != Op::kInput && n.op != Op::kParam)
      throw GraphError(id, n.op, "not a leaf");
    return n.value.v.data();
  }

  // Re-evaluates every compute node in insertion (= topological) order.
  // With freeze_detached set, detach nodes keep their stored value instead
  // of copying from their input; finite_diff_check relies on this to probe
  // the surrogate function in which detached values are constants.
  void forward(bool freeze_detached = false) {
    for (NodeId id = 0; id < nodes_.size(); ++id) {
      Node& n = nodes_[id];
      if (n.op == Op::kInput || n.op == Op::kParam) continue;
      if (n.op == Op::kDetach && freeze_detached) continue;
      n.value = eval_node(id, n);
    }
  }

  // Accumulates d(output)/d(leaf) for every node that reaches `output`.
  // Pre: output holds exactly one element; values are current.
  void backward(NodeId output) {
    const Node& out = nodes_.at(output);
    if (out.value.numel() != 1)
      throw GraphError(output, out.op,
                       "backward output must be scalar, got shape " +
                           out.value.shape_str());
    for (Node& n : nodes_) n.grad = Tensor{};
    nodes_[output].grad = Tensor::scalar(1.0);

    for (NodeId id = output + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.grad.numel() == 0) continue;  // unreachable from output
      accumulate_inputs(id, n);
    }
  }

 private:
  std::vector<Node> nodes_;
  std::vector<NodeId> params_;

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId push_leaf(Op op, Tensor t, std::string name) {
    Node n{op, {}, std::move(t), {}, 0.0, std::move(name)};
    return push(std::move(n));
  }

  NodeId push_unary(Op op, NodeId a) {
    Node n{op, {a}, {}, {}, 0.0, {}};
    n.value = eval_node(nodes_.size(), n);
    return push(std::move(n));
  }

  NodeId push_binary(Op op, NodeId a, NodeId b) {
    Node n{op, {a, b}, {}, {}, 0.0, {}};
    n.value = eval_node(nodes_.size(), n);
    return push(std::move(n));
  }

  void require_same_shape(NodeId id, Op op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
      throw GraphError(id, op,
                       "shape mismatch " + a.shape_str() + " vs " +
                           b.shape_str());
  }

  Tensor eval_node(NodeId id, const Node& n) {
    switch (n.op) {
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        require_same_shape(id, n.op, a, b);
        Tensor out = a;
        const double* pb = b.v.data();
        double* po = out.v.data();
        std::size_t c = out.numel();
        if (n.op == Op::kAdd)
          for (std::size_t i = 0; i < c; ++i) po[i] += pb[i];
        else if (n.op == Op::kSub)
          for (std::size_t i = 0; i < c; ++i) po[i] -= pb[i];
        else
          for (std::size_t i = 0; i < c; ++i) po[i] *= pb[i];
        return out;
      }
      case Op::kMatmul:
        return eval_matmul(id, value(n.inputs[0]), value(n.inputs[1]));
      case Op::kTanh: {
        Tensor out = value(n.inputs[0]);
        for (double& x : out.v) x = std::tanh(x);
        return out;
      }
      case Op::kConcat:
        return eval_concat(n.inputs);
      case Op::kSum:
      case Op::kMean: {
        const Tensor& a = value(n.inputs[0]);
        if (a.numel() == 0) throw GraphError(id, n.op, "empty input");
        double s = 0.0;
        for (double x : a.v) s += x;
        if (n.op == Op::kMean) s /= static_cast<double>(a.numel());
        return Tensor::scalar(s);
      }
      case Op::kSqNorm:
      case Op::kL2Norm: {
        const Tensor& a = value(n.inputs[0]);
        double s = 0.0;
        for (double x : a.v) s += x * x;
        return Tensor::scalar(n.op == Op::kSqNorm ? s : std::sqrt(s));
      }
      case Op::kAbs: {
        Tensor out = value(n.inputs[0]);
        for (double& x : out.v) x = std::fabs(x);
        return out;
      }
      case Op::kScale: {
        Tensor out = value(n.inputs[0]);
        for (double& x : out.v) x *= n.attr;
        return out;
      }
      case Op::kDetach:
        return value(n.inputs[0]);
      case Op::kInput:
      case Op::kParam:
        return n.value;
    }
    throw GraphError(id, n.op, "unsupported operation");
  }

  Tensor eval_matmul(NodeId id, const Tensor& a, const Tensor& b) {
    // {m,k}x{k,n} -> {m,n}; {m,k}x{k} -> {m}; {k}x{k,n} -> {n}
    if (a.rank() == 2 && b.rank() == 2) {
      if (a.cols() != b.rows())
        throw GraphError(id, Op::kMatmul,
                         "inner dims " + a.shape_str() + " vs " +
                             b.shape_str());
      Tensor out = Tensor::zeros({a.rows(), b.cols()});
      std::size_t m = a.rows(), k = a.cols(), nn = b.cols();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          double ail = a.v[i * k + l];
          const double* pb = &b.v[l * nn];
          double* po = &out.v[i * nn];
          for (std::size_t j = 0; j < nn; ++j) po[j] += ail * pb[j];
        }
      return out;
    }
    if (a.rank() == 2 && b.rank() == 1) {
      if (a.cols() != b.numel())
        throw GraphError(id, Op::kMatmul,
                         "inner dims " + a.shape_str() + " vs " +
                             b.shape_str());
      Tensor out = Tensor::zeros({a.rows()});
      std::size_t m = a.rows(), k = a.cols();
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        const double* pa = &a.v[i * k];
        for (std::size_t l = 0; l < k; ++l) s += pa[l] * b.v[l];
        out.v[i] = s;
      }
      return out;
    }
    if (a.rank() == 1 && b.rank() == 2) {
      if (a.numel() != b.rows())
        throw GraphError(id, Op::kMatmul,
                         "inner dims " + a.shape_str() + " vs " +
                             b.shape_str());
      Tensor out = Tensor::zeros({b.cols()});
      std::size_t k = b.rows(), nn = b.cols();
      for (std::size_t l = 0; l < k; ++l) {
        double al = a.v[l];
        const double* pb = &b.v[l * nn];
        for (std::size_t j = 0; j < nn; ++j) out.v[j] += al * pb[j];
      }
      return out;
    }
    throw GraphError(id, Op::kMatmul,
                     "rank combination " + a.shape_str() + " x " +
                         b.shape_str());
  }

  Tensor eval_concat(const std::vector<NodeId>& parts) {
    std::size_t total = 0;
    for (NodeId p : parts) total += value(p).numel();
    Tensor out = Tensor::zeros({total});
    std::size_t off = 0;
    for (NodeId p : parts) {
      const Tensor& t = value(p);
      std::copy(t.v.begin(), t.v.end(), out.v.begin() + off);
      off += t.numel();
    }
    return out;
  }

  Tensor& ensure_grad(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
  }

  void accumulate_inputs(NodeId id, Node& n) {
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
      case Op::kDetach:
        return;  // detach: gradient stops here
      case Op::kAdd: {
        axpy(ensure_grad(n.inputs[0]), g, 1.0);
        axpy(ensure_grad(n.inputs[1]), g, 1.0);
        return;
      }
      case Op::kSub: {
        axpy(ensure_grad(n.inputs[0]), g, 1.0);
        axpy(ensure_grad(n.inputs[1]), g, -1.0);
        return;
      }
      case Op::kMul: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        Tensor& ga = ensure_grad(n.inputs[0]);
        Tensor& gb = ensure_grad(n.inputs[1]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          ga.v[i] += g.v[i] * b.v[i];
          gb.v[i] += g.v[i] * a.v[i];
        }
        return;
      }
      case Op::kMatmul: {
        backward_matmul(n, g);
        return;
      }
      case Op::kTanh: {
        Tensor& ga = ensure_grad(n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          double y = n.value.v[i];
          ga.v[i] += g.v[i] * (1.0 - y * y);
        }
        return;
      }
      case Op::kConcat: {
        std::size_t off = 0;
        for (NodeId p : n.inputs) {
          Tensor& gp = ensure_grad(p);
          for (std::size_t i = 0; i < gp.numel(); ++i) gp.v[i] += g.v[off + i];
          off += gp.numel();
        }
        return;
      }
      case Op::kSum: {
        axpy_broadcast(ensure_grad(n.inputs[0]), g.v[0]);
        return;
      }
      case Op::kMean: {
        const Tensor& a = value(n.inputs[0]);
        axpy_broadcast(ensure_grad(n.inputs[0]),
                       g.v[0] / static_cast<double>(a.numel()));
        return;
      }
      case Op::kSqNorm: {
        const Tensor& a = value(n.inputs[0]);
        Tensor& ga = ensure_grad(n.inputs[0]);
        for (std::size_t i = 0; i < a.numel(); ++i)
          ga.v[i] += g.v[0] * 2.0 * a.v[i];
        return;
      }
      case Op::kL2Norm: {
        const Tensor& a = value(n.inputs[0]);
        Tensor& ga = ensure_grad(n.inputs[0]);
        double norm = n.value.v[0];
        if (norm > 0.0) {
          double f = g.v[0] / norm;
          for (std::size_t i = 0; i < a.numel(); ++i) ga.v[i] += f * a.v[i];
        }
        return;
      }
      case Op::kAbs: {
        const Tensor& a = value(n.inputs[0]);
        Tensor& ga = ensure_grad(n.inputs[0]);
        for (std::size_t i = 0; i < a.numel(); ++i) {
          double s = a.v[i] > 0.0 ? 1.0 : (a.v[i] < 0.0 ? -1.0 : 0.0);
          ga.v[i] += g.v[i] * s;
        }
        return;
      }
      case Op::kScale: {
        axpy(ensure_grad(n.inputs[0]), g, n.attr);
        return;
      }
    }
  }

  void backward_matmul(Node& n, const Tensor& g) {
    const Tensor& a = value(n.inputs[0]);
    const Tensor& b = value(n.inputs[1]);
    Tensor& ga = ensure_grad(n.inputs[0]);
    Tensor& gb = ensure_grad(n.inputs[1]);
    if (a.rank() == 2 && b.rank() == 2) {
      std::size_t m = a.rows(), k = a.cols(), nn = b.cols();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          double s = 0.0;
          const double* pg = &g.v[i * nn];
          const double* pb = &b.v[l * nn];
          for (std::size_t j = 0; j < nn; ++j) s += pg[j] * pb[j];
          ga.v[i * k + l] += s;
        }
      for (std::size_t l = 0; l < k; ++l)
        for (std::size_t j = 0; j < nn; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < m; ++i)
            s += a.v[i * k + l] * g.v[i * nn + j];
          gb.v[l * nn + j] += s;
        }
      return;
    }
    if (a.rank() == 2 && b.rank() == 1) {
      std::size_t m = a.rows(), k = a.cols();
      for (std::size_t i = 0; i < m; ++i) {
        double gi = g.v[i];
        double* pga = &ga.v[i * k];
        const double* pa = &a.v[i * k];
        for (std::size_t l = 0; l < k; ++l) {
          pga[l] += gi * b.v[l];
          gb.v[l] += gi * pa[l];
        }
      }
      return;
    }
    // {k} x {k,n}
    std::size_t k = b.rows(), nn = b.cols();
    for (std::size_t l = 0; l < k; ++l) {
      double s = 0.0;
      const double* pb = &b.v[l * nn];
      double* pgb = &gb.v[l * nn];
      for (std::size_t j = 0; j < nn; ++j) {
        s += g.v[j] * pb[j];
        pgb[j] += a.v[l] * g.v[j];
      }
      ga.v[l] += s;
    }
  }

  static void axpy(Tensor& dst, const Tensor& src, double f) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst.v[i] += f * src.v[i];
  }
  static void axpy_broadcast(Tensor& dst, double x) {
    for (double& d : dst.v) d += x;
  }
};

// Central-difference gradient check against backward(). Detached values are
// frozen during the perturbed evaluations, so graphs containing detach are
// checked against the surrogate function with those values held constant.
// Returns the maximum relative error over every parameter coordinate.
inline double finite_diff_check(Graph& g, NodeId output, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps <= 0");
  g.forward(false);
  g.backward(output);

  std::vector<Tensor> analytic;
  analytic.reserve(g.params().size());
  for (NodeId p : g.params()) {
    const Tensor& gr = g.grad(p);
    analytic.push_back(gr.numel() ? gr : Tensor::zeros(g.value(p).shape));
  }

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < g.params().size(); ++pi) {
    NodeId p = g.params()[pi];
    double* data = g.leaf_data(p);
    std::size_t n = g.value(p).numel();
    for (std::size_t i = 0; i < n; ++i) {
      double saved = data[i];
      data[i] = saved + eps;
      g.forward(true);
      double fp = g.value(output).v[0];
      data[i] = saved - eps;
      g.forward(true);
      double fm = g.value(output).v[0];
      data[i] = saved;
      double numeric = (fp - fm) / (2.0 * eps);
      double a = analytic[pi].v[i];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
  }
  g.forward(false);
  return max_rel;
}

}  // namespace flowhijack
