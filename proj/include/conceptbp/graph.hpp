#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "conceptbp/tensor.hpp"

namespace conceptbp {

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class Op : std::uint8_t {
  Input,      // fixed leaf, must be bound
  Parameter,  // trainable leaf with a default value
  Constant,   // fixed leaf with a default value
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  BiasAdd,
  MatMul,
  Conv2d,
  Sigmoid,
  Relu,
  Pow,
  Abs,
  Sum,
  Mean,
  L1Norm,
  L2NormSq,
  L2Norm,
  Reshape,
  Concat,
  SumPlanes,
  RepeatPlanes,
  Binarize,
  PlaneArgmaxBinarize,
  Bce,
};

const char* op_name(Op op);

using Bindings = std::map<std::string, Tensor>;

/// Static computation graph. Nodes are appended in topological order, so the
/// graph is acyclic by construction; operand shapes are checked as each node
/// is added. Leaves are named; intermediate nodes can be exposed as named
/// taps and outputs.
class Graph {
 public:
  NodeId input(const std::string& name, Shape shape);
  NodeId parameter(const std::string& name, Tensor init);
  NodeId constant(Tensor value, const std::string& name = {});

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId add_scalar(NodeId a, double offset);
  /// x + b broadcast along `axis`; b has shape [x.dim(axis)].
  NodeId bias_add(NodeId x, NodeId b, std::size_t axis);
  /// [M,K] x [K,N] -> [M,N]
  NodeId matmul(NodeId a, NodeId b);
  /// Stride-1 same-padded convolution: x [N,C,H,W], w [O,C,K,K] with odd K.
  NodeId conv2d(NodeId x, NodeId w);
  NodeId sigmoid(NodeId a);
  NodeId relu(NodeId a);
  NodeId pow(NodeId a, double exponent);
  NodeId abs(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId l1_norm(NodeId a);
  NodeId l2_norm_sq(NodeId a);
  NodeId l2_norm(NodeId a);
  NodeId reshape(NodeId a, Shape shape);
  /// Concatenation along axis 0.
  NodeId concat(NodeId a, NodeId b);
  /// [P, ...] -> [1, ...] summing over axis 0.
  NodeId sum_planes(NodeId a);
  /// [1, ...] -> [count, ...]
  NodeId repeat_planes(NodeId a, std::size_t count);
  /// 1 where x > 0.5 else 0; straight-through gradient.
  NodeId binarize(NodeId a);
  /// Over x [P, ...]: per position, one-hot of the largest plane (lowest index
  /// on ties) if its value exceeds 0.5, else all zero. Straight-through gradient.
  NodeId plane_argmax_binarize(NodeId a);
  /// Mean binary cross-entropy of probabilities p against targets t.
  NodeId bce(NodeId p, NodeId t);

  void mark_tap(const std::string& name, NodeId node);
  void mark_output(const std::string& name, NodeId node);

  const Shape& shape(NodeId node) const { return nodes_.at(node.index).shape; }
  Op op(NodeId node) const { return nodes_.at(node.index).op; }
  std::size_t size() const { return nodes_.size(); }

  NodeId leaf(const std::string& name) const;
  bool has_leaf(const std::string& name) const { return leaves_.count(name) > 0; }
  NodeId tap(const std::string& name) const;
  NodeId output(const std::string& name) const;
  const std::map<std::string, NodeId>& taps() const { return taps_; }
  const std::map<std::string, NodeId>& outputs() const { return outputs_; }
  const std::map<std::string, NodeId>& leaves() const { return leaves_; }
  bool is_trainable(NodeId node) const { return nodes_.at(node.index).op == Op::Parameter; }

 private:
  friend class Forward;

  struct Node {
    Op op;
    std::vector<NodeId> args;
    Shape shape;
    double scalar = 0.0;
    std::size_t axis = 0;
    std::string name;
    std::optional<Tensor> value;
  };

  NodeId push(Node node);
  NodeId leaf_node(Op op, const std::string& name, Shape shape, std::optional<Tensor> value);
  const Node& node(NodeId id) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> leaves_;
  std::map<std::string, NodeId> taps_;
  std::map<std::string, NodeId> outputs_;
};

/// Values of every node for one set of bindings.
class Forward {
 public:
  Forward(const Graph& graph, const Bindings& bindings);

  const Tensor& value(NodeId node) const { return values_.at(node.index); }
  const Graph& graph() const { return *graph_; }

  /// Reverse-mode gradient of the scalar `output` with respect to each node in
  /// `wrt`, returned in the same order.
  std::vector<Tensor> backward(NodeId output, const std::vector<NodeId>& wrt) const;

 private:
  const Graph* graph_;
  std::vector<Tensor> values_;
  std::vector<Tensor> aux_;
};

/// Named outputs and taps of the graph.
std::map<std::string, Tensor> evaluate(const Graph& graph, const Bindings& bindings);

/// Gradients of the scalar output named `output` (an output or tap) with
/// respect to the named leaves.
std::map<std::string, Tensor> gradient(const Graph& graph, const Bindings& bindings,
                                       const std::vector<std::string>& wrt,
                                       const std::string& output);

}  // namespace conceptbp
