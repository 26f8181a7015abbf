#pragma once

#include "zsil/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace zsil {

using NodeId = int;

/// Gradients keyed by leaf name; shapes match the leaves.
using GradientMap = std::map<std::string, Tensor>;

/// Reverse-mode tape. Forward values are computed eagerly as nodes are
/// appended, so parents always precede children in evaluation order.
/// backward() is const and allocates its own workspace: concurrent backward
/// passes over separate graph instances are safe, mutation of one instance
/// is single-writer.
class Graph {
 public:
  /// Named differentiable leaf (network parameter).
  NodeId parameter(const std::string& name, Tensor value);
  /// Named differentiable leaf (network input; gradients w.r.t. inputs drive
  /// image-space optimization).
  NodeId input(const std::string& name, Tensor value);
  /// Unnamed leaf; cannot be requested in backward.
  NodeId constant(Tensor value);

  /// x:(N,in) * w:(in,out) + b:(out) -> (N,out)
  NodeId dense(NodeId x, NodeId w, NodeId b);
  /// x:(N,C,H,W), w:(OC,C,K,K) odd K, b:(OC); stride 1, zero padding K/2,
  /// output (N,OC,H,W).
  NodeId conv2d(NodeId x, NodeId w, NodeId b);
  NodeId relu(NodeId x);
  /// Non-overlapping window average; H and W must be divisible by the window.
  NodeId avg_pool(NodeId x, int window);
  /// (N, d1, ..., dk) -> (N, d1*...*dk)
  NodeId flatten(NodeId x);
  /// Column subset of a rank-2 tensor, in the given order.
  NodeId select_columns(NodeId x, std::vector<int> cols);
  NodeId softmax_temperature(NodeId logits, double tau);
  /// Scalar: -sum(target*log(max(pred,1e-12))) averaged over rows.
  NodeId cross_entropy(NodeId pred_probs, NodeId target_probs);
  /// Scalar: row sums of (a-b)^2 averaged over rows.
  NodeId squared_l2(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);

  const Tensor& value(NodeId id) const { return node(id).value; }
  std::size_t node_count() const { return nodes_.size(); }
  bool has_leaf(const std::string& name) const { return leaves_.count(name) != 0; }

  /// Gradients of a scalar loss node w.r.t. the named leaves. Leaves off the
  /// loss path get zero tensors; unknown names raise std::out_of_range.
  GradientMap backward(NodeId loss, const std::vector<std::string>& wrt) const;

 private:
  enum class Op {
    kLeaf,
    kDense,
    kConv2d,
    kRelu,
    kAvgPool,
    kFlatten,
    kSelectCols,
    kSoftmaxTemp,
    kCrossEntropy,
    kSquaredL2,
    kAdd,
    kScale
  };

  struct Node {
    Op op = Op::kLeaf;
    std::vector<NodeId> parents;
    Tensor value;
    double aux = 0.0;        // tau / scale factor / pool window
    std::vector<int> cols;   // select_columns
    Tensor cache;            // conv2d: stacked im2col patches
    std::string name;        // leaves only
  };

  const Node& node(NodeId id) const;
  NodeId push(Node n);
  NodeId named_leaf(const std::string& name, Tensor value);
  void backprop_node(NodeId id, const Tensor& grad_out, std::vector<Tensor>& grads,
                     std::vector<char>& has_grad) const;
  static Tensor& grad_slot(const Tensor& like, NodeId id, std::vector<Tensor>& grads,
                           std::vector<char>& has_grad);

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> leaves_;
};

}  // namespace zsil
