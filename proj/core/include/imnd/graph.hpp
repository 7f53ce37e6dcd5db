#pragma once

#include <memory>
#include <vector>

#include "imnd/so3.hpp"
#include "imnd/tensor.hpp"

namespace imnd {

/// Payload for the rotation-increment loss node. For each stride j the loss
/// compares the integrated increment of the estimated rates over
/// [i+1, i+j] against the ground-truth increment gt[i]^T gt[i+j], takes the
/// log-map residual, applies an elementwise Huber and averages; per-stride
/// losses are summed.
struct OrientationLossSpec {
  double dt = 0.0;
  double huber_delta = 0.005;
  struct StrideSet {
    std::size_t j = 16;
    std::vector<std::size_t> starts;       // window start indices i
    std::vector<so3::Mat3> gt_increments;  // one per start
  };
  std::vector<StrideSet> strides;
};

/// Reverse-mode tape over [C x T] tensors. Nodes are created in topological
/// order; backward() runs a single reverse sweep.
class Tape {
 public:
  using NodeId = int;

  NodeId constant(Tensor value);
  NodeId param(Tensor value);  // identical to constant; named for intent

  /// x [Cin x T], w [Cout x Cin], optional bias [Cout] -> [Cout x T].
  NodeId dense(NodeId x, NodeId w, NodeId b = kNone);

  /// Causal dilated 1-D convolution with replicate-left padding.
  /// x [Cin x T], w [Cout x Cin x K], bias [Cout] -> [Cout x T].
  NodeId conv1d(NodeId x, NodeId w, NodeId b, int dilation);

  NodeId gelu(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);

  /// Mean squared error over all elements -> scalar.
  NodeId mse(NodeId pred, NodeId target);

  /// omega_hat [3 x T] in rad/s -> scalar.
  NodeId orientation_loss(NodeId omega_hat, OrientationLossSpec spec);

  /// Weighted sum of scalar nodes.
  NodeId combine(const std::vector<std::pair<NodeId, double>>& terms);

  const Tensor& value(NodeId id) const;
  double value_scalar(NodeId id) const;

  /// Reverse accumulation from a scalar loss node. Throws on non-finite loss.
  void backward(NodeId loss);
  const Tensor& grad(NodeId id) const;

  static constexpr NodeId kNone = -1;

 private:
  enum class Op { kLeaf, kDense, kConv1d, kGelu, kAdd, kScale, kMse, kOrientLoss, kCombine };

  struct Node {
    Op op = Op::kLeaf;
    NodeId a = kNone, b = kNone, c = kNone;
    Tensor val;
    Tensor grad;
    double factor = 1.0;
    int dilation = 1;
    std::shared_ptr<OrientationLossSpec> orient;
    std::vector<std::pair<NodeId, double>> terms;
  };

  NodeId push(Node n);
  void backward_node(Node& n);

  std::vector<Node> nodes_;
};

}  // namespace imnd
