#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ligr/tensor.hpp"

namespace ligr {

enum class OpKind {
  Leaf,
  MatMul,
  Transpose,
  Add,
  Sub,
  Mul,
  AddRows,
  Sigmoid,
  Tanh,
  Gelu,
  LayerNorm,
  MaskedSoftmax,
  Concat,
  Slice,
  GatherRows,
  Mean,
  Sum,
  BceWithLogits,
  LogSumExp,
  L2NormalizeRows,
};

const char* op_name(OpKind kind);

using NodeId = int32_t;
using GradMap = std::map<std::string, Tensor>;

struct Node {
  OpKind kind = OpKind::Leaf;
  std::vector<NodeId> inputs;
  Tensor value;
  bool needs_grad = false;
  std::string name;  // non-empty for named parameter leaves

  // op attributes
  int axis = 0;                   // Concat / Slice
  int64_t start = 0, stop = 0;    // Slice
  std::vector<int64_t> indices;   // GatherRows
  BoolMask mask;                  // MaskedSoftmax
};

// Reverse-mode autodiff over an append-only tape of dense-tensor ops.
// Nodes are created in topological order; forward values are computed
// eagerly at construction. The tape can be re-executed after leaf
// values change, which is what the finite-difference checker uses.
class Graph {
 public:
  explicit Graph(Precision precision = Precision::F32) : precision_(precision) {}

  Precision precision() const { return precision_; }

  // Named differentiable leaf.
  NodeId param(const std::string& name, Tensor value);
  // -1 when no parameter with this name has been registered
  NodeId find_param(const std::string& name) const;
  // Anonymous non-differentiable leaf. Gradients never flow into it,
  // which doubles as the stop-gradient mechanism.
  NodeId constant(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId add_rows(NodeId mat, NodeId vec);
  NodeId sigmoid(NodeId a);
  NodeId tanh_op(NodeId a);
  NodeId gelu(NodeId a);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);
  NodeId masked_softmax(NodeId scores, const BoolMask& mask);
  NodeId concat(const std::vector<NodeId>& parts, int axis);
  NodeId slice(NodeId a, int axis, int64_t start, int64_t stop);
  NodeId gather_rows(NodeId table, std::vector<int64_t> indices);
  NodeId mean(NodeId a);
  NodeId sum(NodeId a);
  NodeId bce_with_logits(NodeId logits, NodeId targets);
  NodeId logsumexp(NodeId a);
  NodeId l2_normalize_rows(NodeId a);

  // convenience: multiply by a scalar constant
  NodeId scale(NodeId a, double factor);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Node& node(NodeId id) const { return nodes_[id]; }
  size_t size() const { return nodes_.size(); }
  // number of non-leaf primitive evaluations since construction,
  // including recomputes (serving latency instrumentation)
  size_t primitive_op_count() const { return primitive_ops_; }

  // Replace a leaf's value (same shape) and re-run the tape.
  void set_leaf(NodeId id, Tensor value);
  void recompute();

  // Gradients of a scalar loss w.r.t. every named parameter.
  // Parameters not reachable from the loss get zero gradients.
  GradMap backward(NodeId loss) const;

 private:
  NodeId push(Node node);
  void eval(Node& node);

  Precision precision_;
  std::vector<Node> nodes_;
  std::map<std::string, NodeId> param_index_;
  size_t primitive_ops_ = 0;
};

struct FdIssue {
  std::string parameter;
  int64_t flat_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct FdReport {
  bool pass = false;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  int64_t checked_components = 0;
  std::vector<FdIssue> failures;
};

// Central finite differences against analytic gradients for one named
// parameter, or for all parameters when `parameter` is empty. Requires
// a 64-bit graph. `max_components` caps the number of perturbed entries
// per parameter (0 = all), sampling evenly across the tensor.
FdReport finite_difference_check(Graph& graph, NodeId loss, const std::string& parameter,
                                 double tolerance, double step = 1e-4,
                                 int64_t max_components = 0);
FdReport finite_difference_check_all(Graph& graph, NodeId loss, double tolerance,
                                     double step = 1e-4, int64_t max_components = 0);

}  // namespace ligr
