#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "selora/tensor.hpp"

namespace selora {

/// A named weight with its gradient slot. Gradients accumulate across
/// backward passes; zeroing is the caller's job. When `trainable` is false
/// the gradient is never touched.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable{false};
  std::optional<int> layer_id;

  Parameter() = default;
  Parameter(std::string n, Tensor v, std::optional<int> layer = {})
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())), layer_id(layer) {}

  void zero_grad() { grad.fill(0.0); }
  int64_t numel() const { return value.numel(); }
};

class Graph;

/// Handle to a node on a live Graph.
struct Var {
  Graph* graph{nullptr};
  int32_t node{-1};

  const Tensor& value() const;
  const Shape& shape() const;
};

/// Dynamic tape: forward ops append nodes in execution order, one backward
/// replays their adjoints in reverse and is then consumed. Trainability is
/// sampled when a parameter enters the graph; subtrees that cannot reach a
/// trainable leaf are skipped during backward.
class Graph {
public:
  explicit Graph(Precision precision = Precision::f64) : precision_(precision) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Precision precision() const { return precision_; }

  /// Leaf that never receives gradient.
  Var constant(Tensor t);

  /// Parameter leaf; backward adds the adjoint into p.grad iff p.trainable.
  Var param(Parameter& p);

  /// Reverse pass from a scalar loss. A graph can be walked once.
  void backward(Var loss);

  bool consumed() const { return consumed_; }
  size_t node_count() const { return nodes_.size(); }

  // --- plumbing for op implementations ---
  using BackwardFn = std::function<void(Graph&, const Tensor& out_adj)>;

  Var make(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);
  const Tensor& value_of(int32_t id) const;
  bool grad_needed(int32_t id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  /// Add a contribution to a node's adjoint (no-op for grad-free nodes).
  void accumulate(int32_t id, Tensor contribution);

private:
  struct Node {
    Tensor owned;    // value for op and constant nodes; param nodes read the parameter
    Tensor adjoint;  // empty until first contribution
    BackwardFn backprop;
    Parameter* param{nullptr};
    bool needs_grad{false};
  };

  int32_t push(Node n);

  std::vector<Node> nodes_;
  Precision precision_;
  bool consumed_{false};
};

inline const Tensor& Var::value() const { return graph->value_of(node); }
inline const Shape& Var::shape() const { return value().shape(); }

// --- differentiable ops ---

/// [.., m, k] × [k, n] (shared right factor) or [.., m, k] × [.., k, n]
/// with identical leading dims; plain 2-D × 2-D is the base case.
Var matmul(Var a, Var b);

/// Elementwise with leading-dimension broadcast: the smaller operand's
/// shape must equal a suffix of the larger one's.
Var add(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var a, double c);
Var gelu(Var a);
Var silu(Var a);

/// y = gain ⊙ x / sqrt(mean(x², last dim) + eps)
Var rmsnorm(Var x, Var gain, double eps = 1e-6);

Var transpose_last2(Var a);

/// [B, S, H·hd] -> [B, H, S, hd]
Var split_heads(Var x, int n_heads);
/// [B, H, S, hd] -> [B, S, H·hd]
Var merge_heads(Var x);

/// Softmax over the last dim of [.., S, S], masking positions j > i.
Var causal_softmax(Var scores);

/// First n rows of a [R, D] table.
Var rows_prefix(Var table, int64_t n_rows);

/// Gather rows of a [V, D] table: tokens laid out [batch, seq] -> [batch, seq, D].
Var embed(Var table, const std::vector<int32_t>& tokens, int64_t batch, int64_t seq);

/// Mean negative log-likelihood over non-ignored positions of
/// [batch, seq, vocab] logits. Numerically stable; returns a scalar.
Var cross_entropy(Var logits, const std::vector<int32_t>& targets, int ignore_index);

Var sum(Var a);

/// Set the trainable flag on every parameter tagged with one of `layer_ids`.
/// Unknown ids (no parameter carries the tag) are an error.
void set_trainable(const std::vector<Parameter*>& params, const std::vector<int>& layer_ids, bool flag);

}  // namespace selora
