#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "gatescale/numerics/tensor.hpp"

namespace gatescale {

class Graph;

/// Handle to a node recorded on a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Gradients of one scalar loss, indexed by node.
class Gradients {
 public:
  explicit Gradients(std::vector<Tensor> slots) : slots_(std::move(slots)) {}
  bool has(Var v) const { return v.id < slots_.size() && !slots_[v.id].empty(); }
  /// Gradient w.r.t. `v`; throws ContractError if `v` did not require grad.
  const Tensor& operator[](Var v) const;

 private:
  std::vector<Tensor> slots_;
};

/// Tape-based reverse-mode differentiation over Tensor values.
///
/// Nodes are appended in evaluation order, so the tape is a topological order
/// and backward is one reverse scan. Backward closures are only stored for
/// nodes that depend on a leaf created with `requires_grad`; a graph without
/// such leaves is a plain forward evaluator. Every produced value is checked
/// for finiteness. A Graph is single-owner and not thread-safe.
///
/// Token-structured ops take a row layout of `batch` samples × `tokens` rows.
class Graph {
 public:
  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var param(Tensor value) { return leaf(std::move(value), true); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  /// x[r, :] + bias for every row; bias has x.cols() elements.
  Var add_bias(Var x, Var bias);
  /// x[b*T + t, :] + pos[t, :].
  Var add_per_token(Var x, Var pos, std::size_t tokens);
  Var silu(Var a);
  /// tanh approximation.
  Var gelu(Var a);
  Var layer_norm(Var x);
  /// Columns [begin, begin + width) of a rank-2 value.
  Var slice_cols(Var x, std::size_t begin, std::size_t width);
  /// x ∘ scale + shift with per-sample scale/shift rows broadcast over tokens.
  Var modulate(Var x, Var scale, Var shift, std::size_t tokens);
  /// s · (g ∘ x) with per-sample gate rows g broadcast over tokens.
  Var gate(Var x, Var g, double s, std::size_t tokens);
  /// Multi-head softmax(q kᵀ / √d_h) v, independently per sample.
  Var attention(Var q, Var k, Var v, std::size_t tokens, std::size_t heads);
  /// Per-sample concatenation of token runs: [a_b ; b_b] for every sample b.
  Var concat_tokens(Var a, std::size_t tokens_a, Var b, std::size_t tokens_b);
  /// Rows [begin, begin + count) of every sample's token run.
  Var slice_tokens(Var x, std::size_t tokens, std::size_t begin, std::size_t count);
  /// Output row i = table[ids[i], :].
  Var gather_rows(Var table, std::span<const std::size_t> ids);
  /// Every row repeated `times` consecutively.
  Var repeat_rows(Var x, std::size_t times);
  Var sum(Var a);
  /// mean over elements of (a - target)².
  Var mse(Var a, Var target);

  /// Reverse pass from a scalar node.
  Gradients grad(Var loss) const;

 private:
  struct Node;
  using Backward =
      std::function<void(const Tensor& gout, const std::vector<Node>& nodes, std::vector<Tensor>& grads)>;
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor value, std::string_view op, std::initializer_list<Var> parents, Backward backward);
  bool any_requires(std::initializer_list<Var> parents) const;

  std::vector<Node> nodes_;
};

}  // namespace gatescale
