#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gatescale/dit/arch.hpp"
#include "gatescale/numerics/graph.hpp"
#include "gatescale/numerics/rng.hpp"
#include "gatescale/numerics/tensor.hpp"

namespace gatescale::dit {

/// One multiplier per γ gate, block-major. Within a block the order is
/// attention before FF and, for MmDit, visual before text:
///   StandardDit: (attn, ff)
///   MmDit:       (attn_v, attn_t, ff_v, ff_t)
class GateScales {
 public:
  GateScales(std::size_t blocks, std::size_t gates_per_block, double fill = 1.0);
  static GateScales identity(const ArchSpec& arch) { return {arch.depth, arch.gates_per_block(), 1.0}; }

  std::size_t blocks() const noexcept { return blocks_; }
  std::size_t gates_per_block() const noexcept { return per_block_; }
  double& at(std::size_t block, std::size_t gate) { return values_.at(block * per_block_ + gate); }
  double at(std::size_t block, std::size_t gate) const { return values_.at(block * per_block_ + gate); }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  /// Sets every gate of one block, e.g. 0 to ablate it.
  void set_block(std::size_t block, double s);

  friend bool operator==(const GateScales&, const GateScales&) = default;

 private:
  std::size_t blocks_;
  std::size_t per_block_;
  std::vector<double> values_;
};

/// Named weight table of the toy flow-matching DiT.
///
/// Name scheme (d = model_dim, f = ff_dim, m ∈ {v, t} for MmDit streams):
///   patch.w [4×d] patch.b [d] pos [16×d]
///   time.w1 [d×d] time.b1 [d] time.w2 [d×d] time.b2 [d] class.table [(C+1)×d]
///   block{i}.{m.}mod.w1 [d×d] .mod.b1 [d] .mod.w2 [d×6d] .mod.b2 [6d]
///   block{i}.{m.}attn.{wq,wk,wv,wo} [d×d]
///   block{i}.{m.}ff.w1 [d×f] .ff.b1 [f] .ff.w2 [f×d] .ff.b2 [d]
///   final.mod.w [d×2d] final.mod.b [2d] out.w [d×4] out.b [4]
/// The modulation output of a stream is laid out (α₁, β₁, γ₁, α₂, β₂, γ₂).
class DitModel {
 public:
  using WeightTable = std::map<std::string, Tensor>;

  /// Random initialisation; modulation biases start at α = γ = 1, β = 0.
  DitModel(const ArchSpec& arch, Rng& rng);
  /// Adopts an existing table; throws DimensionError if a name is missing,
  /// extra, or mis-shaped, NumericError if any weight is non-finite.
  DitModel(const ArchSpec& arch, WeightTable weights);

  const ArchSpec& arch() const noexcept { return arch_; }
  const WeightTable& weights() const noexcept { return weights_; }
  WeightTable& mutable_weights() noexcept { return weights_; }
  const Tensor& weight(const std::string& name) const;
  Tensor& mutable_weight(const std::string& name);
  std::size_t parameter_count() const;

  /// Expected name → shape map for an architecture.
  static std::map<std::string, Shape> layout(const ArchSpec& arch);

 private:
  ArchSpec arch_;
  WeightTable weights_;
};

/// Weight tensors placed on a graph (as params for training, constants otherwise).
class BoundWeights {
 public:
  BoundWeights(Graph& graph, const DitModel& model, bool trainable);
  /// Wraps vars that already live on a graph, e.g. for gradient checks.
  explicit BoundWeights(std::map<std::string, Var> vars) : vars_(std::move(vars)) {}
  Var operator[](const std::string& name) const;
  const std::map<std::string, Var>& vars() const noexcept { return vars_; }

 private:
  std::map<std::string, Var> vars_;
};

/// Per-sample modulation rows [B×d] of one stream of one block.
struct Modulation {
  Var alpha1, beta1, gamma1, alpha2, beta2, gamma2;
};

/// Attention + FF weights of one stream of one block.
struct BlockWeights {
  Var wq, wk, wv, wo;
  Var ff_w1, ff_b1, ff_w2, ff_b2;
};

BlockWeights block_weights(const BoundWeights& w, std::size_t block, std::string_view stream = "");

/// Splits a [B×6d] modulation output into its six chunks.
Modulation split_modulation(Graph& g, Var mod, std::size_t dim);

/// Standard DiT block:
///   x ← x + s_attn · γ₁ ∘ MHSA(α₁ ∘ LN(x) + β₁)
///   x ← x + s_ff   · γ₂ ∘ FF(α₂ ∘ LN(x) + β₂)
Var dit_block_forward(Graph& g, Var x, std::size_t tokens, std::size_t heads, const BlockWeights& w,
                      const Modulation& mod, double s_attn, double s_ff);

struct MmGateScales {
  double attn_v = 1.0, attn_t = 1.0, ff_v = 1.0, ff_t = 1.0;
};

struct StreamPair {
  Var visual, text;
};

/// MM-DiT block: per-stream modulation and projections, joint attention over
/// [visual ; text] tokens, per-stream FF on each stream's own tokens.
StreamPair mmdit_block_forward(Graph& g, Var xv, std::size_t tv, Var xt, std::size_t tt, std::size_t heads,
                               const BlockWeights& wv, const BlockWeights& wt, const Modulation& mv,
                               const Modulation& mt, const MmGateScales& s);

/// The FF sub-layer: W₂ · SiLU(W₁ x + b₁) + b₂.
Var feed_forward(Graph& g, Var x, const BlockWeights& w);

/// Sinusoidal embedding of per-sample times, [B×dim].
Tensor time_embedding(std::span<const double> t, std::size_t dim);

/// [8×8] image ↔ [16×4] token rows (2×2 patches, row-major patch order).
Tensor patchify(const Tensor& image);
Tensor unpatchify(const Tensor& tokens);

/// Velocity prediction for a batch. `x_tokens` is [B·16 × 4], `t` and
/// `classes` have B entries (class id == null_class() is unconditional).
/// Throws CalibrationShapeError when `scales` does not cover every gate once.
/// `skip_block`, when set, removes that block from the forward pass entirely.
Var model_forward(Graph& g, const BoundWeights& w, const ArchSpec& arch, Var x_tokens, std::span<const double> t,
                  std::span<const std::size_t> classes, const GateScales& scales,
                  std::size_t skip_block = static_cast<std::size_t>(-1));

/// Non-recording convenience wrapper.
Tensor model_forward(const DitModel& model, const Tensor& x_tokens, std::span<const double> t,
                     std::span<const std::size_t> classes, const GateScales& scales);

}  // namespace gatescale::dit
