#include "gatescale/dit/model.hpp"

#include <cmath>

#include "gatescale/numerics/errors.hpp"

namespace gatescale::dit {

GateScales::GateScales(std::size_t blocks, std::size_t gates_per_block, double fill)
    : blocks_(blocks), per_block_(gates_per_block), values_(blocks * gates_per_block, fill) {}

void GateScales::set_block(std::size_t block, double s) {
  for (std::size_t g = 0; g < per_block_; ++g) at(block, g) = s;
}

namespace {

std::string block_prefix(std::size_t i, std::string_view stream) {
  std::string p = "block" + std::to_string(i) + ".";
  if (!stream.empty()) p += std::string(stream) + ".";
  return p;
}

std::vector<std::string> streams_of(const ArchSpec& arch) {
  if (arch.variant == Variant::MmDit) return {"v", "t"};
  return {""};
}

}  // namespace

std::map<std::string, Shape> DitModel::layout(const ArchSpec& arch) {
  arch.validate();
  const std::size_t d = arch.model_dim, f = arch.ff_dim();
  std::map<std::string, Shape> l;
  l["patch.w"] = {kPatchDim, d};
  l["patch.b"] = {d};
  if (arch.positional_embedding) l["pos"] = {kImageTokens, d};
  l["time.w1"] = {d, d};
  l["time.b1"] = {d};
  l["time.w2"] = {d, d};
  l["time.b2"] = {d};
  l["class.table"] = {arch.class_count + 1, d};
  for (std::size_t i = 0; i < arch.depth; ++i) {
    for (const std::string& s : streams_of(arch)) {
      const std::string p = block_prefix(i, s);
      l[p + "mod.w1"] = {d, d};
      l[p + "mod.b1"] = {d};
      l[p + "mod.w2"] = {d, 6 * d};
      l[p + "mod.b2"] = {6 * d};
      for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) l[p + w] = {d, d};
      l[p + "ff.w1"] = {d, f};
      l[p + "ff.b1"] = {f};
      l[p + "ff.w2"] = {f, d};
      l[p + "ff.b2"] = {d};
    }
  }
  l["final.mod.w"] = {d, 2 * d};
  l["final.mod.b"] = {2 * d};
  l["out.w"] = {d, kPatchDim};
  l["out.b"] = {kPatchDim};
  return l;
}

DitModel::DitModel(const ArchSpec& arch, Rng& rng) : arch_(arch) {
  const std::size_t d = arch.model_dim;
  for (const auto& [name, shape] : layout(arch)) {
    Tensor t(shape);
    const bool is_bias = shape.size() == 1;
    if (name.ends_with("mod.b2")) {
      // (α₁, β₁, γ₁, α₂, β₂, γ₂): unit scales and gates, zero shifts.
      for (std::size_t chunk : {0u, 2u, 3u, 5u})
        for (std::size_t j = 0; j < d; ++j) t[chunk * d + j] = 1.0;
    } else if (name == "final.mod.b") {
      for (std::size_t j = 0; j < d; ++j) t[j] = 1.0;  // (α, β)
    } else if (!is_bias) {
      double stdev = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      if (name.ends_with("mod.w2") || name == "final.mod.w") stdev = 0.02;
      if (name == "out.w") stdev = 0.02;
      if (name == "pos" || name == "class.table") stdev = 0.5;
      for (double& v : t.data()) v = stdev * rng.normal();
    }
    weights_.emplace(name, std::move(t));
  }
}

DitModel::DitModel(const ArchSpec& arch, WeightTable weights) : arch_(arch), weights_(std::move(weights)) {
  const auto expected = layout(arch);
  if (expected.size() != weights_.size())
    throw DimensionError("weight table has " + std::to_string(weights_.size()) + " entries, expected " +
                         std::to_string(expected.size()));
  for (const auto& [name, shape] : expected) {
    auto it = weights_.find(name);
    if (it == weights_.end()) throw DimensionError("missing weight '" + name + "'");
    if (it->second.shape() != shape)
      throw DimensionError("weight '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                           shape_str(shape));
    it->second.require_finite("weight " + name);
  }
}

const Tensor& DitModel::weight(const std::string& name) const {
  auto it = weights_.find(name);
  if (it == weights_.end()) throw ContractError("no weight named '" + name + "'");
  return it->second;
}

Tensor& DitModel::mutable_weight(const std::string& name) {
  auto it = weights_.find(name);
  if (it == weights_.end()) throw ContractError("no weight named '" + name + "'");
  return it->second;
}

std::size_t DitModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : weights_) n += t.size();
  return n;
}

BoundWeights::BoundWeights(Graph& graph, const DitModel& model, bool trainable) {
  for (const auto& [name, t] : model.weights()) vars_.emplace(name, graph.leaf(t, trainable));
}

Var BoundWeights::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("no bound weight named '" + name + "'");
  return it->second;
}

BlockWeights block_weights(const BoundWeights& w, std::size_t block, std::string_view stream) {
  const std::string p = block_prefix(block, stream);
  return BlockWeights{w[p + "attn.wq"], w[p + "attn.wk"], w[p + "attn.wv"], w[p + "attn.wo"],
                      w[p + "ff.w1"],   w[p + "ff.b1"],   w[p + "ff.w2"],   w[p + "ff.b2"]};
}

Modulation split_modulation(Graph& g, Var mod, std::size_t dim) {
  if (g.value(mod).cols() != 6 * dim) throw DimensionError("modulation output must have 6*dim columns");
  return Modulation{g.slice_cols(mod, 0, dim),       g.slice_cols(mod, dim, dim),     g.slice_cols(mod, 2 * dim, dim),
                    g.slice_cols(mod, 3 * dim, dim), g.slice_cols(mod, 4 * dim, dim), g.slice_cols(mod, 5 * dim, dim)};
}

Var feed_forward(Graph& g, Var x, const BlockWeights& w) {
  const Var h = g.silu(g.add_bias(g.matmul(x, w.ff_w1), w.ff_b1));
  return g.add_bias(g.matmul(h, w.ff_w2), w.ff_b2);
}

Var dit_block_forward(Graph& g, Var x, std::size_t tokens, std::size_t heads, const BlockWeights& w,
                      const Modulation& mod, double s_attn, double s_ff) {
  const Var a = g.modulate(g.layer_norm(x), mod.alpha1, mod.beta1, tokens);
  const Var att = g.attention(g.matmul(a, w.wq), g.matmul(a, w.wk), g.matmul(a, w.wv), tokens, heads);
  x = g.add(x, g.gate(g.matmul(att, w.wo), mod.gamma1, s_attn, tokens));
  const Var f = g.modulate(g.layer_norm(x), mod.alpha2, mod.beta2, tokens);
  return g.add(x, g.gate(feed_forward(g, f, w), mod.gamma2, s_ff, tokens));
}

StreamPair mmdit_block_forward(Graph& g, Var xv, std::size_t tv, Var xt, std::size_t tt, std::size_t heads,
                               const BlockWeights& wv, const BlockWeights& wt, const Modulation& mv,
                               const Modulation& mt, const MmGateScales& s) {
  const std::size_t joint = tv + tt;
  const Var av = g.modulate(g.layer_norm(xv), mv.alpha1, mv.beta1, tv);
  const Var at = g.modulate(g.layer_norm(xt), mt.alpha1, mt.beta1, tt);
  const Var q = g.concat_tokens(g.matmul(av, wv.wq), tv, g.matmul(at, wt.wq), tt);
  const Var k = g.concat_tokens(g.matmul(av, wv.wk), tv, g.matmul(at, wt.wk), tt);
  const Var v = g.concat_tokens(g.matmul(av, wv.wv), tv, g.matmul(at, wt.wv), tt);
  const Var att = g.attention(q, k, v, joint, heads);
  const Var att_v = g.slice_tokens(att, joint, 0, tv);
  const Var att_t = g.slice_tokens(att, joint, tv, tt);
  xv = g.add(xv, g.gate(g.matmul(att_v, wv.wo), mv.gamma1, s.attn_v, tv));
  xt = g.add(xt, g.gate(g.matmul(att_t, wt.wo), mt.gamma1, s.attn_t, tt));

  const Var fv = g.modulate(g.layer_norm(xv), mv.alpha2, mv.beta2, tv);
  const Var ft = g.modulate(g.layer_norm(xt), mt.alpha2, mt.beta2, tt);
  xv = g.add(xv, g.gate(feed_forward(g, fv, wv), mv.gamma2, s.ff_v, tv));
  xt = g.add(xt, g.gate(feed_forward(g, ft, wt), mt.gamma2, s.ff_t, tt));
  return {xv, xt};
}

Tensor time_embedding(std::span<const double> t, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor e({t.size(), dim});
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t k = 0; k < half; ++k) {
      // Frequencies from 1 to 1000 rad per unit time.
      const double freq = std::exp(std::log(1000.0) * static_cast<double>(k) / static_cast<double>(half));
      e.at(b, k) = std::sin(t[b] * freq);
      e.at(b, half + k) = std::cos(t[b] * freq);
    }
  }
  return e;
}

Tensor patchify(const Tensor& image) {
  if (image.size() != kPixels) throw DimensionError("patchify: expected an 8x8 image, got " + shape_str(image.shape()));
  constexpr std::size_t per_row = kImageSide / kPatchSide;
  Tensor tokens({kImageTokens, kPatchDim});
  for (std::size_t r = 0; r < kImageSide; ++r)
    for (std::size_t c = 0; c < kImageSide; ++c) {
      const std::size_t token = (r / kPatchSide) * per_row + c / kPatchSide;
      const std::size_t chan = (r % kPatchSide) * kPatchSide + c % kPatchSide;
      tokens.at(token, chan) = image[r * kImageSide + c];
    }
  return tokens;
}

Tensor unpatchify(const Tensor& tokens) {
  if (tokens.size() != kPixels) throw DimensionError("unpatchify: expected 16x4 tokens, got " + shape_str(tokens.shape()));
  constexpr std::size_t per_row = kImageSide / kPatchSide;
  Tensor image({kImageSide, kImageSide});
  for (std::size_t r = 0; r < kImageSide; ++r)
    for (std::size_t c = 0; c < kImageSide; ++c) {
      const std::size_t token = (r / kPatchSide) * per_row + c / kPatchSide;
      const std::size_t chan = (r % kPatchSide) * kPatchSide + c % kPatchSide;
      image[r * kImageSide + c] = tokens[token * kPatchDim + chan];
    }
  return image;
}

namespace {

Var modulation_mlp(Graph& g, const BoundWeights& w, const std::string& prefix, Var cond) {
  const Var h = g.silu(g.add_bias(g.matmul(cond, w[prefix + "mod.w1"]), w[prefix + "mod.b1"]));
  return g.add_bias(g.matmul(h, w[prefix + "mod.w2"]), w[prefix + "mod.b2"]);
}

}  // namespace

Var model_forward(Graph& g, const BoundWeights& w, const ArchSpec& arch, Var x_tokens, std::span<const double> t,
                  std::span<const std::size_t> classes, const GateScales& scales, std::size_t skip_block) {
  if (scales.blocks() != arch.depth || scales.gates_per_block() != arch.gates_per_block())
    throw CalibrationShapeError("gate scales cover " + std::to_string(scales.blocks()) + "x" +
                                std::to_string(scales.gates_per_block()) + " gates, model has " +
                                std::to_string(arch.depth) + "x" + std::to_string(arch.gates_per_block()));
  const std::size_t batch = t.size();
  if (classes.size() != batch) throw DimensionError("model_forward: classes and times differ in length");
  if (g.value(x_tokens).shape() != Shape{batch * kImageTokens, kPatchDim})
    throw DimensionError("model_forward: expected tokens " + shape_str({batch * kImageTokens, kPatchDim}) + ", got " +
                         shape_str(g.value(x_tokens).shape()));
  for (std::size_t c : classes)
    if (c > arch.null_class()) throw DimensionError("model_forward: class id " + std::to_string(c) + " out of range");

  const std::size_t d = arch.model_dim;
  const Var temb_in = g.constant(time_embedding(t, d));
  const Var temb = g.add_bias(
      g.matmul(g.silu(g.add_bias(g.matmul(temb_in, w["time.w1"]), w["time.b1"])), w["time.w2"]), w["time.b2"]);
  const Var class_rows = g.gather_rows(w["class.table"], classes);
  const Var cond = g.add(temb, class_rows);

  Var h = g.add_bias(g.matmul(x_tokens, w["patch.w"]), w["patch.b"]);
  if (arch.positional_embedding) h = g.add_per_token(h, w["pos"], kImageTokens);

  if (arch.variant == Variant::StandardDit) {
    for (std::size_t i = 0; i < arch.depth; ++i) {
      if (i == skip_block) continue;
      const std::string p = block_prefix(i, "");
      const Modulation mod = split_modulation(g, modulation_mlp(g, w, p, cond), d);
      h = dit_block_forward(g, h, kImageTokens, arch.heads, block_weights(w, i), mod, scales.at(i, 0),
                            scales.at(i, 1));
    }
  } else {
    Var text = g.repeat_rows(class_rows, arch.text_tokens);
    for (std::size_t i = 0; i < arch.depth; ++i) {
      if (i == skip_block) continue;
      const Modulation mv = split_modulation(g, modulation_mlp(g, w, block_prefix(i, "v"), cond), d);
      const Modulation mt = split_modulation(g, modulation_mlp(g, w, block_prefix(i, "t"), temb), d);
      const MmGateScales s{scales.at(i, 0), scales.at(i, 1), scales.at(i, 2), scales.at(i, 3)};
      const StreamPair out = mmdit_block_forward(g, h, kImageTokens, text, arch.text_tokens, arch.heads,
                                                 block_weights(w, i, "v"), block_weights(w, i, "t"), mv, mt, s);
      h = out.visual;
      text = out.text;
    }
  }

  const Var fmod = g.add_bias(g.matmul(g.silu(cond), w["final.mod.w"]), w["final.mod.b"]);
  const Var h_out = g.modulate(g.layer_norm(h), g.slice_cols(fmod, 0, d), g.slice_cols(fmod, d, d), kImageTokens);
  return g.add_bias(g.matmul(h_out, w["out.w"]), w["out.b"]);
}

Tensor model_forward(const DitModel& model, const Tensor& x_tokens, std::span<const double> t,
                     std::span<const std::size_t> classes, const GateScales& scales) {
  Graph g;
  const BoundWeights w(g, model, false);
  const Var x = g.constant(x_tokens);
  return g.value(model_forward(g, w, model.arch(), x, t, classes, scales));
}

}  // namespace gatescale::dit
