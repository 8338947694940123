#include "gatescale/numerics/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "gatescale/numerics/errors.hpp"

namespace gatescale {

const Tensor& Gradients::operator[](Var v) const {
  if (!has(v)) throw ContractError("no gradient recorded for node " + std::to_string(v.id));
  return slots_[v.id];
}

namespace {

void accumulate(std::vector<Tensor>& grads, std::size_t id, Tensor g) {
  Tensor& slot = grads[id];
  if (slot.empty()) {
    slot = std::move(g);
    return;
  }
  double* dst = slot.data().data();
  const double* src = g.data().data();
  for (std::size_t i = 0; i < slot.size(); ++i) dst[i] += src[i];
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

std::size_t batch_of(const Tensor& x, std::size_t tokens, const char* op) {
  if (tokens == 0 || x.rows() % tokens != 0)
    throw DimensionError(std::string(op) + ": " + std::to_string(x.rows()) + " rows are not a multiple of " +
                         std::to_string(tokens) + " tokens");
  return x.rows() / tokens;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Var Graph::push(Tensor value, std::string_view op, std::initializer_list<Var> parents, Backward backward) {
  value.require_finite(op);
  const bool rg = any_requires(parents);
  nodes_.push_back(Node{std::move(value), rg, rg ? std::move(backward) : Backward{}});
  return Var{nodes_.size() - 1};
}

bool Graph::any_requires(std::initializer_list<Var> parents) const {
  return std::any_of(parents.begin(), parents.end(), [&](Var p) { return nodes_.at(p.id).requires_grad; });
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  value.require_finite("leaf");
  nodes_.push_back(Node{std::move(value), requires_grad, {}});
  return Var{nodes_.size() - 1};
}

Var Graph::matmul(Var a, Var b) {
  Tensor out = gatescale::matmul(value(a), value(b));
  return push(std::move(out), "matmul", {a, b}, [a, b](const Tensor& g, const auto& n, auto& grads) {
    if (n[a.id].requires_grad) accumulate(grads, a.id, matmul_nt(g, n[b.id].value));
    if (n[b.id].requires_grad) accumulate(grads, b.id, matmul_tn(n[a.id].value, g));
  });
}

Var Graph::add(Var a, Var b) {
  Tensor out = gatescale::add(value(a), value(b));
  return push(std::move(out), "add", {a, b}, [a, b](const Tensor& g, const auto& n, auto& grads) {
    if (n[a.id].requires_grad) accumulate(grads, a.id, g);
    if (n[b.id].requires_grad) accumulate(grads, b.id, g);
  });
}

Var Graph::sub(Var a, Var b) {
  Tensor out = gatescale::sub(value(a), value(b));
  return push(std::move(out), "sub", {a, b}, [a, b](const Tensor& g, const auto& n, auto& grads) {
    if (n[a.id].requires_grad) accumulate(grads, a.id, g);
    if (n[b.id].requires_grad) accumulate(grads, b.id, scaled(g, -1.0));
  });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.shape() != vb.shape())
    throw DimensionError("mul: " + shape_str(va.shape()) + " vs " + shape_str(vb.shape()));
  Tensor out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return push(std::move(out), "mul", {a, b}, [a, b](const Tensor& g, const auto& n, auto& grads) {
    if (n[a.id].requires_grad) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= n[b.id].value[i];
      accumulate(grads, a.id, std::move(ga));
    }
    if (n[b.id].requires_grad) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= n[a.id].value[i];
      accumulate(grads, b.id, std::move(gb));
    }
  });
}

Var Graph::scale(Var a, double s) {
  return push(scaled(value(a), s), "scale", {a},
              [a, s](const Tensor& g, const auto&, auto& grads) { accumulate(grads, a.id, scaled(g, s)); });
}

Var Graph::add_bias(Var x, Var bias) {
  const Tensor& vx = value(x);
  const Tensor& vb = value(bias);
  require_rank2(vx, "add_bias");
  const std::size_t c = vx.cols();
  if (vb.size() != c) throw DimensionError("add_bias: bias of " + std::to_string(vb.size()) + " for " + std::to_string(c) + " columns");
  Tensor out = vx;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += vb[j];
  return push(std::move(out), "add_bias", {x, bias}, [x, bias, c](const Tensor& g, const auto& n, auto& grads) {
    if (n[x.id].requires_grad) accumulate(grads, x.id, g);
    if (n[bias.id].requires_grad) {
      Tensor gb(n[bias.id].value.shape());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
      accumulate(grads, bias.id, std::move(gb));
    }
  });
}

Var Graph::add_per_token(Var x, Var pos, std::size_t tokens) {
  const Tensor& vx = value(x);
  const Tensor& vp = value(pos);
  require_rank2(vx, "add_per_token");
  const std::size_t c = vx.cols();
  const std::size_t batch = batch_of(vx, tokens, "add_per_token");
  if (vp.shape() != Shape{tokens, c})
    throw DimensionError("add_per_token: positions " + shape_str(vp.shape()) + " for " + std::to_string(tokens) +
                         " tokens of width " + std::to_string(c));
  Tensor out = vx;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < tokens * c; ++i) out[b * tokens * c + i] += vp[i];
  return push(std::move(out), "add_per_token", {x, pos},
              [x, pos, tokens, c, batch](const Tensor& g, const auto& n, auto& grads) {
                if (n[x.id].requires_grad) accumulate(grads, x.id, g);
                if (n[pos.id].requires_grad) {
                  Tensor gp({tokens, c});
                  for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t i = 0; i < tokens * c; ++i) gp[i] += g[b * tokens * c + i];
                  accumulate(grads, pos.id, std::move(gp));
                }
              });
}

Var Graph::silu(Var a) {
  Tensor out = value(a);
  std::vector<double> sig(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    sig[i] = 1.0 / (1.0 + std::exp(-out[i]));
    out[i] *= sig[i];
  }
  return push(std::move(out), "silu", {a}, [a, sig = std::move(sig)](const Tensor& g, const auto& n, auto& grads) {
    Tensor ga = g;
    const Tensor& x = n[a.id].value;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= sig[i] * (1.0 + x[i] * (1.0 - sig[i]));
    accumulate(grads, a.id, std::move(ga));
  });
}

Var Graph::gelu(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
  return push(std::move(out), "gelu", {a}, [a](const Tensor& g, const auto& n, auto& grads) {
    Tensor ga = g;
    const Tensor& x = n[a.id].value;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double v = x[i];
      const double th = std::tanh(kGeluC * (v + 0.044715 * v * v * v));
      const double dinner = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
      ga[i] *= 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner;
    }
    accumulate(grads, a.id, std::move(ga));
  });
}

Var Graph::layer_norm(Var x) {
  Tensor out = gatescale::layer_norm(value(x));
  return push(std::move(out), "layer_norm", {x}, [x](const Tensor& g, const auto& n, auto& grads) {
    // dx = inv/d · (d·g − Σg − y·Σ(g∘y)), y the normalised output.
    const Tensor& in = n[x.id].value;
    const std::size_t d = in.cols();
    const double dd = static_cast<double>(d);
    Tensor gx(in.shape());
    for (std::size_t r = 0; r < in.rows(); ++r) {
      const double* xr = in.data().data() + r * d;
      const double* gr = g.data().data() + r * d;
      double mean = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += xr[j];
      mean /= dd;
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
      var /= dd;
      const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
      double sg = 0.0, sgy = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        sg += gr[j];
        sgy += gr[j] * (xr[j] - mean) * inv;
      }
      for (std::size_t j = 0; j < d; ++j) {
        const double y = (xr[j] - mean) * inv;
        gx[r * d + j] = inv / dd * (dd * gr[j] - sg - y * sgy);
      }
    }
    accumulate(grads, x.id, std::move(gx));
  });
}

Var Graph::slice_cols(Var x, std::size_t begin, std::size_t width) {
  const Tensor& vx = value(x);
  require_rank2(vx, "slice_cols");
  const std::size_t c = vx.cols(), rows = vx.rows();
  if (width == 0 || begin + width > c) throw DimensionError("slice_cols: range out of bounds");
  Tensor out({rows, width});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(vx.data().data() + r * c + begin, width, out.data().data() + r * width);
  return push(std::move(out), "slice_cols", {x}, [x, begin, width, c, rows](const Tensor& g, const auto&, auto& grads) {
    Tensor gx({rows, c});
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(g.data().data() + r * width, width, gx.data().data() + r * c + begin);
    accumulate(grads, x.id, std::move(gx));
  });
}

Var Graph::modulate(Var x, Var scale, Var shift, std::size_t tokens) {
  const Tensor& vx = value(x);
  const Tensor& vs = value(scale);
  const Tensor& vt = value(shift);
  require_rank2(vx, "modulate");
  const std::size_t c = vx.cols();
  const std::size_t batch = batch_of(vx, tokens, "modulate");
  if (vs.shape() != Shape{batch, c} || vt.shape() != Shape{batch, c})
    throw DimensionError("modulate: scale/shift must be " + shape_str({batch, c}));
  Tensor out(vx.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t i = (b * tokens + t) * c + j;
        out[i] = vx[i] * vs[b * c + j] + vt[b * c + j];
      }
  return push(std::move(out), "modulate", {x, scale, shift},
              [x, scale, shift, tokens, batch, c](const Tensor& g, const auto& n, auto& grads) {
                const Tensor& xv = n[x.id].value;
                const Tensor& sv = n[scale.id].value;
                if (n[x.id].requires_grad) {
                  Tensor gx(xv.shape());
                  for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t t = 0; t < tokens; ++t)
                      for (std::size_t j = 0; j < c; ++j) {
                        const std::size_t i = (b * tokens + t) * c + j;
                        gx[i] = g[i] * sv[b * c + j];
                      }
                  accumulate(grads, x.id, std::move(gx));
                }
                if (n[scale.id].requires_grad || n[shift.id].requires_grad) {
                  Tensor gs({batch, c}), gt({batch, c});
                  for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t t = 0; t < tokens; ++t)
                      for (std::size_t j = 0; j < c; ++j) {
                        const std::size_t i = (b * tokens + t) * c + j;
                        gs[b * c + j] += g[i] * xv[i];
                        gt[b * c + j] += g[i];
                      }
                  if (n[scale.id].requires_grad) accumulate(grads, scale.id, std::move(gs));
                  if (n[shift.id].requires_grad) accumulate(grads, shift.id, std::move(gt));
                }
              });
}

Var Graph::gate(Var x, Var gvar, double s, std::size_t tokens) {
  const Tensor& vx = value(x);
  const Tensor& vg = value(gvar);
  require_rank2(vx, "gate");
  const std::size_t c = vx.cols();
  const std::size_t batch = batch_of(vx, tokens, "gate");
  if (vg.shape() != Shape{batch, c}) throw DimensionError("gate: gate rows must be " + shape_str({batch, c}));
  if (!std::isfinite(s)) throw NumericError("gate: non-finite gate scale");
  Tensor out(vx.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t i = (b * tokens + t) * c + j;
        out[i] = s * (vg[b * c + j] * vx[i]);
      }
  return push(std::move(out), "gate", {x, gvar}, [x, gvar, s, tokens, batch, c](const Tensor& g, const auto& n, auto& grads) {
    const Tensor& xv = n[x.id].value;
    const Tensor& gv = n[gvar.id].value;
    if (n[x.id].requires_grad) {
      Tensor gx(xv.shape());
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < tokens; ++t)
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = (b * tokens + t) * c + j;
            gx[i] = s * gv[b * c + j] * g[i];
          }
      accumulate(grads, x.id, std::move(gx));
    }
    if (n[gvar.id].requires_grad) {
      Tensor gg({batch, c});
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < tokens; ++t)
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = (b * tokens + t) * c + j;
            gg[b * c + j] += s * xv[i] * g[i];
          }
      accumulate(grads, gvar.id, std::move(gg));
    }
  });
}

Var Graph::attention(Var q, Var k, Var v, std::size_t tokens, std::size_t heads) {
  const Tensor& vq = value(q);
  const Tensor& vk = value(k);
  const Tensor& vv = value(v);
  require_rank2(vq, "attention");
  if (vk.shape() != vq.shape() || vv.shape() != vq.shape())
    throw DimensionError("attention: q/k/v shapes differ");
  const std::size_t c = vq.cols();
  if (heads == 0 || c % heads != 0) throw DimensionError("attention: width not divisible by head count");
  const std::size_t batch = batch_of(vq, tokens, "attention");
  const std::size_t dh = c / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[(b*heads + h)*T*T + i*T + j]
  std::vector<double> probs(batch * heads * tokens * tokens);
  Tensor out(vq.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* p = probs.data() + (b * heads + h) * tokens * tokens;
      for (std::size_t i = 0; i < tokens; ++i) {
        const double* qi = vq.data().data() + (b * tokens + i) * c + h * dh;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < tokens; ++j) {
          const double* kj = vk.data().data() + (b * tokens + j) * c + h * dh;
          double acc = 0.0;
          for (std::size_t e = 0; e < dh; ++e) acc += qi[e] * kj[e];
          p[i * tokens + j] = acc * inv_sqrt;
          mx = std::max(mx, p[i * tokens + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < tokens; ++j) {
          p[i * tokens + j] = std::exp(p[i * tokens + j] - mx);
          z += p[i * tokens + j];
        }
        double* oi = out.data().data() + (b * tokens + i) * c + h * dh;
        for (std::size_t j = 0; j < tokens; ++j) {
          p[i * tokens + j] /= z;
          const double* vj = vv.data().data() + (b * tokens + j) * c + h * dh;
          for (std::size_t e = 0; e < dh; ++e) oi[e] += p[i * tokens + j] * vj[e];
        }
      }
    }
  }
  return push(std::move(out), "attention", {q, k, v},
              [q, k, v, tokens, heads, batch, c, dh, inv_sqrt, probs = std::move(probs)](
                  const Tensor& g, const auto& n, auto& grads) {
                const Tensor& vq = n[q.id].value;
                const Tensor& vk = n[k.id].value;
                const Tensor& vv = n[v.id].value;
                Tensor gq(vq.shape()), gk(vq.shape()), gv(vq.shape());
                std::vector<double> dp(tokens);
                for (std::size_t b = 0; b < batch; ++b) {
                  for (std::size_t h = 0; h < heads; ++h) {
                    const double* p = probs.data() + (b * heads + h) * tokens * tokens;
                    for (std::size_t i = 0; i < tokens; ++i) {
                      const double* gi = g.data().data() + (b * tokens + i) * c + h * dh;
                      double rowdot = 0.0;
                      for (std::size_t j = 0; j < tokens; ++j) {
                        const double* vj = vv.data().data() + (b * tokens + j) * c + h * dh;
                        double* gvj = gv.data().data() + (b * tokens + j) * c + h * dh;
                        const double pij = p[i * tokens + j];
                        double acc = 0.0;
                        for (std::size_t e = 0; e < dh; ++e) {
                          acc += gi[e] * vj[e];
                          gvj[e] += pij * gi[e];
                        }
                        dp[j] = acc;
                        rowdot += acc * pij;
                      }
                      const double* qi = vq.data().data() + (b * tokens + i) * c + h * dh;
                      double* gqi = gq.data().data() + (b * tokens + i) * c + h * dh;
                      for (std::size_t j = 0; j < tokens; ++j) {
                        const double ds = p[i * tokens + j] * (dp[j] - rowdot) * inv_sqrt;
                        const double* kj = vk.data().data() + (b * tokens + j) * c + h * dh;
                        double* gkj = gk.data().data() + (b * tokens + j) * c + h * dh;
                        for (std::size_t e = 0; e < dh; ++e) {
                          gqi[e] += ds * kj[e];
                          gkj[e] += ds * qi[e];
                        }
                      }
                    }
                  }
                }
                if (n[q.id].requires_grad) accumulate(grads, q.id, std::move(gq));
                if (n[k.id].requires_grad) accumulate(grads, k.id, std::move(gk));
                if (n[v.id].requires_grad) accumulate(grads, v.id, std::move(gv));
              });
}

Var Graph::concat_tokens(Var a, std::size_t tokens_a, Var b, std::size_t tokens_b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require_rank2(va, "concat_tokens");
  require_rank2(vb, "concat_tokens");
  const std::size_t c = va.cols();
  if (vb.cols() != c) throw DimensionError("concat_tokens: widths differ");
  const std::size_t batch = batch_of(va, tokens_a, "concat_tokens");
  if (batch_of(vb, tokens_b, "concat_tokens") != batch) throw DimensionError("concat_tokens: batch sizes differ");
  const std::size_t tt = tokens_a + tokens_b;
  Tensor out({batch * tt, c});
  for (std::size_t s = 0; s < batch; ++s) {
    std::copy_n(va.data().data() + s * tokens_a * c, tokens_a * c, out.data().data() + s * tt * c);
    std::copy_n(vb.data().data() + s * tokens_b * c, tokens_b * c, out.data().data() + (s * tt + tokens_a) * c);
  }
  return push(std::move(out), "concat_tokens", {a, b},
              [a, b, tokens_a, tokens_b, batch, c, tt](const Tensor& g, const auto& n, auto& grads) {
                if (n[a.id].requires_grad) {
                  Tensor ga({batch * tokens_a, c});
                  for (std::size_t s = 0; s < batch; ++s)
                    std::copy_n(g.data().data() + s * tt * c, tokens_a * c, ga.data().data() + s * tokens_a * c);
                  accumulate(grads, a.id, std::move(ga));
                }
                if (n[b.id].requires_grad) {
                  Tensor gb({batch * tokens_b, c});
                  for (std::size_t s = 0; s < batch; ++s)
                    std::copy_n(g.data().data() + (s * tt + tokens_a) * c, tokens_b * c,
                                gb.data().data() + s * tokens_b * c);
                  accumulate(grads, b.id, std::move(gb));
                }
              });
}

Var Graph::slice_tokens(Var x, std::size_t tokens, std::size_t begin, std::size_t count) {
  const Tensor& vx = value(x);
  require_rank2(vx, "slice_tokens");
  const std::size_t c = vx.cols();
  const std::size_t batch = batch_of(vx, tokens, "slice_tokens");
  if (count == 0 || begin + count > tokens) throw DimensionError("slice_tokens: range out of bounds");
  Tensor out({batch * count, c});
  for (std::size_t s = 0; s < batch; ++s)
    std::copy_n(vx.data().data() + (s * tokens + begin) * c, count * c, out.data().data() + s * count * c);
  return push(std::move(out), "slice_tokens", {x},
              [x, tokens, begin, count, batch, c](const Tensor& g, const auto&, auto& grads) {
                Tensor gx({batch * tokens, c});
                for (std::size_t s = 0; s < batch; ++s)
                  std::copy_n(g.data().data() + s * count * c, count * c, gx.data().data() + (s * tokens + begin) * c);
                accumulate(grads, x.id, std::move(gx));
              });
}

Var Graph::gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& vt = value(table);
  require_rank2(vt, "gather_rows");
  const std::size_t c = vt.cols(), rows = vt.rows();
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  if (idx.empty()) throw DimensionError("gather_rows: no ids");
  Tensor out({idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) throw DimensionError("gather_rows: id " + std::to_string(idx[i]) + " out of range");
    std::copy_n(vt.data().data() + idx[i] * c, c, out.data().data() + i * c);
  }
  return push(std::move(out), "gather_rows", {table}, [table, idx = std::move(idx), c, rows](const Tensor& g, const auto&, auto& grads) {
    Tensor gt({rows, c});
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) gt[idx[i] * c + j] += g[i * c + j];
    accumulate(grads, table.id, std::move(gt));
  });
}

Var Graph::repeat_rows(Var x, std::size_t times) {
  const Tensor& vx = value(x);
  require_rank2(vx, "repeat_rows");
  if (times == 0) throw DimensionError("repeat_rows: times must be positive");
  const std::size_t c = vx.cols(), rows = vx.rows();
  Tensor out({rows * times, c});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(vx.data().data() + r * c, c, out.data().data() + (r * times + t) * c);
  return push(std::move(out), "repeat_rows", {x}, [x, times, c, rows](const Tensor& g, const auto&, auto& grads) {
    Tensor gx({rows, c});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += g[(r * times + t) * c + j];
    accumulate(grads, x.id, std::move(gx));
  });
}

Var Graph::sum(Var a) {
  return push(Tensor({1}, gatescale::sum(value(a))), "sum", {a}, [a](const Tensor& g, const auto& n, auto& grads) {
    accumulate(grads, a.id, Tensor(n[a.id].value.shape(), g[0]));
  });
}

Var Graph::mse(Var a, Var target) {
  const Tensor& va = value(a);
  const Tensor& vt = value(target);
  if (va.shape() != vt.shape())
    throw DimensionError("mse: " + shape_str(va.shape()) + " vs " + shape_str(vt.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) acc += (va[i] - vt[i]) * (va[i] - vt[i]);
  const double inv_n = 1.0 / static_cast<double>(va.size());
  return push(Tensor({1}, acc * inv_n), "mse", {a, target}, [a, target, inv_n](const Tensor& g, const auto& n, auto& grads) {
    const Tensor& x = n[a.id].value;
    const Tensor& y = n[target.id].value;
    Tensor d(x.shape());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = 2.0 * inv_n * g[0] * (x[i] - y[i]);
    if (n[a.id].requires_grad) accumulate(grads, a.id, d);
    if (n[target.id].requires_grad) accumulate(grads, target.id, scaled(d, -1.0));
  });
}

Gradients Graph::grad(Var loss) const {
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw ContractError("grad: loss must be scalar, got " + shape_str(lv.shape()));
  std::vector<Tensor> grads(nodes_.size());
  if (!nodes_[loss.id].requires_grad) return Gradients(std::move(grads));
  grads[loss.id] = Tensor(lv.shape(), 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.backward || grads[i].empty()) continue;
    node.backward(grads[i], nodes_, grads);
  }
  return Gradients(std::move(grads));
}

}  // namespace gatescale
