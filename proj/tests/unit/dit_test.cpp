#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gatescale/dit/dataset.hpp"
#include "gatescale/dit/model.hpp"
#include "gatescale/dit/sampler.hpp"
#include "gatescale/dit/trainer.hpp"
#include "gatescale/numerics/errors.hpp"

using namespace gatescale;
using namespace gatescale::dit;

namespace {

Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

ArchSpec small_arch(Variant v, bool pos = true) {
  ArchSpec a;
  a.variant = v;
  a.depth = 3;
  a.model_dim = 8;
  a.heads = 2;
  a.text_tokens = 3;
  a.ff_mult = 2;
  a.positional_embedding = pos;
  return a;
}

// Random weights everywhere, including modulation biases, so no gate is 1.
DitModel random_model(const ArchSpec& arch, std::uint64_t seed) {
  Rng rng(seed);
  DitModel m(arch, rng);
  for (auto& [name, w] : m.mutable_weights())
    for (double& v : w.data()) v += 0.2 * rng.normal();
  return m;
}

struct BlockFixture {
  static constexpr std::size_t kT = 5, kD = 8, kHeads = 2, kF = 12;
  Rng rng{99};
  Tensor x = randn({kT, kD}, rng);
  Tensor wq = randn({kD, kD}, rng, 0.4), wk = randn({kD, kD}, rng, 0.4), wv = randn({kD, kD}, rng, 0.4),
         wo = randn({kD, kD}, rng, 0.4);
  Tensor w1 = randn({kD, kF}, rng, 0.4), b1 = randn({kF}, rng, 0.1), w2 = randn({kF, kD}, rng, 0.4),
         b2 = randn({kD}, rng, 0.1);
  std::vector<Tensor> mod = {randn({1, kD}, rng), randn({1, kD}, rng), randn({1, kD}, rng),
                             randn({1, kD}, rng), randn({1, kD}, rng), randn({1, kD}, rng)};

  Tensor run(double s_attn, double s_ff, int halve_gamma1 = 0) {
    Graph g;
    BlockWeights w{g.constant(wq), g.constant(wk), g.constant(wv), g.constant(wo),
                   g.constant(w1), g.constant(b1), g.constant(w2), g.constant(b2)};
    std::vector<Tensor> m = mod;
    if (halve_gamma1) m[2] = scaled(m[2], 0.5);
    Modulation md{g.constant(m[0]), g.constant(m[1]), g.constant(m[2]),
                  g.constant(m[3]), g.constant(m[4]), g.constant(m[5])};
    return g.value(dit_block_forward(g, g.constant(x), kT, kHeads, w, md, s_attn, s_ff));
  }
};

// Plain-tensor reimplementation of one standard block.
Tensor oracle_block(const BlockFixture& f) {
  const std::size_t T = f.kT, D = f.kD, H = f.kHeads, dh = D / H;
  const auto modulate_rows = [&](const Tensor& x, const Tensor& a, const Tensor& b) {
    Tensor out = layer_norm(x);
    for (std::size_t r = 0; r < T; ++r)
      for (std::size_t c = 0; c < D; ++c) out.at(r, c) = a[c] * out.at(r, c) + b[c];
    return out;
  };
  Tensor x = f.x;
  const Tensor h = modulate_rows(x, f.mod[0], f.mod[1]);
  const Tensor q = matmul(h, f.wq), k = matmul(h, f.wk), v = matmul(h, f.wv);
  Tensor att({T, D});
  for (std::size_t hd = 0; hd < H; ++hd) {
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> s(T);
      for (std::size_t j = 0; j < T; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += q.at(i, hd * dh + c) * k.at(j, hd * dh + c);
        s[j] = acc / std::sqrt(static_cast<double>(dh));
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - mx));
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < T; ++j) acc += s[j] / z * v.at(j, hd * dh + c);
        att.at(i, hd * dh + c) = acc;
      }
    }
  }
  const Tensor o = matmul(att, f.wo);
  for (std::size_t r = 0; r < T; ++r)
    for (std::size_t c = 0; c < D; ++c) x.at(r, c) += f.mod[2][c] * o.at(r, c);
  const Tensor h2 = modulate_rows(x, f.mod[3], f.mod[4]);
  Tensor a1 = matmul(h2, f.w1);
  for (std::size_t r = 0; r < T; ++r)
    for (std::size_t c = 0; c < f.kF; ++c) {
      const double u = a1.at(r, c) + f.b1[c];
      a1.at(r, c) = u / (1.0 + std::exp(-u));
    }
  const Tensor ff = matmul(a1, f.w2);
  for (std::size_t r = 0; r < T; ++r)
    for (std::size_t c = 0; c < D; ++c) x.at(r, c) += f.mod[5][c] * (ff.at(r, c) + f.b2[c]);
  return x;
}

std::vector<double> times(std::size_t b, double t) { return std::vector<double>(b, t); }

}  // namespace

TEST(DitBlock, ZeroScalesReturnInputExactly) {
  BlockFixture f;
  EXPECT_EQ(f.run(0.0, 0.0), f.x);
}

TEST(DitBlock, UnitScalesMatchPlainTensorOracle) {
  BlockFixture f;
  EXPECT_LT(max_abs_diff(f.run(1.0, 1.0), oracle_block(f)), 1e-12);
}

TEST(DitBlock, ScalingGammaEqualsGateScaleExactly) {
  BlockFixture f;
  EXPECT_EQ(f.run(2.0, 1.0, /*halve_gamma1=*/1), f.run(1.0, 1.0));
}

TEST(MmDitBlock, ScalesControlEachStream) {
  Rng rng(5);
  const std::size_t tv = 4, tt = 3, d = 8;
  const Tensor xv = randn({tv, d}, rng), xt = randn({tt, d}, rng);
  std::vector<Tensor> wts;
  for (int i = 0; i < 16; ++i) wts.push_back(randn(i % 8 == 4 ? Shape{d, 2 * d} : i % 8 == 6 ? Shape{2 * d, d}
                                                 : i % 8 == 5 ? Shape{2 * d} : i % 8 == 7 ? Shape{d} : Shape{d, d},
                                                 rng, 0.4));
  std::vector<Tensor> mods;
  for (int i = 0; i < 12; ++i) mods.push_back(randn({1, d}, rng));
  const auto run = [&](MmGateScales s) {
    Graph g;
    std::vector<Var> v;
    for (const Tensor& t : wts) v.push_back(g.constant(t));
    std::vector<Var> m;
    for (const Tensor& t : mods) m.push_back(g.constant(t));
    const BlockWeights wv{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
    const BlockWeights wt{v[8], v[9], v[10], v[11], v[12], v[13], v[14], v[15]};
    const Modulation mv{m[0], m[1], m[2], m[3], m[4], m[5]}, mt{m[6], m[7], m[8], m[9], m[10], m[11]};
    const StreamPair out = mmdit_block_forward(g, g.constant(xv), tv, g.constant(xt), tt, 2, wv, wt, mv, mt, s);
    return std::pair{g.value(out.visual), g.value(out.text)};
  };
  const auto zero = run({0, 0, 0, 0});
  EXPECT_EQ(zero.first, xv);
  EXPECT_EQ(zero.second, xt);
  const auto visual_only = run({1, 0, 1, 0});
  const auto full = run({1, 1, 1, 1});
  EXPECT_EQ(visual_only.second, xt);
  // The visual attention output does not depend on the text gates in this block.
  EXPECT_EQ(visual_only.first, full.first);
  EXPECT_GT(max_abs_diff(full.second, xt), 1e-3);
}

TEST(ModelForward, AblationEqualsBlockRemoval) {
  for (Variant v : {Variant::StandardDit, Variant::MmDit}) {
    const ArchSpec arch = small_arch(v);
    const DitModel m = random_model(arch, 3);
    Rng rng(4);
    const Tensor x = randn({2 * kImageTokens, kPatchDim}, rng);
    const std::vector<std::size_t> cls{0, arch.null_class()};
    for (std::size_t b = 0; b < arch.depth; ++b) {
      GateScales s = GateScales::identity(arch);
      s.set_block(b, 0.0);
      const Tensor zeroed = model_forward(m, x, times(2, 0.4), cls, s);
      Graph g;
      const BoundWeights w(g, m, false);
      const Tensor removed =
          g.value(model_forward(g, w, arch, g.constant(x), times(2, 0.4), cls, GateScales::identity(arch), b));
      EXPECT_LE(max_abs_diff(zeroed, removed), 1e-12) << to_string(v) << " block " << b;
    }
  }
}

TEST(ModelForward, PermutingImageTokensPermutesOutput) {
  for (Variant v : {Variant::StandardDit, Variant::MmDit}) {
    const ArchSpec arch = small_arch(v, /*pos=*/false);
    const DitModel m = random_model(arch, 8);
    Rng rng(9);
    const Tensor x = randn({kImageTokens, kPatchDim}, rng);
    std::vector<std::size_t> perm(kImageTokens);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    Tensor xp(x.shape());
    for (std::size_t i = 0; i < kImageTokens; ++i)
      for (std::size_t c = 0; c < kPatchDim; ++c) xp.at(i, c) = x.at(perm[i], c);
    const std::vector<std::size_t> cls{2};
    const Tensor y = model_forward(m, x, times(1, 0.3), cls, GateScales::identity(arch));
    const Tensor yp = model_forward(m, xp, times(1, 0.3), cls, GateScales::identity(arch));
    double worst = 0.0;
    for (std::size_t i = 0; i < kImageTokens; ++i)
      for (std::size_t c = 0; c < kPatchDim; ++c) worst = std::max(worst, std::abs(yp.at(i, c) - y.at(perm[i], c)));
    EXPECT_LT(worst, 1e-12) << to_string(v);
  }
}

TEST(ModelForward, EndpointsFiniteAndZeroUnembedGivesZero) {
  const ArchSpec arch = small_arch(Variant::MmDit);
  DitModel m = random_model(arch, 10);
  Rng rng(11);
  const Tensor x = randn({kImageTokens, kPatchDim}, rng);
  const std::vector<std::size_t> cls{1};
  for (double t : {0.0, 1.0}) EXPECT_TRUE(model_forward(m, x, times(1, t), cls, GateScales::identity(arch)).all_finite());
  for (double& w : m.mutable_weight("out.w").data()) w = 0.0;
  for (double& w : m.mutable_weight("out.b").data()) w = 0.0;
  const Tensor v = model_forward(m, x, times(1, 0.5), cls, GateScales::identity(arch));
  EXPECT_EQ(v, Tensor(v.shape(), 0.0));
}

TEST(ModelForward, RejectsWrongScaleShape) {
  const ArchSpec arch = small_arch(Variant::StandardDit);
  const DitModel m = random_model(arch, 12);
  const Tensor x({kImageTokens, kPatchDim}, 0.1);
  const std::vector<std::size_t> cls{0};
  EXPECT_THROW(model_forward(m, x, times(1, 0.5), cls, GateScales(arch.depth + 1, 2)), CalibrationShapeError);
  EXPECT_THROW(model_forward(m, x, times(1, 0.5), cls, GateScales(arch.depth, 4)), CalibrationShapeError);
}

TEST(ModelLayout, ModulationWidthAndParameterNames) {
  for (Variant v : {Variant::StandardDit, Variant::MmDit}) {
    ArchSpec arch;
    arch.variant = v;
    const auto layout = DitModel::layout(arch);
    const std::size_t per = v == Variant::MmDit ? 12 : 6;
    std::size_t width = 0;
    for (const auto& [name, shape] : layout)
      if (name.rfind("block0.", 0) == 0 && name.find("mod.b2") != std::string::npos) width += shape[0];
    EXPECT_EQ(width, per * arch.model_dim);
  }
  ArchSpec bad;
  bad.heads = 5;
  EXPECT_THROW(bad.validate(), ContractError);
}

TEST(Patchify, TwoByTwoRowMajorPatches) {
  Tensor img({8, 8});
  for (std::size_t i = 0; i < 64; ++i) img[i] = static_cast<double>(i);
  const Tensor tok = patchify(img);
  for (std::size_t k = 0; k < 16; ++k)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_EQ(tok.at(k, j), img.at(2 * (k / 4) + j / 2, 2 * (k % 4) + j % 2));
  EXPECT_EQ(unpatchify(tok), img);
}

TEST(Dataset, TemplatePixelCounts) {
  // Disk of radius 2.6 about the centre: 6 pixel centres per quadrant.
  const std::size_t want[] = {24, 20, 16, 16};
  for (std::size_t c = 0; c < kShapeClassCount; ++c) {
    const Tensor t = class_template(c);
    std::size_t on = 0;
    for (double v : t.values()) {
      EXPECT_TRUE(v == 0.0 || v == 1.0);
      on += v == 1.0;
    }
    EXPECT_EQ(on, want[c]) << class_name(c);
  }
  EXPECT_EQ(parse_class("bar-v"), 3u);
  EXPECT_THROW(class_template(4), ContractError);
}

// --- sampler ---------------------------------------------------------------

TEST(Euler, ConstantFieldOneStep) {
  Rng rng(1);
  const Tensor vstar = randn({kImageTokens, kPatchDim}, rng);
  const VelocityField field = [&](const Tensor& x, double, std::span<const std::size_t>) {
    Tensor v(x.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = vstar[i % vstar.size()];
    return v;
  };
  const SampleRequest req{0, 1, 0.0, 77};
  const Tensor out = euler_sample_batch(field, 4, std::span(&req, 1)).front();
  EXPECT_EQ(out, unpatchify(add(initial_noise(77), vstar)));
}

TEST(Euler, ZeroFieldReturnsNoiseForAnyNfe) {
  const VelocityField zero = [](const Tensor& x, double, std::span<const std::size_t>) {
    return Tensor(x.shape(), 0.0);
  };
  for (std::size_t nfe : {1, 2, 4, 8}) {
    const SampleRequest req{1, nfe, 0.0, 5};
    EXPECT_EQ(euler_sample_batch(zero, 4, std::span(&req, 1)).front(), unpatchify(initial_noise(5)));
  }
}

TEST(Euler, LinearFieldMatchesCompoundGrowth) {
  const VelocityField linear = [](const Tensor& x, double, std::span<const std::size_t>) { return x; };
  for (std::size_t n : {1, 3, 10, 50}) {
    const SampleRequest req{0, n, 0.0, 9};
    const Tensor out = euler_sample_batch(linear, 4, std::span(&req, 1)).front();
    const Tensor want = unpatchify(scaled(initial_noise(9), std::pow(1.0 + 1.0 / static_cast<double>(n), n)));
    EXPECT_LT(max_abs_diff(out, want), 1e-12 * std::max(1.0, frobenius_norm(want)));
  }
}

TEST(Euler, ZeroGuidanceNeverEvaluatesUnconditional) {
  const ArchSpec arch = small_arch(Variant::StandardDit);
  const DitModel m = random_model(arch, 13);
  std::size_t null_calls = 0;
  const VelocityField base = model_field(m, GateScales::identity(arch));
  const VelocityField counting = [&](const Tensor& x, double t, std::span<const std::size_t> cls) {
    null_calls += std::count(cls.begin(), cls.end(), arch.null_class());
    return base(x, t, cls);
  };
  const SampleRequest req{2, 6, 0.0, 3};
  const Tensor guided = euler_sample_batch(counting, arch.null_class(), std::span(&req, 1)).front();
  EXPECT_EQ(null_calls, 0u);
  // A sampler written without any guidance machinery.
  Tensor x = initial_noise(3);
  const std::vector<std::size_t> cls{2};
  for (int n = 0; n < 6; ++n) {
    const Tensor v = base(x, n * (1.0 / 6.0), cls);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += v[i] * (1.0 / 6.0);
  }
  EXPECT_EQ(guided, unpatchify(x));
}

TEST(Euler, FinerStepsConverge) {
  const ArchSpec arch = small_arch(Variant::StandardDit);
  const DitModel m = random_model(arch, 14);
  const VelocityField f = model_field(m, GateScales::identity(arch));
  std::vector<SampleRequest> reqs;
  const auto run = [&](std::size_t nfe) {
    reqs.clear();
    for (std::uint64_t s = 0; s < 64; ++s) reqs.push_back({s % 4, nfe, 0.0, s});
    return euler_sample_batch(f, arch.null_class(), reqs);
  };
  const auto r10 = run(10), r100 = run(100), r200 = run(200);
  double fine = 0.0, coarse = 0.0;
  for (std::size_t i = 0; i < 64; ++i) {
    fine += frobenius_norm(sub(r100[i], r200[i]));
    coarse += frobenius_norm(sub(r10[i], r200[i]));
  }
  EXPECT_LT(fine, coarse);
}

TEST(Euler, RejectsMixedBatchesAndZeroNfe) {
  const VelocityField zero = [](const Tensor& x, double, std::span<const std::size_t>) { return x; };
  const SampleRequest mixed[] = {{0, 2, 0.0, 1}, {0, 3, 0.0, 2}};
  EXPECT_THROW(euler_sample_batch(zero, 4, mixed), ContractError);
  const SampleRequest none[] = {{0, 0, 0.0, 1}};
  EXPECT_THROW(euler_sample_batch(zero, 4, none), ContractError);
}

// --- trainer ------------------------------------------------------------------

TEST(FlowMatching, ZeroOutputLossIsMeanSquaredTarget) {
  const ArchSpec arch = small_arch(Variant::StandardDit);
  DitModel m = random_model(arch, 15);
  for (double& w : m.mutable_weight("out.w").data()) w = 0.0;
  for (double& w : m.mutable_weight("out.b").data()) w = 0.0;
  Rng rng(16);
  const FlowBatch batch = sample_flow_batch(DatasetSpec{}, 8, 0.1, arch.null_class(), rng);
  double want = 0.0;
  for (double v : batch.target.values()) want += v * v;
  want /= static_cast<double>(batch.target.size());
  EXPECT_NEAR(flow_matching_loss(m, batch), want, 1e-14);
}

TEST(FlowMatching, BatchInterpolatesNoiseAndData) {
  Rng rng(17);
  const std::vector<Tensor> images{class_template(0), class_template(3)};
  const std::vector<std::size_t> classes{0, 3};
  const FlowBatch b = make_flow_batch(images, classes, 0.0, 4, rng);
  for (std::size_t s = 0; s < 2; ++s) {
    const Tensor x1 = patchify(images[s]);
    for (std::size_t i = 0; i < x1.size(); ++i) {
      const std::size_t k = s * x1.size() + i;
      const double x0 = x1[i] - b.target[k];
      EXPECT_NEAR(b.x_t[k], (1.0 - b.t[s]) * x0 + b.t[s] * x1[i], 1e-14);
    }
  }
  EXPECT_EQ(b.classes, classes);
}

TEST(Train, ZeroStepsLeavesModelUnchanged) {
  const ArchSpec arch = small_arch(Variant::StandardDit);
  DitModel m = random_model(arch, 18);
  const auto before = m.weights();
  TrainConfig c;
  c.steps = 0;
  Rng rng(1);
  EXPECT_TRUE(train(m, c, rng).empty());
  EXPECT_EQ(m.weights(), before);
}

TEST(Train, DeterministicAndReducesHeldOutLoss) {
  const ArchSpec arch = small_arch(Variant::StandardDit);
  TrainConfig c;
  c.steps = 300;
  c.batch = 16;
  c.lr = 3e-3;
  Rng init_a(2), init_b(2);
  DitModel a(arch, init_a), b(arch, init_b);
  Rng hold(3);
  const FlowBatch held = sample_flow_batch(c.data, 128, 0.1, arch.null_class(), hold);
  const double before = flow_matching_loss(a, held);
  Rng ra(4), rb(4);
  const auto ca = train(a, c, ra);
  const auto cb = train(b, c, rb);
  EXPECT_EQ(a.weights(), b.weights());
  ASSERT_EQ(ca.size(), 300u);
  EXPECT_EQ(ca.back().loss, cb.back().loss);
  EXPECT_LT(flow_matching_loss(a, held), 0.5 * before);
}

TEST(Train, DivergenceReportsStep) {
  const ArchSpec arch = small_arch(Variant::StandardDit);
  Rng init(5);
  DitModel m(arch, init);
  TrainConfig c;
  c.steps = 200;
  c.batch = 4;
  c.lr = 1e200;
  Rng rng(6);
  try {
    train(m, c, rng);
    FAIL() << "expected divergence";
  } catch (const TrainingError& e) {
    EXPECT_GE(e.step(), 0);
    EXPECT_LT(e.step(), 200);
  }
}
