#include <gtest/gtest.h>

#include "gatescale/calibration/calibration.hpp"
#include "gatescale/calibration/ensemble.hpp"
#include "gatescale/numerics/errors.hpp"

using namespace gatescale;
using namespace gatescale::calibration;
using dit::ArchSpec;
using dit::Variant;

namespace {

ArchSpec arch_of(Variant v, std::size_t depth = 3) {
  ArchSpec a;
  a.variant = v;
  a.depth = depth;
  a.model_dim = 8;
  a.heads = 2;
  a.text_tokens = 2;
  a.ff_mult = 2;
  return a;
}

dit::DitModel random_model(const ArchSpec& arch, std::uint64_t seed) {
  Rng rng(seed);
  dit::DitModel m(arch, rng);
  for (auto& [name, w] : m.mutable_weights())
    for (double& v : w.data()) v += 0.2 * rng.normal();
  return m;
}

struct Probe {
  Tensor x;
  std::vector<double> t{0.2, 0.7};
  std::vector<std::size_t> classes{1, 3};
};

Probe probe(std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({2 * dit::kImageTokens, dit::kPatchDim});
  for (double& v : x.data()) v = rng.normal();
  return {x};
}

Tensor forward(const dit::DitModel& m, const Probe& p, const dit::GateScales& s,
               std::span<const std::size_t> classes = {}) {
  return dit::model_forward(m, p.x, p.t, classes.empty() ? std::span<const std::size_t>(p.classes) : classes, s);
}

}  // namespace

TEST(CalibrationDimension, TableForDepthSix) {
  const ArchSpec std6 = arch_of(Variant::StandardDit, 6), mm6 = arch_of(Variant::MmDit, 6);
  EXPECT_EQ(dimension(Granularity::Block, std6), 7u);
  EXPECT_EQ(dimension(Granularity::Layer, std6), 13u);
  EXPECT_EQ(dimension(Granularity::Gate, std6), 13u);
  EXPECT_EQ(dimension(Granularity::Block, mm6), 7u);
  EXPECT_EQ(dimension(Granularity::Layer, mm6), 13u);
  EXPECT_EQ(dimension(Granularity::Gate, mm6), 25u);
}

TEST(CalibrationVector, FlatRoundTripAndShapeErrors) {
  const ArchSpec a = arch_of(Variant::MmDit);
  const std::vector<double> flat{0.9, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  const auto c = CalibrationVector::from_flat(flat, Granularity::Gate, a);
  EXPECT_EQ(c.to_flat(), flat);
  EXPECT_EQ(c.omega(), 0.9);
  EXPECT_THROW(CalibrationVector::from_flat(std::span(flat).first(12), Granularity::Gate, a), CalibrationShapeError);
  EXPECT_THROW(c.expand(arch_of(Variant::MmDit, 4)), CalibrationShapeError);
  EXPECT_THROW(parse_granularity("blocks"), ContractError);
}

TEST(CalibrationVector, LayerExpandsToBothModalities) {
  const ArchSpec a = arch_of(Variant::MmDit, 2);
  const std::vector<double> flat{1.0, 0.1, 0.2, 0.3, 0.4};
  const auto s = CalibrationVector::from_flat(flat, Granularity::Layer, a).expand(a);
  // Gates per block: attention visual, attention text, FF visual, FF text.
  const std::vector<double> want{0.1, 0.1, 0.2, 0.2, 0.3, 0.3, 0.4, 0.4};
  EXPECT_EQ(std::vector<double>(s.values().begin(), s.values().end()), want);
}

TEST(CalibratedForward, IdentityIsBitwiseUncalibrated) {
  for (Variant v : {Variant::StandardDit, Variant::MmDit}) {
    const ArchSpec a = arch_of(v);
    const auto m = random_model(a, 1);
    const Probe p = probe(2);
    const Tensor plain = forward(m, p, dit::GateScales::identity(a));
    for (Granularity g : {Granularity::Block, Granularity::Layer, Granularity::Gate})
      EXPECT_EQ(calibrated_forward(m, p.x, p.t, p.classes, CalibrationVector::identity(g, a)), plain);
  }
}

TEST(CalibratedForward, RefiningPreservesOutputsExactly) {
  for (Variant v : {Variant::StandardDit, Variant::MmDit}) {
    const ArchSpec a = arch_of(v);
    const auto m = random_model(a, 3);
    const Probe p = probe(4);
    Rng rng(5);
    std::vector<double> flat(dimension(Granularity::Block, a));
    for (double& x : flat) x = 0.3 + 1.4 * rng.uniform();
    const auto coarse = CalibrationVector::from_flat(flat, Granularity::Block, a);
    const Tensor want = calibrated_forward(m, p.x, p.t, p.classes, coarse);
    for (Granularity g : {Granularity::Layer, Granularity::Gate}) {
      const auto fine = coarse.refined(g, a);
      EXPECT_EQ(fine.granularity(), g);
      EXPECT_EQ(fine.dimension(), dimension(g, a));
      EXPECT_EQ(fine.expand(a), coarse.expand(a));
      EXPECT_EQ(calibrated_forward(m, p.x, p.t, p.classes, fine), want);
    }
  }
}

TEST(CalibratedForward, LinearInOmega) {
  const ArchSpec a = arch_of(Variant::MmDit);
  const auto m = random_model(a, 6);
  const Probe p = probe(7);
  std::vector<double> flat(dimension(Granularity::Gate, a), 0.8);
  const Tensor base = forward(m, p, CalibrationVector::from_flat(flat, Granularity::Gate, a).expand(a));
  for (double omega : {0.0, -1.5, 2.5}) {
    flat[0] = omega;
    const Tensor got = calibrated_forward(m, p.x, p.t, p.classes, CalibrationVector::from_flat(flat, Granularity::Gate, a));
    EXPECT_LE(max_abs_diff(got, scaled(base, omega)), 1e-15 * (1.0 + std::abs(omega)) * frobenius_norm(base));
  }
}

TEST(Ensemble, ClassifierFreeGuidance) {
  const ArchSpec a = arch_of(Variant::StandardDit);
  const auto m = random_model(a, 8);
  const Probe p = probe(9);
  const std::vector<std::size_t> uncond(2, a.null_class());
  const Tensor vc = forward(m, p, dit::GateScales::identity(a));
  const Tensor vu = forward(m, p, dit::GateScales::identity(a), uncond);
  for (double g : {0.0, 1.0, 3.5, 7.0}) {
    const Tensor got = ensemble_velocity(cfg_ensemble(a, g), m, p.x, p.t, p.classes);
    Tensor want(vc.shape());
    for (std::size_t i = 0; i < want.size(); ++i) want[i] = vc[i] + g * (vc[i] - vu[i]);
    EXPECT_LE(max_abs_diff(got, want), 1e-12) << "g=" << g;
  }
  EXPECT_EQ(ensemble_velocity(cfg_ensemble(a, 0.0), m, p.x, p.t, p.classes), vc);
}

TEST(Ensemble, SkipLayerGuidance) {
  for (Variant v : {Variant::StandardDit, Variant::MmDit}) {
    const ArchSpec a = arch_of(v);
    const auto m = random_model(a, 10);
    const Probe p = probe(11);
    const std::size_t skipped = 1;
    const double g = 2.0;
    std::vector<double> weak = CalibrationVector::identity(Granularity::Gate, a).to_flat();
    weak[0] = -g;
    for (std::size_t k = 0; k < a.gates_per_block(); ++k) weak[1 + skipped * a.gates_per_block() + k] = 0.0;
    std::vector<double> strong = CalibrationVector::identity(Granularity::Gate, a).to_flat();
    strong[0] = 1.0 + g;
    EnsembleSpec spec;
    spec.members.push_back({CalibrationVector::from_flat(strong, Granularity::Gate, a), ConditionRole::Conditional});
    spec.members.push_back({CalibrationVector::from_flat(weak, Granularity::Gate, a), ConditionRole::SamePrompt});

    const Tensor vc = forward(m, p, dit::GateScales::identity(a));
    Graph graph;
    const dit::BoundWeights w(graph, m, false);
    const Tensor vskip = graph.value(dit::model_forward(graph, w, a, graph.constant(p.x), p.t, p.classes,
                                                        dit::GateScales::identity(a), skipped));
    Tensor want(vc.shape());
    for (std::size_t i = 0; i < want.size(); ++i) want[i] = vc[i] + g * (vc[i] - vskip[i]);
    EXPECT_LE(max_abs_diff(ensemble_velocity(spec, m, p.x, p.t, p.classes), want), 1e-12) << dit::to_string(v);
  }
}

TEST(Ensemble, ValidateAndFlatLayout) {
  const ArchSpec a = arch_of(Variant::MmDit);
  EXPECT_THROW(EnsembleSpec{}.validate(), ContractError);
  EnsembleSpec mixed;
  mixed.members.push_back({CalibrationVector::identity(Granularity::Block, a), ConditionRole::Conditional});
  mixed.members.push_back({CalibrationVector::identity(Granularity::Gate, a), ConditionRole::Unconditional});
  EXPECT_THROW(mixed.validate(), CalibrationShapeError);

  const std::vector<ConditionRole> roles{ConditionRole::Conditional, ConditionRole::Unconditional};
  std::vector<double> flat(2 * dimension(Granularity::Layer, a));
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = 0.1 * static_cast<double>(i);
  const auto spec = EnsembleSpec::from_flat(flat, Granularity::Layer, a, roles);
  EXPECT_EQ(spec.to_flat(), flat);
  EXPECT_EQ(spec.members[1].calibration.omega(), flat[dimension(Granularity::Layer, a)]);
  EXPECT_THROW(EnsembleSpec::from_flat(std::span(flat).first(flat.size() - 1), Granularity::Layer, a, roles),
               CalibrationShapeError);
  EXPECT_EQ(parse_role(to_string(ConditionRole::SamePrompt)), ConditionRole::SamePrompt);
}

TEST(CalibratedSampling, IdentityMatchesPlainSampler) {
  const ArchSpec a = arch_of(Variant::StandardDit);
  const auto m = random_model(a, 12);
  const dit::SampleRequest req{2, 5, 0.0, 44};
  const Tensor plain =
      dit::euler_sample_batch(dit::model_field(m, dit::GateScales::identity(a)), a.null_class(), std::span(&req, 1))
          .front();
  EXPECT_EQ(euler_sample(m, req, CalibrationVector::identity(Granularity::Layer, a)), plain);
}
