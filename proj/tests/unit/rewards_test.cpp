#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "gatescale/dit/dataset.hpp"
#include "gatescale/numerics/errors.hpp"
#include "gatescale/rewards/rewards.hpp"

using namespace gatescale;
using namespace gatescale::rewards;

namespace {

Tensor random_image(Rng& rng, double scale = 1.0) {
  Tensor t({8, 8});
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

dit::ArchSpec tiny_arch() {
  dit::ArchSpec a;
  a.depth = 2;
  a.model_dim = 8;
  a.heads = 2;
  a.ff_mult = 2;
  return a;
}

// Direct V-statistic, written without any helper from the library.
double mmd2_oracle(const std::vector<Tensor>& x, const std::vector<Tensor>& y, double h) {
  const auto k = [h](const Tensor& a, const Tensor& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-d / (2 * h * h));
  };
  const auto mean_k = [&](const std::vector<Tensor>& p, const std::vector<Tensor>& q) {
    double s = 0.0;
    for (const auto& a : p)
      for (const auto& b : q) s += k(a, b);
    return s / static_cast<double>(p.size() * q.size());
  };
  return mean_k(x, x) + mean_k(y, y) - 2 * mean_k(x, y);
}

}  // namespace

TEST(TemplateCorrelation, Examples) {
  for (std::size_t c = 0; c < dit::kShapeClassCount; ++c) {
    const Tensor t = dit::class_template(c);
    EXPECT_NEAR(template_correlation(t, c), 1.0, 1e-15);
    EXPECT_NEAR(template_correlation(scaled(t, -1.0), c), -1.0, 1e-15);
    EXPECT_EQ(template_correlation(Tensor({8, 8}, 0.4), c), 0.0);
  }
  EXPECT_THROW(template_correlation(Tensor({8, 8}), dit::kShapeClassCount), ContractError);
}

TEST(TemplateCorrelation, InvariantToPositiveAffineMaps) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor img = random_image(rng);
    const std::size_t c = rng.below(4);
    const double gain = std::pow(10.0, 2.0 * rng.uniform() - 1.0), shift = rng.normal();
    Tensor moved(img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) moved[i] = gain * img[i] + shift;
    EXPECT_NEAR(template_correlation(moved, c), template_correlation(img, c), 1e-12);
  }
}

TEST(NegMmd, Examples) {
  Rng rng(4);
  const Tensor a = random_image(rng), b = random_image(rng);
  const std::vector<Tensor> set{a, b, random_image(rng)};
  EXPECT_EQ(neg_mmd_rbf(set, set, 2.0), 0.0);
  const double d2 = std::pow(frobenius_norm(sub(a, b)), 2);
  EXPECT_NEAR(neg_mmd_rbf(std::span(&a, 1), std::span(&b, 1), 2.0), -(2 - 2 * std::exp(-d2 / 8.0)), 1e-14);
  EXPECT_NEAR(neg_mmd_rbf(std::span(&a, 1), std::span(&b, 1), 1e-3), -2.0, 1e-12);
  EXPECT_THROW(neg_mmd_rbf({}, set, 2.0), ContractError);
}

TEST(NegMmd, MatchesOracleAndIsNonPositive) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> x, y;
    for (std::size_t i = 0; i < 2 + rng.below(5); ++i) x.push_back(random_image(rng, 0.3));
    for (std::size_t i = 0; i < 2 + rng.below(5); ++i) y.push_back(random_image(rng, 0.3));
    const double got = neg_mmd_rbf(x, y, 1.5);
    EXPECT_LE(got, 0.0);
    EXPECT_LT(got, 0.0);
    EXPECT_NEAR(got, -mmd2_oracle(x, y, 1.5), 1e-13);
    // Same multiset in another order.
    std::vector<Tensor> shuffled = x;
    std::reverse(shuffled.begin(), shuffled.end());
    EXPECT_NEAR(neg_mmd_rbf(x, shuffled, 1.5), 0.0, 1e-15);
  }
}

TEST(PixelRangePenalty, OnlyOutOfRangeMassCounts) {
  Tensor img({8, 8}, 0.5);
  EXPECT_EQ(pixel_range_penalty(img, 3.0), 0.0);
  img[0] = 1.5;   // 0.25 outside
  img[1] = -2.0;  // 4 outside
  EXPECT_NEAR(pixel_range_penalty(img, 3.0), -3.0 * 4.25 / 64.0, 1e-15);
}

TEST(Diversity, Examples) {
  Rng rng(6);
  const Tensor a = random_image(rng);
  const std::vector<Tensor> same{a, a, a};
  EXPECT_EQ(diversity_pairwise(same), 0.0);
  Tensor b = a;
  for (double& v : b.data()) v += 1.0;
  const std::vector<Tensor> pair{a, b};
  EXPECT_NEAR(diversity_pairwise(pair), 1.0, 1e-14);
  std::vector<Tensor> set{a, b, random_image(rng), random_image(rng)};
  const double d = diversity_pairwise(set);
  std::swap(set[0], set[3]);
  std::swap(set[1], set[2]);
  EXPECT_NEAR(diversity_pairwise(set), d, 1e-14);
  EXPECT_THROW(diversity_pairwise(std::span(set).first(1)), ContractError);
}

TEST(RewardSpec, NameParseRoundTrip) {
  const RewardSpec d = RewardSpec::default_training();
  EXPECT_EQ(d.name(), "0.8*template_correlation+0.2*neg_mmd_rbf(2)");
  EXPECT_EQ(RewardSpec::parse("default").name(), d.name());
  for (const char* text : {"template_correlation", "neg_mmd_rbf(0.5)", "pixel_range_penalty(3)",
                           "0.5*template_correlation+0.25*pixel_range_penalty(2)+0.25*neg_mmd_rbf(1.5)"})
    EXPECT_EQ(RewardSpec::parse(text).name(), text);
  EXPECT_TRUE(d.needs_reference());
  EXPECT_FALSE(RewardSpec::template_correlation().needs_reference());
  for (const char* bad : {"", "nonsense", "neg_mmd_rbf(-1)", "0.5*", "template_correlation+", "neg_mmd_rbf(2"})
    EXPECT_THROW(RewardSpec::parse(bad), ContractError) << bad;
}

TEST(ScoreImages, MmdGroupedByClass) {
  const ReferenceSet refs = ReferenceSet::generate(4, 6, 0.1, 7);
  Rng rng(8);
  const std::vector<Tensor> imgs{random_image(rng, 0.2), random_image(rng, 0.2), random_image(rng, 0.2)};
  const std::vector<std::size_t> cls{2, 0, 2};
  const auto s = score_images(RewardSpec::neg_mmd_rbf(2.0), imgs, cls, &refs);
  const std::vector<Tensor> group2{imgs[0], imgs[2]};
  EXPECT_NEAR(s[0], -mmd2_oracle(group2, refs.of(2), 2.0), 1e-13);
  EXPECT_EQ(s[0], s[2]);
  EXPECT_NEAR(s[1], -mmd2_oracle({imgs[1]}, refs.of(0), 2.0), 1e-13);
  EXPECT_THROW(score_images(RewardSpec::neg_mmd_rbf(2.0), imgs, cls, nullptr), ContractError);
}

TEST(Buckets, SeedsDistinctAcrossSplitsAndGenerations) {
  const std::vector<std::size_t> classes{0, 1, 2, 3};
  std::set<std::uint64_t> seen;
  std::size_t total = 0;
  const auto add = [&](const Bucket& b) {
    b.validate();
    for (const auto& it : b.items) seen.insert(it.seed), ++total;
  };
  for (long g = 0; g < 20; ++g) add(Bucket::train(11, g, classes));
  add(Bucket::heldout(11, classes));
  add(Bucket::evaluation(11, classes, 64));
  EXPECT_EQ(seen.size(), total);
  EXPECT_EQ(Bucket::train(11, 3, classes).items, Bucket::train(11, 3, classes).items);
  EXPECT_NE(Bucket::train(11, 3, classes).items, Bucket::train(11, 4, classes).items);
  const Bucket ev = Bucket::evaluation(11, classes, 8);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(ev.items[i].class_id, i % 4);
  Bucket dup = ev;
  dup.items[1].seed = dup.items[0].seed;
  EXPECT_THROW(dup.validate(), ContractError);
}

TEST(EvaluateCandidate, DeterministicMeanAndIdentityNeutral) {
  const auto arch = tiny_arch();
  Rng init(9);
  const dit::DitModel m(arch, init);
  const std::vector<std::size_t> classes{0, 1, 2, 3};
  const Bucket bucket = Bucket::heldout(2, classes, 6);
  const ReferenceSet refs = ReferenceSet::generate(4, 4, 0.1, 3);
  const RewardSpec reward = RewardSpec::default_training();
  const auto id = calibration::CalibrationVector::identity(calibration::Granularity::Layer, arch);
  const BucketResult a = evaluate_candidate(id, m, bucket, reward, &refs, 4);
  const BucketResult b = evaluate_candidate(id, m, bucket, reward, &refs, 4);
  EXPECT_TRUE(a.same_scores(b));
  ASSERT_EQ(a.scores.size(), 6u);
  double sum = 0.0;
  for (double s : a.scores) sum += s;
  EXPECT_NEAR(a.mean, sum / 6.0, 1e-15);
  const BucketResult plain =
      evaluate_field(dit::model_field(m, dit::GateScales::identity(arch)), arch.null_class(), bucket, reward, &refs, 4);
  EXPECT_EQ(plain.mean, a.mean);
  EXPECT_EQ(plain.scores, a.scores);
}

TEST(EvaluateCandidate, ZeroWeightCompositeIsZero) {
  const auto arch = tiny_arch();
  Rng init(10);
  const dit::DitModel m(arch, init);
  const std::vector<std::size_t> classes{0, 1};
  const Bucket bucket = Bucket::train(1, 0, classes, 4);
  const RewardSpec zero = RewardSpec::composite(
      {{RewardSpec::template_correlation(), 0.0}, {RewardSpec::pixel_range_penalty(1.0), 0.0}});
  std::vector<double> flat = calibration::CalibrationVector::identity(calibration::Granularity::Block, arch).to_flat();
  flat[1] = 0.3;
  const auto c = calibration::CalibrationVector::from_flat(flat, calibration::Granularity::Block, arch);
  EXPECT_EQ(evaluate_candidate(c, m, bucket, zero, nullptr, 3).mean, 0.0);
}

TEST(EvaluateCandidate, NonFinitePixelNamesItem) {
  const auto arch = tiny_arch();
  const dit::VelocityField bad = [](const Tensor& x, double, std::span<const std::size_t>) {
    return Tensor(x.shape(), NAN);
  };
  const std::vector<std::size_t> classes{0, 1};
  const Bucket bucket = Bucket::train(1, 0, classes, 2);
  try {
    evaluate_field(bad, arch.null_class(), bucket, RewardSpec::template_correlation(), nullptr, 2);
    FAIL() << "expected EvaluationError";
  } catch (const EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("item 0"), std::string::npos) << e.what();
  }
}
