#include <gtest/gtest.h>

#include <cmath>

#include "gatescale/cmaes/cmaes.hpp"
#include "gatescale/numerics/errors.hpp"

using namespace gatescale;
using namespace gatescale::cmaes;

namespace {

double sphere(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

double rosenbrock(std::span<const double> x) {
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    const double a = x[i + 1] - x[i] * x[i], b = 1.0 - x[i];
    s += 100.0 * a * a + b * b;
  }
  return s;
}

// Evaluations until some candidate's loss drops below `target`, or -1.
template <class F>
long minimise(std::size_t d, std::uint64_t seed, F loss, double target, long budget, double start = 0.0) {
  CmaState s(d, Tensor({d}, start), 0.5, Rng(seed, 9));
  while (static_cast<long>(s.evaluations()) < budget) {
    const auto& cands = s.ask();
    std::vector<double> r;
    bool hit = false;
    for (const Tensor& c : cands) {
      r.push_back(-loss(c.data()));
      hit = hit || -r.back() < target;
    }
    s.tell(r);
    if (hit) return static_cast<long>(s.evaluations());
  }
  return -1;
}

}  // namespace

TEST(CmaConstants, PopulationTable) {
  const std::pair<std::size_t, std::size_t> table[] = {{1, 4}, {57, 16}, {76, 16}, {114, 18}, {216, 20}, {482, 22}};
  for (auto [d, lambda] : table) EXPECT_EQ(recommended_population_size(d), lambda) << "d=" << d;
  EXPECT_THROW(recommended_population_size(0), ContractError);
}

TEST(CmaConstants, WeightsForLambdaFour) {
  // ln(2.5) and ln(2.5/2), normalised.
  const auto k = CmaConstants::standard(1, 4);
  ASSERT_EQ(k.weights.size(), 2u);
  EXPECT_NEAR(k.weights[0], 0.80416, 5e-6);
  EXPECT_NEAR(k.weights[1], 0.19584, 5e-6);
}

TEST(CmaConstants, MatchTutorialFormulas) {
  for (auto [n, lambda] : {std::pair<std::size_t, std::size_t>{10, 10}, {25, 13}, {57, 16}}) {
    const auto k = CmaConstants::standard(n, lambda);
    const std::size_t mu = lambda / 2;
    ASSERT_EQ(k.mu, mu);
    std::vector<double> w(mu);
    double sum = 0.0;
    for (std::size_t i = 0; i < mu; ++i) sum += w[i] = std::log((lambda + 1.0) / 2.0) - std::log(i + 1.0);
    double sq = 0.0;
    for (std::size_t i = 0; i < mu; ++i) {
      EXPECT_NEAR(k.weights[i], w[i] / sum, 1e-15);
      sq += (w[i] / sum) * (w[i] / sum);
      if (i) EXPECT_LT(k.weights[i], k.weights[i - 1]);
    }
    const double me = 1.0 / sq, N = static_cast<double>(n);
    EXPECT_NEAR(k.mu_eff, me, 1e-12);
    const double cs = (me + 2) / (N + me + 5);
    EXPECT_NEAR(k.c_sigma, cs, 1e-15);
    EXPECT_NEAR(k.d_sigma, 1 + 2 * std::fmax(0, std::sqrt((me - 1) / (N + 1)) - 1) + cs, 1e-15);
    EXPECT_NEAR(k.c_c, (4 + me / N) / (N + 4 + 2 * me / N), 1e-15);
    const double c1 = 2 / (std::pow(N + 1.3, 2) + me);
    EXPECT_NEAR(k.c_1, c1, 1e-15);
    EXPECT_NEAR(k.c_mu, std::fmin(1 - c1, 2 * (me - 2 + 1 / me) / (std::pow(N + 2, 2) + me)), 1e-15);
    EXPECT_NEAR(k.chi_n, std::sqrt(N) * (1 - 1 / (4 * N) + 1 / (21 * N * N)), 1e-14);
  }
  // Tabulated in the CMA-ES tutorial for n = 10 with default λ = 10.
  EXPECT_NEAR(CmaConstants::standard(10, 10).mu_eff, 3.1672, 1e-4);
}

TEST(CmaState, ProtocolAndInputErrors) {
  EXPECT_THROW(CmaState(0, Tensor{}, 0.5, Rng(1)), ContractError);
  EXPECT_THROW(CmaState(3, Tensor({3}), 0.0, Rng(1)), ContractError);
  EXPECT_THROW(CmaState(3, Tensor({2}), 0.5, Rng(1)), ContractError);
  CmaState s(3, Tensor({3}), 0.5, Rng(1));
  const std::vector<double> r(s.population(), 1.0);
  EXPECT_THROW(s.tell(r), ProtocolError);
  s.ask();
  EXPECT_TRUE(s.awaiting_tell());
  EXPECT_THROW(s.ask(), ProtocolError);
  EXPECT_THROW(s.tell(std::span(r).first(r.size() - 1)), ProtocolError);
  std::vector<double> bad = r;
  bad[2] = NAN;
  EXPECT_THROW(s.tell(bad), EvaluationError);
  s.tell(r);
  EXPECT_EQ(s.generation(), 1);
  EXPECT_EQ(s.evaluations(), s.population());
}

TEST(CmaState, SphereConvergesForEverySeed) {
  for (std::size_t d : {5u, 20u})
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const long e = minimise(d, seed, sphere, 1e-9, d == 5 ? 3000 : 6000, 1.0);
      EXPECT_GT(e, 0) << "d=" << d << " seed=" << seed;
    }
}

TEST(CmaState, RosenbrockUsuallySolved) {
  int solved = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) solved += minimise(8, seed, rosenbrock, 1e-6, 30000) > 0;
  EXPECT_GE(solved, 4);
}

TEST(CmaState, InvariantToMonotoneRewardTransforms) {
  CmaState a(6, Tensor({6}, 0.7), 0.4, Rng(4)), b(6, Tensor({6}, 0.7), 0.4, Rng(4));
  for (int g = 0; g < 30; ++g) {
    const auto ca = a.ask();
    const auto cb = b.ask();
    std::vector<double> ra, rb;
    for (std::size_t k = 0; k < ca.size(); ++k) {
      ASSERT_EQ(ca[k], cb[k]);
      const double f = -sphere(ca[k].data());
      ra.push_back(f);
      rb.push_back(std::exp(3.0 * f) - 7.0);
    }
    a.tell(ra);
    b.tell(rb);
    ASSERT_TRUE(a.same_distribution(b)) << "generation " << g;
  }
}

TEST(CmaState, SameSeedSameTrajectory) {
  const auto run = [](std::uint64_t seed) {
    CmaState s(4, Tensor({4}, 1.0), 0.3, Rng(seed));
    for (int g = 0; g < 15; ++g) {
      std::vector<double> r;
      for (const Tensor& c : s.ask()) r.push_back(-rosenbrock(c.data()));
      s.tell(r);
    }
    return s;
  };
  EXPECT_TRUE(run(7).same_distribution(run(7)));
  EXPECT_FALSE(run(7).same_distribution(run(8)));
}

TEST(CmaState, CovarianceStaysSymmetricPositiveDefinite) {
  CmaState s(10, Tensor({10}, 2.0), 0.5, Rng(5));
  for (int g = 0; g < 60; ++g) {
    std::vector<double> r;
    for (const Tensor& c : s.ask()) r.push_back(-rosenbrock(c.data()));
    s.tell(r);
  }
  const Tensor& c = s.covariance();
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < i; ++j) EXPECT_EQ(c.at(i, j), c.at(j, i));
  for (double ev : s.eigen().values.values()) EXPECT_GT(ev, 0.0);
  EXPECT_GE(s.condition_number(), 1.0);
}

TEST(StopCriteria, EachTrigger) {
  CmaState s(2, Tensor({2}), 0.5, Rng(1));
  const std::vector<double> rising{0.0, 0.1, 0.2, 0.3};
  EXPECT_FALSE(should_stop(s, rising, {0.01, 1e-3, 3, 1000}).stop);
  EXPECT_EQ(should_stop(s, rising, {0.6, 1e-3, 3, 1000}).trigger, "sigma");
  const std::vector<double> flat{0.3, 0.3, 0.3, 0.3};
  EXPECT_EQ(should_stop(s, flat, {0.01, 1e-3, 3, 1000}).trigger, "plateau");
  // The window needs one more entry than its length.
  EXPECT_FALSE(should_stop(s, std::span(flat).first(3), {0.01, 1e-3, 3, 1000}).stop);
  s.tell(std::vector<double>((s.ask(), s.population()), 0.0));
  EXPECT_EQ(should_stop(s, rising, {0.01, 1e-3, 3, 1}).trigger, "max_generations");
}
