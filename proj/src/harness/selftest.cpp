#include <cmath>
#include <cstdio>
#include <ostream>

#include "gatescale/calibration/ensemble.hpp"
#include "gatescale/cmaes/cmaes.hpp"
#include "gatescale/dit/sampler.hpp"
#include "gatescale/harness/commands.hpp"
#include "gatescale/numerics/errors.hpp"
#include "gatescale/numerics/gradcheck.hpp"
#include "gatescale/numerics/linalg.hpp"

namespace gatescale::harness {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

// Small enough for a full finite-difference sweep in well under a second.
dit::ArchSpec tiny_arch(dit::Variant v) {
  dit::ArchSpec a;
  a.variant = v;
  a.depth = 2;
  a.model_dim = 8;
  a.heads = 2;
  a.text_tokens = 2;
  a.ff_mult = 2;
  return a;
}

struct Probe {
  Tensor x;
  std::vector<double> t;
  std::vector<std::size_t> classes;
};

Probe probe(const dit::ArchSpec& arch, Rng& rng) {
  Probe p{random_tensor({2 * dit::kImageTokens, dit::kPatchDim}, rng), {0.3, 0.8}, {1, arch.null_class()}};
  return p;
}

double model_gradcheck(dit::Variant variant) {
  Rng rng(11, static_cast<std::uint64_t>(variant));
  const dit::ArchSpec arch = tiny_arch(variant);
  dit::DitModel model(arch, rng);
  // Random modulation biases so no gate starts at a degenerate point.
  for (auto& [name, w] : model.mutable_weights())
    for (double& v : w.data()) v += 0.1 * rng.normal();
  const Probe p = probe(arch, rng);
  const Tensor target = random_tensor(p.x.shape(), rng);
  std::vector<std::string> names;
  std::vector<Tensor> params;
  for (const auto& [name, w] : model.weights()) {
    names.push_back(name);
    params.push_back(w);
  }
  const auto scales = dit::GateScales::identity(arch);
  const auto result = gradcheck(
      [&](Graph& g, const std::vector<Var>& vars) {
        std::map<std::string, Var> bound;
        for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], vars[i]);
        const dit::BoundWeights w(std::move(bound));
        const Var out = dit::model_forward(g, w, arch, g.constant(p.x), p.t, p.classes, scales);
        return g.mse(out, g.constant(target));
      },
      params);
  return result.max_rel_error;
}

double eig_reconstruction_error(std::size_t n) {
  Rng rng(5, n);
  Tensor a = random_tensor({n, n}, rng);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) a.at(i, j) = a.at(j, i);
  const auto eig = eig_sym(a);
  double err = max_abs_diff(eig_reconstruct(eig), a);
  const Tensor vtv = matmul_tn(eig.vectors, eig.vectors);
  err = std::max(err, max_abs_diff(vtv, Tensor::identity(n)));
  return err;
}

// Evaluations to reach the target, or -1.
long cma_benchmark(std::size_t d, std::uint64_t seed, double target, long budget,
                   double (*f)(std::span<const double>)) {
  cmaes::CmaState s(d, Tensor({d}, 0.0), 0.5, Rng(seed, 1));
  while (static_cast<long>(s.evaluations()) < budget) {
    const auto& cands = s.ask();
    std::vector<double> r;
    for (const Tensor& c : cands) r.push_back(-f(c.data()));
    s.tell(r);
    for (double v : r)
      if (v > target) return static_cast<long>(s.evaluations());
  }
  return -1;
}

double sphere(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

double rosenbrock(std::span<const double> x) {
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i)
    s += 100.0 * std::pow(x[i + 1] - x[i] * x[i], 2) + std::pow(1.0 - x[i], 2);
  return s;
}

double covariance_asymmetry(bool inject) {
  cmaes::CmaState s(6, Tensor({6}, 1.0), 0.3, Rng(3, 3));
  for (int g = 0; g < 20; ++g) {
    const auto& cands = s.ask();
    std::vector<double> r;
    for (const Tensor& c : cands) r.push_back(-sphere(c.data()));
    s.tell(r);
  }
  if (inject) {
    Tensor c = s.covariance();
    c.at(0, 1) += 1e-3;
    s.debug_set_covariance(std::move(c));
  }
  const Tensor& c = s.covariance();
  double worst = 0.0;
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j) worst = std::max(worst, std::abs(c.at(i, j) - c.at(j, i)));
  return worst;
}

double identity_calibration_diff(dit::Variant v) {
  Rng rng(21, static_cast<std::uint64_t>(v));
  const dit::ArchSpec arch = tiny_arch(v);
  const dit::DitModel model(arch, rng);
  const Probe p = probe(arch, rng);
  double worst = 0.0;
  const Tensor plain = dit::model_forward(model, p.x, p.t, p.classes, dit::GateScales::identity(arch));
  for (auto g : {calibration::Granularity::Block, calibration::Granularity::Layer, calibration::Granularity::Gate}) {
    const Tensor cal =
        calibration::calibrated_forward(model, p.x, p.t, p.classes, calibration::CalibrationVector::identity(g, arch));
    worst = std::max(worst, max_abs_diff(cal, plain));
  }
  return worst;
}

double cfg_algebra_diff() {
  Rng rng(31);
  const dit::ArchSpec arch = tiny_arch(dit::Variant::StandardDit);
  const dit::DitModel model(arch, rng);
  const Probe p = probe(arch, rng);
  const std::vector<std::size_t> cond{1, 2};
  const std::vector<std::size_t> uncond(2, arch.null_class());
  const auto id = dit::GateScales::identity(arch);
  const Tensor vc = dit::model_forward(model, p.x, p.t, cond, id);
  const Tensor vu = dit::model_forward(model, p.x, p.t, uncond, id);
  double worst = 0.0;
  for (double g : {0.0, 1.0, 3.5, 7.0}) {
    const Tensor ens = calibration::ensemble_velocity(calibration::cfg_ensemble(arch, g), model, p.x, p.t, cond);
    const Tensor want = add(vu, scaled(sub(vc, vu), g + 1.0));
    worst = std::max(worst, max_abs_diff(ens, want));
  }
  return worst;
}

double ablation_diff(dit::Variant v) {
  Rng rng(41, static_cast<std::uint64_t>(v));
  const dit::ArchSpec arch = tiny_arch(v);
  const dit::DitModel model(arch, rng);
  const Probe p = probe(arch, rng);
  double worst = 0.0;
  for (std::size_t b = 0; b < arch.depth; ++b) {
    auto scales = dit::GateScales::identity(arch);
    scales.set_block(b, 0.0);
    const Tensor zeroed = dit::model_forward(model, p.x, p.t, p.classes, scales);
    Graph g;
    const dit::BoundWeights w(g, model, false);
    const Tensor removed = g.value(dit::model_forward(g, w, arch, g.constant(p.x), p.t, p.classes,
                                                      dit::GateScales::identity(arch), b));
    worst = std::max(worst, max_abs_diff(zeroed, removed));
  }
  return worst;
}

}  // namespace

std::vector<SelftestCheck> cmd_selftest(const SelftestOptions& options, std::ostream& out) {
  std::vector<SelftestCheck> checks;
  // `value` must be at most `tol`.
  const auto upper = [&](std::string name, double value, double tol) {
    checks.push_back({std::move(name), value <= tol, value, tol});
  };
  const auto guarded = [&](const std::string& name, double tol, auto fn) {
    try {
      upper(name, fn(), tol);
    } catch (const std::exception& e) {
      checks.push_back({name + " (" + e.what() + ")", false, NAN, tol});
    }
  };

  guarded("gradcheck_standard_dit", 1e-4, [] { return model_gradcheck(dit::Variant::StandardDit); });
  guarded("gradcheck_mmdit", 1e-4, [] { return model_gradcheck(dit::Variant::MmDit); });
  guarded("eig_sym_reconstruction_d8", 1e-10, [] { return eig_reconstruction_error(8); });
  guarded("eig_sym_reconstruction_d40", 1e-10, [] { return eig_reconstruction_error(40); });
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    guarded("cmaes_sphere_d20_seed" + std::to_string(seed) + "_evals", 6000.0, [seed] {
      const long e = cma_benchmark(20, seed, -1e-9, 6000, sphere);
      return e < 0 ? INFINITY : static_cast<double>(e);
    });
  }
  guarded("cmaes_rosenbrock_d8_evals", 30000.0, [] {
    const long e = cma_benchmark(8, 1, -1e-6, 30000, rosenbrock);
    return e < 0 ? INFINITY : static_cast<double>(e);
  });
  guarded("cmaes_covariance_symmetry", kSymmetryTolerance,
          [&] { return covariance_asymmetry(options.inject_asymmetry); });
  guarded("identity_calibration_standard", 0.0, [] { return identity_calibration_diff(dit::Variant::StandardDit); });
  guarded("identity_calibration_mmdit", 0.0, [] { return identity_calibration_diff(dit::Variant::MmDit); });
  guarded("cfg_ensemble_algebra", 1e-12, cfg_algebra_diff);
  guarded("ablation_equals_block_removal_standard", 1e-12, [] { return ablation_diff(dit::Variant::StandardDit); });
  guarded("ablation_equals_block_removal_mmdit", 1e-12, [] { return ablation_diff(dit::Variant::MmDit); });

  for (const auto& c : checks) {
    char line[256];
    std::snprintf(line, sizeof line, "%s %-44s value=%.3e tol=%.3e margin=%.3e", c.pass ? "PASS" : "FAIL",
                  c.name.c_str(), c.value, c.tolerance, c.tolerance - c.value);
    out << line << '\n';
  }
  return checks;
}

}  // namespace gatescale::harness
