// gatescale: train the toy DiT, probe its gates, calibrate them with CMA-ES.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gatescale/harness/commands.hpp"
#include "gatescale/numerics/errors.hpp"

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kConfig = 2, kDivergence = 3, kDimension = 4 };

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = ".";
  std::size_t threads = 1;
  bool quiet = false;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "key = value config file")->check(CLI::ExistingFile);
  sub->add_option_function<std::uint64_t>(
      "--seed", [&f](std::uint64_t s) { f.seed = s, f.seed_set = true; }, "overrides the config seed");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--threads", f.threads, "worker threads (wall time only)")->check(CLI::PositiveNumber);
  sub->add_flag("--quiet", f.quiet, "no progress output");
}

gatescale::harness::CommandContext context(const Flags& f) {
  gatescale::harness::CommandContext ctx;
  if (!f.config.empty()) ctx.config = gatescale::harness::RunConfig::load(f.config);
  if (f.seed_set) ctx.config.seed = f.seed;
  ctx.out_dir = f.out;
  ctx.threads = f.threads;
  ctx.log = f.quiet ? nullptr : &std::cerr;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gate-scale calibration laboratory for a toy flow-matching DiT"};
  app.require_subcommand(1);
  Flags flags;
  bool inject_asymmetry = false;

  auto* train = app.add_subcommand("train", "train the toy model; writes model.ckpt and train_loss.csv");
  auto* ablate = app.add_subcommand("ablate", "zero each block's gates in turn; writes ablate.csv");
  auto* sweep = app.add_subcommand("sweep-scale", "scale each block's gates; writes sweep_scale.csv");
  auto* calibrate = app.add_subcommand("calibrate", "CMA-ES gate calibration; writes calibration.sidecar");
  auto* eval = app.add_subcommand("eval", "reward and diversity per nfe; writes eval.csv");
  auto* selftest = app.add_subcommand("selftest", "numerical self-checks");
  for (auto* sub : {train, ablate, sweep, calibrate, eval}) add_common(sub, flags);
  selftest->add_flag("--debug-inject-asymmetry", inject_asymmetry, "corrupt the covariance symmetry (negative test)");

  CLI11_PARSE(app, argc, argv);

  using namespace gatescale;
  using namespace gatescale::harness;
  try {
    if (selftest->parsed()) {
      const auto checks = cmd_selftest({inject_asymmetry}, std::cout);
      for (const auto& c : checks)
        if (!c.pass) return kFailure;
      return kOk;
    }
    const CommandContext ctx = context(flags);
    if (train->parsed()) cmd_train(ctx);
    if (ablate->parsed()) cmd_ablate(ctx);
    if (sweep->parsed()) cmd_sweep_scale(ctx);
    if (calibrate->parsed()) cmd_calibrate(ctx);
    if (eval->parsed()) cmd_eval(ctx);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << (flags.config.empty() ? "" : flags.config + ": ") << e.what() << '\n';
    return kConfig;
  } catch (const PersistenceError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kConfig;
  } catch (const CalibrationShapeError& e) {
    std::cerr << "calibration error: " << e.what() << '\n';
    return kConfig;
  } catch (const TrainingError& e) {
    std::cerr << "training diverged at step " << e.step() << ": " << e.what() << '\n';
    return kDivergence;
  } catch (const DimensionGuardError& e) {
    std::cerr << "dimension guard: " << e.what() << '\n';
    return kDimension;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
