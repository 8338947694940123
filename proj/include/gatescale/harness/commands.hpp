#pragma once

#include <cstddef>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "gatescale/harness/config.hpp"
#include "gatescale/harness/persistence.hpp"

namespace gatescale::harness {

/// The calibration dimension exceeds calibrate.max_dimension.
struct DimensionGuardError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommandContext {
  RunConfig config;
  std::string out_dir = ".";
  /// Wall time only; outputs never depend on it.
  std::size_t threads = 1;
  /// Progress messages; null for silence.
  std::ostream* log = nullptr;

  std::string checkpoint_path() const;
  std::string out_path(const std::string& file) const;
};

/// Writes model.ckpt, train_loss.csv, train.manifest.
std::vector<dit::LossPoint> cmd_train(const CommandContext& ctx);

struct AblationRow {
  long block = -1;  // -1: baseline, no ablation
  std::uint64_t seed = 0;
  double reward = 0.0;
};

/// Writes ablate.csv (block,seed,reward) and ablate.manifest.
std::vector<AblationRow> cmd_ablate(const CommandContext& ctx);

struct SweepRow {
  long block = 0;
  double scale = 1.0;
  std::uint64_t seed = 0;
  double reward = 0.0;
};

/// Writes sweep_scale.csv (block,s,seed,reward) and sweep_scale.manifest.
std::vector<SweepRow> cmd_sweep_scale(const CommandContext& ctx);

struct GenerationRecord {
  long generation = 0;
  double sigma = 0.0;  // after the update
  double train_best = 0.0;
  double train_mean = 0.0;
  double train_worst = 0.0;
  double train_best_so_far = 0.0;
  double heldout_reward = 0.0;  // this generation's best train candidate
  double heldout_best_so_far = 0.0;
  double condition_number = 0.0;
};

struct CalibrationRun {
  Sidecar sidecar;
  std::vector<GenerationRecord> log;
  double baseline_heldout = 0.0;
  double selected_heldout = 0.0;
  double mean_heldout = 0.0;
  std::string stop_trigger;
  /// First generation's candidates, for inspection.
  std::vector<std::vector<double>> first_candidates;
};

/// Writes calibration.sidecar, calibrate_log.csv, calibrate_candidates.csv
/// and calibrate.manifest.
CalibrationRun cmd_calibrate(const CommandContext& ctx);

struct EvalRow {
  std::string model;  // "baseline" or "calibrated"
  std::size_t nfe = 0;
  std::uint64_t seed = 0;
  double reward = 0.0;
  double diversity = 0.0;
};

/// Writes eval.csv (model,nfe,seed,reward,diversity) and eval.manifest.
std::vector<EvalRow> cmd_eval(const CommandContext& ctx);

struct SelftestOptions {
  /// Corrupts the CMA-ES covariance before the symmetry check.
  bool inject_asymmetry = false;
};

struct SelftestCheck {
  std::string name;
  bool pass = false;
  /// How far inside (positive) or outside (negative) the tolerance.
  double value = 0.0;
  double tolerance = 0.0;
};

/// Runs every self-check and prints one line each to `out`.
std::vector<SelftestCheck> cmd_selftest(const SelftestOptions& options, std::ostream& out);

/// Mean over classes of the within-class diversity_pairwise of a bucket's
/// images. Classes with fewer than two items are skipped.
double bucket_diversity(const rewards::Bucket& bucket, const std::vector<Tensor>& images);

}  // namespace gatescale::harness
