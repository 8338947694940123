#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gatescale/calibration/calibration.hpp"
#include "gatescale/calibration/ensemble.hpp"
#include "gatescale/dit/arch.hpp"
#include "gatescale/dit/trainer.hpp"
#include "gatescale/rewards/rewards.hpp"

namespace gatescale::harness {

/// Malformed or unknown configuration. line/column are 1-based; 0 when the
/// error is not tied to a position.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& what, std::size_t line = 0, std::size_t column = 0);
  std::size_t line = 0;
  std::size_t column = 0;
};

/// Every tunable of every command. Text form is one `key = value` per line;
/// `#` starts a comment. Lists are comma separated.
struct RunConfig {
  std::uint64_t seed = 0;
  /// Empty means <out>/model.ckpt.
  std::string checkpoint;

  dit::ArchSpec arch;
  dit::TrainConfig train;

  std::string reward = "default";
  std::size_t reference_count = 64;

  std::size_t eval_conditions = 64;
  std::vector<std::uint64_t> eval_seeds{0, 1, 2, 3, 4};
  std::size_t eval_nfe = 8;
  std::vector<std::size_t> eval_nfe_list{2, 4, 8, 16, 32, 64};
  /// Empty: cmd_eval reports the baseline only.
  std::string eval_calibration;

  std::vector<double> sweep_scales{0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5};

  calibration::Granularity granularity = calibration::Granularity::Layer;
  std::size_t nfe_train = 8;
  std::size_t models = 1;
  /// Role of the second member when models == 2.
  calibration::ConditionRole second_role = calibration::ConditionRole::SamePrompt;
  double sigma0 = 0.25;
  std::size_t population = 0;  // 0: 4 + ⌊3 ln d⌋
  std::size_t bucket_size = rewards::kDefaultBucketSize;
  std::size_t heldout_size = rewards::kDefaultBucketSize;
  long min_generations = 150;
  long max_generations = 1000;
  double sigma_stop = 0.01;
  double plateau_epsilon = 1e-3;
  std::size_t plateau_window = 50;
  std::size_t max_dimension = 512;

  /// Parses a config text; keys not mentioned keep their defaults.
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::string& path);
  /// Full key = value listing of every field. parse(manifest()) == *this.
  std::string manifest() const;
  /// Applies a single key = value assignment.
  void set(std::string_view key, std::string_view value);

  rewards::RewardSpec reward_spec() const { return rewards::RewardSpec::parse(reward); }
  std::vector<std::size_t> classes() const;

  bool operator==(const RunConfig& o) const { return manifest() == o.manifest(); }
};

/// Shortest round-trip text for a double.
std::string format_double(double v);
/// 17 significant digits, the CSV float format.
std::string format_csv_double(double v);

}  // namespace gatescale::harness
