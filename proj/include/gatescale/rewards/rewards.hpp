#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gatescale/calibration/calibration.hpp"
#include "gatescale/calibration/ensemble.hpp"
#include "gatescale/dit/model.hpp"
#include "gatescale/dit/sampler.hpp"
#include "gatescale/numerics/rng.hpp"
#include "gatescale/numerics/tensor.hpp"

namespace gatescale::rewards {

inline constexpr double kDegenerateVariance = 1e-12;
inline constexpr std::size_t kDefaultBucketSize = 16;

/// Pearson correlation with the class template; 0 when either side has
/// variance below kDegenerateVariance. Throws ContractError for a class id
/// outside the shape classes (including the null class).
double template_correlation(const Tensor& image, std::size_t class_id);

/// −MMD² between two image sets, biased V-statistic, RBF kernel
/// exp(−‖a−b‖²/(2h²)) on flattened pixels.
double neg_mmd_rbf(std::span<const Tensor> samples, std::span<const Tensor> reference, double bandwidth);

/// −weight · mean over pixels of the squared distance outside [0, 1].
double pixel_range_penalty(const Tensor& image, double weight);

/// Mean pairwise Euclidean distance over flattened images, divided by
/// √(pixel count).
double diversity_pairwise(std::span<const Tensor> samples);

enum class RewardKind { TemplateCorrelation, NegMmdRbf, PixelRangePenalty, Composite };

struct RewardTerm;

struct RewardSpec {
  RewardKind kind = RewardKind::TemplateCorrelation;
  double bandwidth = 2.0;  // NegMmdRbf
  double weight = 1.0;     // PixelRangePenalty
  std::vector<RewardTerm> terms;  // Composite

  static RewardSpec template_correlation();
  static RewardSpec neg_mmd_rbf(double bandwidth);
  static RewardSpec pixel_range_penalty(double weight);
  static RewardSpec composite(std::vector<RewardTerm> terms);
  /// 0.8 · template correlation + 0.2 · −MMD²(h = 2).
  static RewardSpec default_training();

  /// Throws ContractError on non-finite weights or a non-positive bandwidth.
  void validate() const;
  bool needs_reference() const;
  /// Canonical text form, e.g. "0.8*template_correlation+0.2*neg_mmd_rbf(2)".
  std::string name() const;
  /// Inverse of name(). Throws ContractError on malformed input.
  static RewardSpec parse(std::string_view text);
};

struct RewardTerm {
  RewardSpec spec;
  double weight = 1.0;
};

/// Per-class reference images for the MMD term, indexed by class id.
struct ReferenceSet {
  std::vector<std::vector<Tensor>> per_class;

  static ReferenceSet generate(std::size_t class_count, std::size_t count, double noise_std, std::uint64_t seed);
  const std::vector<Tensor>& of(std::size_t class_id) const;
};

/// Scores a set of generated images. The MMD term is computed per class
/// group against that class's references; every item of a group receives
/// the group's value.
std::vector<double> score_images(const RewardSpec& reward, std::span<const Tensor> images,
                                 std::span<const std::size_t> classes, const ReferenceSet* references);

enum class Split { Train, Heldout, Eval };

std::string_view to_string(Split s);

struct BucketItem {
  std::size_t class_id = 0;
  std::uint64_t seed = 0;

  bool operator==(const BucketItem&) const = default;
};

struct Bucket {
  std::vector<BucketItem> items;
  Split split = Split::Train;

  /// Throws ContractError when empty or when seeds repeat.
  void validate() const;

  /// Train buckets: one per generation, classes uniform over `classes`.
  /// Seeds of different splits never collide (split id in the top bits).
  static Bucket train(std::uint64_t run_seed, long generation, std::span<const std::size_t> classes,
                      std::size_t size = kDefaultBucketSize);
  static Bucket heldout(std::uint64_t run_seed, std::span<const std::size_t> classes,
                        std::size_t size = kDefaultBucketSize);
  /// Fixed evaluation set: class i mod |classes|, one seed per item.
  static Bucket evaluation(std::uint64_t run_seed, std::span<const std::size_t> classes, std::size_t size);
};

struct BucketResult {
  std::vector<double> scores;
  double mean = 0.0;
  std::vector<Tensor> images;

  bool same_scores(const BucketResult& o) const;
};

/// Samples every bucket item with the field, then scores. Throws
/// EvaluationError naming the first item with a non-finite pixel.
BucketResult evaluate_field(const dit::VelocityField& field, std::size_t null_class, const Bucket& bucket,
                            const RewardSpec& reward, const ReferenceSet* references, std::size_t nfe,
                            double guidance_scale = 0.0);

BucketResult evaluate_candidate(const calibration::CalibrationVector& candidate, const dit::DitModel& model,
                                const Bucket& bucket, const RewardSpec& reward, const ReferenceSet* references,
                                std::size_t nfe);
BucketResult evaluate_candidate(const calibration::EnsembleSpec& candidate, const dit::DitModel& model,
                                const Bucket& bucket, const RewardSpec& reward, const ReferenceSet* references,
                                std::size_t nfe);

}  // namespace gatescale::rewards
