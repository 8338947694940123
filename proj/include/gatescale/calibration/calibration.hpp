#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "gatescale/dit/arch.hpp"
#include "gatescale/dit/model.hpp"
#include "gatescale/dit/sampler.hpp"

namespace gatescale::calibration {

/// Block: one scale shared by every gate of a block.
/// Layer: one scale for the attention layer and one for the FF layer.
/// Gate:  one per modality gate (MmDit: 4 per block; StandardDit: same as Layer).
enum class Granularity { Block, Layer, Gate };

std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view s);

/// Scales per block at this granularity.
std::size_t scales_per_block(Granularity g, const dit::ArchSpec& arch);

/// Length of the optimised vector, ω included: Block L+1, Layer 2L+1,
/// Gate 4L+1 (MmDit) or 2L+1 (StandardDit).
std::size_t dimension(Granularity g, const dit::ArchSpec& arch);

/// c = ω ∪ {sᵢ}, bound to one architecture.
///
/// Flat layout: v[0] = ω, then scales block-major; within a block attention
/// before FF and visual before text.
class CalibrationVector {
 public:
  static CalibrationVector identity(Granularity g, const dit::ArchSpec& arch);
  /// Throws CalibrationShapeError when v.size() != dimension(g, arch).
  static CalibrationVector from_flat(std::span<const double> v, Granularity g, const dit::ArchSpec& arch);

  std::vector<double> to_flat() const;

  Granularity granularity() const noexcept { return granularity_; }
  double omega() const noexcept { return omega_; }
  std::span<const double> scales() const noexcept { return scales_; }
  std::uint64_t arch_hash() const noexcept { return arch_hash_; }
  std::size_t dimension() const noexcept { return scales_.size() + 1; }

  /// Per-gate multipliers; Block and Layer entries are broadcast to the gates
  /// they cover. Throws CalibrationShapeError if `arch` is not the bound one.
  dit::GateScales expand(const dit::ArchSpec& arch) const;

  /// Same outputs at a finer granularity (duplicates each coarse scale).
  CalibrationVector refined(Granularity finer, const dit::ArchSpec& arch) const;

  friend bool operator==(const CalibrationVector&, const CalibrationVector&) = default;

 private:
  CalibrationVector(Granularity g, double omega, std::vector<double> scales, std::uint64_t hash)
      : granularity_(g), omega_(omega), scales_(std::move(scales)), arch_hash_(hash) {}

  Granularity granularity_;
  double omega_;
  std::vector<double> scales_;
  std::uint64_t arch_hash_;
};

/// ω · f^s_θ(x, t, p) for a batch (shapes as dit::model_forward).
Tensor calibrated_forward(const dit::DitModel& model, const Tensor& x_tokens, std::span<const double> t,
                          std::span<const std::size_t> classes, const CalibrationVector& c);

/// Velocity field of the calibrated model for the Euler sampler.
dit::VelocityField calibrated_field(const dit::DitModel& model, const CalibrationVector& c);

/// Euler sampling of the calibrated model (CFG per req.guidance_scale).
Tensor euler_sample(const dit::DitModel& model, const dit::SampleRequest& req, const CalibrationVector& c);

}  // namespace gatescale::calibration
