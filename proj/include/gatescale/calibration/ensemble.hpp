#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "gatescale/calibration/calibration.hpp"

namespace gatescale::calibration {

/// Which condition a member sees: the request's class (conditional or
/// same_prompt) or the null class (unconditional).
enum class ConditionRole { Conditional, Unconditional, SamePrompt };

std::string_view to_string(ConditionRole r);
ConditionRole parse_role(std::string_view s);

struct EnsembleMember {
  CalibrationVector calibration;
  ConditionRole role = ConditionRole::Conditional;
};

/// F(x, t, p) = Σᵢ ωᵢ f^{sᵢ}_θ(x, t, pᵢ).
struct EnsembleSpec {
  std::vector<EnsembleMember> members;

  std::size_t size() const noexcept { return members.size(); }
  /// Throws ContractError when empty, CalibrationShapeError when members bind
  /// different architectures or granularities.
  void validate() const;

  /// Concatenated member flat vectors.
  std::vector<double> to_flat() const;
  static EnsembleSpec from_flat(std::span<const double> v, Granularity g, const dit::ArchSpec& arch,
                                std::span<const ConditionRole> roles);
  static EnsembleSpec identity(Granularity g, const dit::ArchSpec& arch, std::span<const ConditionRole> roles);
};

Tensor ensemble_velocity(const EnsembleSpec& spec, const dit::DitModel& model, const Tensor& x_tokens,
                         std::span<const double> t, std::span<const std::size_t> classes);

dit::VelocityField ensemble_field(const dit::DitModel& model, EnsembleSpec spec);

/// The two-member ensemble equal to classifier-free guidance with scale g:
/// (conditional, ω = 1+g) and (unconditional, ω = −g), identity scales.
EnsembleSpec cfg_ensemble(const dit::ArchSpec& arch, double g);

}  // namespace gatescale::calibration
