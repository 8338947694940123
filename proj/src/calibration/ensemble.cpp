#include "gatescale/calibration/ensemble.hpp"

#include <string>

#include "gatescale/numerics/errors.hpp"

namespace gatescale::calibration {

std::string_view to_string(ConditionRole r) {
  switch (r) {
    case ConditionRole::Conditional: return "conditional";
    case ConditionRole::Unconditional: return "unconditional";
    case ConditionRole::SamePrompt: return "same_prompt";
  }
  return "?";
}

ConditionRole parse_role(std::string_view s) {
  if (s == "conditional") return ConditionRole::Conditional;
  if (s == "unconditional") return ConditionRole::Unconditional;
  if (s == "same_prompt") return ConditionRole::SamePrompt;
  throw ContractError("unknown condition role '" + std::string(s) + "'");
}

void EnsembleSpec::validate() const {
  if (members.empty()) throw ContractError("ensemble must have at least one member");
  for (const EnsembleMember& m : members) {
    if (m.calibration.arch_hash() != members.front().calibration.arch_hash())
      throw CalibrationShapeError("ensemble members bind different architectures");
    if (m.calibration.granularity() != members.front().calibration.granularity())
      throw CalibrationShapeError("ensemble members use different granularities");
  }
}

std::vector<double> EnsembleSpec::to_flat() const {
  std::vector<double> v;
  for (const EnsembleMember& m : members) {
    const auto f = m.calibration.to_flat();
    v.insert(v.end(), f.begin(), f.end());
  }
  return v;
}

EnsembleSpec EnsembleSpec::from_flat(std::span<const double> v, Granularity g, const dit::ArchSpec& arch,
                                     std::span<const ConditionRole> roles) {
  const std::size_t dim = dimension(g, arch);
  if (roles.empty() || v.size() != dim * roles.size())
    throw CalibrationShapeError("ensemble vector has " + std::to_string(v.size()) + " entries, expected " +
                                std::to_string(dim * roles.size()));
  EnsembleSpec spec;
  for (std::size_t i = 0; i < roles.size(); ++i)
    spec.members.push_back({CalibrationVector::from_flat(v.subspan(i * dim, dim), g, arch), roles[i]});
  return spec;
}

EnsembleSpec EnsembleSpec::identity(Granularity g, const dit::ArchSpec& arch, std::span<const ConditionRole> roles) {
  EnsembleSpec spec;
  for (ConditionRole r : roles) spec.members.push_back({CalibrationVector::identity(g, arch), r});
  return spec;
}

namespace {

std::vector<std::size_t> member_classes(ConditionRole role, std::span<const std::size_t> classes, std::size_t null) {
  if (role == ConditionRole::Unconditional) return std::vector<std::size_t>(classes.size(), null);
  return {classes.begin(), classes.end()};
}

}  // namespace

Tensor ensemble_velocity(const EnsembleSpec& spec, const dit::DitModel& model, const Tensor& x_tokens,
                         std::span<const double> t, std::span<const std::size_t> classes) {
  spec.validate();
  Tensor total(x_tokens.shape(), 0.0);
  for (const EnsembleMember& m : spec.members) {
    const auto cls = member_classes(m.role, classes, model.arch().null_class());
    const Tensor v = calibrated_forward(model, x_tokens, t, cls, m.calibration);
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += v[i];
  }
  return total;
}

dit::VelocityField ensemble_field(const dit::DitModel& model, EnsembleSpec spec) {
  spec.validate();
  return [&model, spec = std::move(spec)](const Tensor& x, double t, std::span<const std::size_t> classes) {
    const std::vector<double> times(classes.size(), t);
    return ensemble_velocity(spec, model, x, times, classes);
  };
}

EnsembleSpec cfg_ensemble(const dit::ArchSpec& arch, double g) {
  EnsembleSpec spec;
  std::vector<double> cond = CalibrationVector::identity(Granularity::Block, arch).to_flat();
  std::vector<double> uncond = cond;
  cond[0] = 1.0 + g;
  uncond[0] = -g;
  spec.members.push_back({CalibrationVector::from_flat(cond, Granularity::Block, arch), ConditionRole::Conditional});
  spec.members.push_back(
      {CalibrationVector::from_flat(uncond, Granularity::Block, arch), ConditionRole::Unconditional});
  return spec;
}

}  // namespace gatescale::calibration
