#include "gatescale/calibration/calibration.hpp"

#include <string>

#include "gatescale/numerics/errors.hpp"

namespace gatescale::calibration {

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::Block: return "block";
    case Granularity::Layer: return "layer";
    case Granularity::Gate: return "gate";
  }
  return "?";
}

Granularity parse_granularity(std::string_view s) {
  if (s == "block") return Granularity::Block;
  if (s == "layer") return Granularity::Layer;
  if (s == "gate") return Granularity::Gate;
  throw ContractError("unknown granularity '" + std::string(s) + "' (expected block|layer|gate)");
}

std::size_t scales_per_block(Granularity g, const dit::ArchSpec& arch) {
  switch (g) {
    case Granularity::Block: return 1;
    case Granularity::Layer: return 2;
    case Granularity::Gate: return arch.gates_per_block();
  }
  return 0;
}

std::size_t dimension(Granularity g, const dit::ArchSpec& arch) { return arch.depth * scales_per_block(g, arch) + 1; }

CalibrationVector CalibrationVector::identity(Granularity g, const dit::ArchSpec& arch) {
  return CalibrationVector(g, 1.0, std::vector<double>(gatescale::calibration::dimension(g, arch) - 1, 1.0), arch.hash());
}

CalibrationVector CalibrationVector::from_flat(std::span<const double> v, Granularity g, const dit::ArchSpec& arch) {
  const std::size_t want = gatescale::calibration::dimension(g, arch);
  if (v.size() != want)
    throw CalibrationShapeError("calibration vector has " + std::to_string(v.size()) + " entries, " +
                                std::string(to_string(g)) + " granularity needs " + std::to_string(want));
  return CalibrationVector(g, v[0], std::vector<double>(v.begin() + 1, v.end()), arch.hash());
}

std::vector<double> CalibrationVector::to_flat() const {
  std::vector<double> v;
  v.reserve(scales_.size() + 1);
  v.push_back(omega_);
  v.insert(v.end(), scales_.begin(), scales_.end());
  return v;
}

dit::GateScales CalibrationVector::expand(const dit::ArchSpec& arch) const {
  if (arch.hash() != arch_hash_) throw CalibrationShapeError("calibration is bound to a different architecture");
  const std::size_t per = scales_per_block(granularity_, arch);
  if (scales_.size() != arch.depth * per) throw CalibrationShapeError("calibration scale count does not match depth");
  dit::GateScales out = dit::GateScales::identity(arch);
  const bool mm = arch.variant == dit::Variant::MmDit;
  for (std::size_t b = 0; b < arch.depth; ++b) {
    const double* s = scales_.data() + b * per;
    switch (granularity_) {
      case Granularity::Block: out.set_block(b, s[0]); break;
      case Granularity::Layer:
        if (mm) {
          out.at(b, 0) = out.at(b, 1) = s[0];
          out.at(b, 2) = out.at(b, 3) = s[1];
        } else {
          out.at(b, 0) = s[0];
          out.at(b, 1) = s[1];
        }
        break;
      case Granularity::Gate:
        for (std::size_t k = 0; k < per; ++k) out.at(b, k) = s[k];
        break;
    }
  }
  return out;
}

CalibrationVector CalibrationVector::refined(Granularity finer, const dit::ArchSpec& arch) const {
  if (static_cast<int>(finer) < static_cast<int>(granularity_))
    throw ContractError("refined: target granularity is coarser than the source");
  const dit::GateScales gates = expand(arch);
  const std::size_t per = scales_per_block(finer, arch);
  std::vector<double> flat{omega_};
  for (std::size_t b = 0; b < arch.depth; ++b) {
    if (per == 1) {
      flat.push_back(gates.at(b, 0));
    } else if (per == 2) {
      flat.push_back(gates.at(b, 0));
      flat.push_back(gates.at(b, arch.gates_per_block() == 4 ? 2 : 1));
    } else {
      for (std::size_t k = 0; k < per; ++k) flat.push_back(gates.at(b, k));
    }
  }
  return from_flat(flat, finer, arch);
}

Tensor calibrated_forward(const dit::DitModel& model, const Tensor& x_tokens, std::span<const double> t,
                          std::span<const std::size_t> classes, const CalibrationVector& c) {
  Tensor v = dit::model_forward(model, x_tokens, t, classes, c.expand(model.arch()));
  const double omega = c.omega();
  for (double& e : v.data()) e *= omega;
  return v;
}

dit::VelocityField calibrated_field(const dit::DitModel& model, const CalibrationVector& c) {
  const dit::GateScales gates = c.expand(model.arch());
  return [&model, gates, omega = c.omega()](const Tensor& x, double t, std::span<const std::size_t> classes) {
    const std::vector<double> times(classes.size(), t);
    Tensor v = dit::model_forward(model, x, times, classes, gates);
    for (double& e : v.data()) e *= omega;
    return v;
  };
}

Tensor euler_sample(const dit::DitModel& model, const dit::SampleRequest& req, const CalibrationVector& c) {
  const dit::SampleRequest one[] = {req};
  return dit::euler_sample_batch(calibrated_field(model, c), model.arch().null_class(), one).front();
}

}  // namespace gatescale::calibration
