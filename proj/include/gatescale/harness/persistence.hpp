#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gatescale/calibration/ensemble.hpp"
#include "gatescale/dit/model.hpp"
#include "gatescale/rewards/rewards.hpp"

namespace gatescale::harness {

/// Missing, truncated, or tampered checkpoint/sidecar file.
struct PersistenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;
inline constexpr int kSidecarVersion = 1;

/// Model weights plus the MMD reference images, with training provenance.
struct Checkpoint {
  dit::DitModel model;
  rewards::ReferenceSet references;
  std::uint64_t seed = 0;
  /// Free-form provenance (steps, losses...), stored as strings.
  std::map<std::string, std::string> provenance;
};

/// Line 1: JSON manifest {format, version, arch, seed, provenance, tensors
/// [{name, offset, shape}], payload_bytes, payload_fnv1a, manifest_fnv1a}.
/// The rest: raw little-endian doubles, tensors in manifest order.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// A calibration result as written to disk. `selected` is what samplers
/// use (best held-out candidate); `mean` is the final CMA-ES mean.
struct Sidecar {
  std::uint64_t arch_hash = 0;
  calibration::Granularity granularity = calibration::Granularity::Layer;
  std::vector<calibration::ConditionRole> roles;
  std::vector<double> selected;
  std::vector<double> mean;
  std::map<std::string, std::string> provenance;

  calibration::EnsembleSpec selected_spec(const dit::ArchSpec& arch) const;
  calibration::EnsembleSpec mean_spec(const dit::ArchSpec& arch) const;
};

/// Text manifest, one `key = value` per line, fixed key order.
std::string serialize_sidecar(const Sidecar& s);
Sidecar parse_sidecar(const std::string& text);

void save_sidecar(const std::string& path, const Sidecar& s);
Sidecar load_sidecar(const std::string& path);

/// Writes the whole string, creating parent directories.
void write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

}  // namespace gatescale::harness
