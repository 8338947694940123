#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gatescale/dit/model.hpp"
#include "gatescale/numerics/tensor.hpp"

namespace gatescale::dit {

struct SampleRequest {
  std::size_t class_id = 0;
  std::size_t nfe = 8;
  double guidance_scale = 0.0;
  std::uint64_t seed = 0;
};

/// Batched velocity field: tokens [B·16×4], time, per-sample class ids.
using VelocityField =
    std::function<Tensor(const Tensor& x_tokens, double t, std::span<const std::size_t> classes)>;

/// Velocity of the plain model under the given gate scales.
VelocityField model_field(const DitModel& model, GateScales scales);

/// Per-seed starting noise x₀ ~ N(0, I) as tokens [16×4].
Tensor initial_noise(std::uint64_t seed);

/// v_c + g · (v_c − v_u). At g == 0 the unconditional branch is not evaluated.
Tensor guided_velocity(const VelocityField& field, const Tensor& x_tokens, double t,
                       std::span<const std::size_t> classes, std::size_t null_class, double guidance_scale);

/// Euler integration from t = 0 (noise) to t = 1 (data) in `nfe` steps for a
/// batch of requests sharing nfe and guidance scale. Returns [8×8] images in
/// request order. A diverging field yields non-finite pixels; callers that
/// score images check them per item.
std::vector<Tensor> euler_sample_batch(const VelocityField& field, std::size_t null_class,
                                       std::span<const SampleRequest> requests);

Tensor euler_sample(const DitModel& model, const SampleRequest& req, const GateScales& scales);

}  // namespace gatescale::dit
