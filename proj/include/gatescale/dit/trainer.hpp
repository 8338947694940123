#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "gatescale/dit/dataset.hpp"
#include "gatescale/dit/model.hpp"
#include "gatescale/numerics/rng.hpp"

namespace gatescale::dit {

struct TrainConfig {
  long steps = 20000;
  std::size_t batch = 64;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double cond_drop = 0.1;
  DatasetSpec data;
};

/// One rectified-flow training batch: x_t = (1−t)x₀ + t·x₁, target x₁ − x₀.
struct FlowBatch {
  Tensor x_t;      // [B·16×4]
  Tensor target;   // [B·16×4]
  std::vector<double> t;
  std::vector<std::size_t> classes;  // after condition dropout
};

/// Builds a batch from data images [8×8] and their classes. Draws x₀, t and
/// the dropout coin from `rng`.
FlowBatch make_flow_batch(std::span<const Tensor> images, std::span<const std::size_t> classes, double cond_drop,
                          std::size_t null_class, Rng& rng);

/// Draws `batch` images from the dataset, then calls make_flow_batch.
FlowBatch sample_flow_batch(const DatasetSpec& data, std::size_t batch, double cond_drop, std::size_t null_class,
                            Rng& rng);

/// Mean over elements of (f_θ(x_t, t, p) − (x₁ − x₀))².
Var flow_matching_loss(Graph& g, const BoundWeights& w, const ArchSpec& arch, const FlowBatch& batch);
double flow_matching_loss(const DitModel& model, const FlowBatch& batch);

struct LossPoint {
  long step;
  double loss;
};

/// Optional per-step observer (step, loss), e.g. for progress output.
using TrainObserver = std::function<void(long, double)>;

/// Adam on the flow-matching loss. Deterministic for a fixed rng state.
/// Throws TrainingError with the step index when the loss stops being finite.
std::vector<LossPoint> train(DitModel& model, const TrainConfig& config, Rng& rng,
                             const TrainObserver& observer = {});

}  // namespace gatescale::dit
