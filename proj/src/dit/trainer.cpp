#include "gatescale/dit/trainer.hpp"

#include <cmath>
#include <map>

#include "gatescale/numerics/errors.hpp"

namespace gatescale::dit {

FlowBatch make_flow_batch(std::span<const Tensor> images, std::span<const std::size_t> classes, double cond_drop,
                          std::size_t null_class, Rng& rng) {
  if (images.empty()) throw ContractError("flow batch must be nonempty");
  if (images.size() != classes.size()) throw DimensionError("flow batch: images and classes differ in length");
  const std::size_t batch = images.size();
  const std::size_t per = kImageTokens * kPatchDim;
  FlowBatch fb{Tensor({batch * kImageTokens, kPatchDim}), Tensor({batch * kImageTokens, kPatchDim}),
               std::vector<double>(batch), std::vector<std::size_t>(batch)};
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor x1 = patchify(images[b]);
    const double t = rng.uniform();
    fb.t[b] = t;
    fb.classes[b] = rng.uniform() < cond_drop ? null_class : classes[b];
    for (std::size_t i = 0; i < per; ++i) {
      const double x0 = rng.normal();
      fb.x_t[b * per + i] = (1.0 - t) * x0 + t * x1[i];
      fb.target[b * per + i] = x1[i] - x0;
    }
  }
  return fb;
}

FlowBatch sample_flow_batch(const DatasetSpec& data, std::size_t batch, double cond_drop, std::size_t null_class,
                            Rng& rng) {
  if (data.classes.empty()) throw ContractError("dataset must name at least one class");
  std::vector<Tensor> images;
  std::vector<std::size_t> classes;
  images.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t c = data.classes[rng.below(data.classes.size())];
    classes.push_back(c);
    images.push_back(sample_image(c, data.noise_std, rng));
  }
  return make_flow_batch(images, classes, cond_drop, null_class, rng);
}

Var flow_matching_loss(Graph& g, const BoundWeights& w, const ArchSpec& arch, const FlowBatch& batch) {
  const Var x = g.constant(batch.x_t);
  const Var v = model_forward(g, w, arch, x, batch.t, batch.classes, GateScales::identity(arch));
  return g.mse(v, g.constant(batch.target));
}

double flow_matching_loss(const DitModel& model, const FlowBatch& batch) {
  Graph g;
  const BoundWeights w(g, model, false);
  return g.value(flow_matching_loss(g, w, model.arch(), batch))[0];
}

std::vector<LossPoint> train(DitModel& model, const TrainConfig& config, Rng& rng, const TrainObserver& observer) {
  if (config.batch == 0) throw ContractError("train: batch must be positive");
  std::map<std::string, Tensor> m1, m2;
  for (const auto& [name, t] : model.weights()) {
    m1.emplace(name, Tensor(t.shape()));
    m2.emplace(name, Tensor(t.shape()));
  }

  std::vector<LossPoint> curve;
  curve.reserve(static_cast<std::size_t>(std::max(0L, config.steps)));
  double b1_pow = 1.0, b2_pow = 1.0;
  for (long step = 0; step < config.steps; ++step) {
    const FlowBatch batch =
        sample_flow_batch(config.data, config.batch, config.cond_drop, model.arch().null_class(), rng);
    Graph g;
    const BoundWeights w(g, model, true);
    Var loss;
    try {
      loss = flow_matching_loss(g, w, model.arch(), batch);
    } catch (const NumericError& e) {
      throw TrainingError(std::string("training diverged: ") + e.what(), step);
    }
    const double loss_value = g.value(loss)[0];
    if (!std::isfinite(loss_value)) throw TrainingError("training diverged: non-finite loss", step);
    const Gradients grads = g.grad(loss);

    b1_pow *= config.beta1;
    b2_pow *= config.beta2;
    const double step_size = config.lr * std::sqrt(1.0 - b2_pow) / (1.0 - b1_pow);
    for (auto& [name, weight] : model.mutable_weights()) {
      // MmDit's last text-stream FF never reaches the output. A zero gradient
      // would leave it unchanged under Adam anyway.
      if (!grads.has(w[name])) continue;
      const Tensor& grad = grads[w[name]];
      Tensor& a = m1.at(name);
      Tensor& b = m2.at(name);
      for (std::size_t i = 0; i < weight.size(); ++i) {
        a[i] = config.beta1 * a[i] + (1.0 - config.beta1) * grad[i];
        b[i] = config.beta2 * b[i] + (1.0 - config.beta2) * grad[i] * grad[i];
        weight[i] -= step_size * a[i] / (std::sqrt(b[i]) + config.adam_eps);
      }
      if (!weight.all_finite()) throw TrainingError("training diverged: non-finite weight " + name, step);
    }
    curve.push_back({step, loss_value});
    if (observer) observer(step, loss_value);
  }
  return curve;
}

}  // namespace gatescale::dit
