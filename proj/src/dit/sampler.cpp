#include "gatescale/dit/sampler.hpp"

#include <algorithm>

#include "gatescale/numerics/errors.hpp"
#include "gatescale/numerics/rng.hpp"

namespace gatescale::dit {

namespace {

constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;

}  // namespace

VelocityField model_field(const DitModel& model, GateScales scales) {
  return [&model, scales = std::move(scales)](const Tensor& x, double t, std::span<const std::size_t> classes) {
    const std::vector<double> times(classes.size(), t);
    return model_forward(model, x, times, classes, scales);
  };
}

Tensor initial_noise(std::uint64_t seed) {
  Rng rng(seed, kNoiseStream);
  Tensor x({kImageTokens, kPatchDim});
  for (double& v : x.data()) v = rng.normal();
  return x;
}

Tensor guided_velocity(const VelocityField& field, const Tensor& x_tokens, double t,
                       std::span<const std::size_t> classes, std::size_t null_class, double guidance_scale) {
  Tensor vc = field(x_tokens, t, classes);
  if (guidance_scale == 0.0) return vc;
  const std::vector<std::size_t> nulls(classes.size(), null_class);
  const Tensor vu = field(x_tokens, t, nulls);
  for (std::size_t i = 0; i < vc.size(); ++i) vc[i] += guidance_scale * (vc[i] - vu[i]);
  return vc;
}

std::vector<Tensor> euler_sample_batch(const VelocityField& field, std::size_t null_class,
                                       std::span<const SampleRequest> requests) {
  if (requests.empty()) return {};
  const std::size_t nfe = requests.front().nfe;
  const double g = requests.front().guidance_scale;
  if (nfe < 1) throw ContractError("euler_sample: nfe must be >= 1");
  if (!(g >= 0.0)) throw ContractError("euler_sample: guidance scale must be >= 0");
  for (const SampleRequest& r : requests)
    if (r.nfe != nfe || r.guidance_scale != g)
      throw ContractError("euler_sample_batch: requests must share nfe and guidance scale");

  const std::size_t batch = requests.size();
  const std::size_t per = kImageTokens * kPatchDim;
  Tensor x({batch * kImageTokens, kPatchDim});
  std::vector<std::size_t> classes(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor x0 = initial_noise(requests[b].seed);
    std::copy(x0.data().begin(), x0.data().end(), x.data().begin() + b * per);
    classes[b] = requests[b].class_id;
  }

  const double dt = 1.0 / static_cast<double>(nfe);
  for (std::size_t n = 0; n < nfe; ++n) {
    const double t = static_cast<double>(n) * dt;
    const Tensor v = guided_velocity(field, x, t, classes, null_class, g);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += v[i] * dt;
  }

  std::vector<Tensor> images;
  images.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor tok({kImageTokens, kPatchDim});
    std::copy_n(x.data().begin() + b * per, per, tok.data().begin());
    images.push_back(unpatchify(tok));
  }
  return images;
}

Tensor euler_sample(const DitModel& model, const SampleRequest& req, const GateScales& scales) {
  const SampleRequest one[] = {req};
  return euler_sample_batch(model_field(model, scales), model.arch().null_class(), one).front();
}

}  // namespace gatescale::dit
