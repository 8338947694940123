#include "gatescale/dit/dataset.hpp"

#include <array>
#include <string>

#include "gatescale/dit/arch.hpp"
#include "gatescale/numerics/errors.hpp"

namespace gatescale::dit {

namespace {

constexpr std::array<std::string_view, kShapeClassCount> kNames{"disk", "cross", "bar-h", "bar-v"};
constexpr std::uint64_t kReferenceStream = 0x7265666572656e63ULL;

}  // namespace

std::string_view class_name(std::size_t class_id) {
  if (class_id >= kShapeClassCount) throw ContractError("no shape class " + std::to_string(class_id));
  return kNames[class_id];
}

std::size_t parse_class(std::string_view name) {
  for (std::size_t i = 0; i < kShapeClassCount; ++i)
    if (kNames[i] == name) return i;
  throw ContractError("unknown shape class '" + std::string(name) + "'");
}

Tensor class_template(std::size_t class_id) {
  Tensor t({kImageSide, kImageSide});
  for (std::size_t r = 0; r < kImageSide; ++r) {
    for (std::size_t c = 0; c < kImageSide; ++c) {
      const double dr = static_cast<double>(r) - 3.5, dc = static_cast<double>(c) - 3.5;
      bool on = false;
      switch (static_cast<ShapeClass>(class_id)) {
        case ShapeClass::Disk: on = dr * dr + dc * dc <= 2.6 * 2.6; break;
        case ShapeClass::Cross:
          on = ((r == 3 || r == 4) && c >= 1 && c <= 6) || ((c == 3 || c == 4) && r >= 1 && r <= 6);
          break;
        case ShapeClass::BarH: on = r == 3 || r == 4; break;
        case ShapeClass::BarV: on = c == 3 || c == 4; break;
        default: throw ContractError("no shape class " + std::to_string(class_id));
      }
      t.at(r, c) = on ? 1.0 : 0.0;
    }
  }
  return t;
}

Tensor sample_image(std::size_t class_id, double noise_std, Rng& rng) {
  Tensor img = class_template(class_id);
  for (double& v : img.data()) v += noise_std * rng.normal();
  return img;
}

std::vector<Tensor> reference_images(std::size_t class_id, std::size_t count, double noise_std, std::uint64_t seed) {
  Rng rng(seed, mix64(kReferenceStream, class_id));
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample_image(class_id, noise_std, rng));
  return out;
}

}  // namespace gatescale::dit
