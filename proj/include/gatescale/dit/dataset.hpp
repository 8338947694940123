#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "gatescale/numerics/rng.hpp"
#include "gatescale/numerics/tensor.hpp"

namespace gatescale::dit {

/// Procedural 8×8 grayscale classes: binary templates (0 background, 1 shape).
enum class ShapeClass : std::size_t { Disk = 0, Cross = 1, BarH = 2, BarV = 3 };

inline constexpr std::size_t kShapeClassCount = 4;

std::string_view class_name(std::size_t class_id);
std::size_t parse_class(std::string_view name);

/// Noise-free template, [8×8].
Tensor class_template(std::size_t class_id);

struct DatasetSpec {
  std::vector<std::size_t> classes{0, 1, 2, 3};
  double noise_std = 0.05;
};

/// template + N(0, noise_std²) per pixel.
Tensor sample_image(std::size_t class_id, double noise_std, Rng& rng);

/// Fixed reference images of one class drawn on a dedicated RNG stream.
std::vector<Tensor> reference_images(std::size_t class_id, std::size_t count, double noise_std, std::uint64_t seed);

}  // namespace gatescale::dit
