#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gatescale {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major f64 array. Value semantics; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor identity(std::size_t n);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Leading extent of a rank-2 view: product of all but the last dimension.
  std::size_t rows() const;
  /// Last dimension.
  std::size_t cols() const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;
  /// Throws NumericError naming `what` when any element is NaN/Inf.
  void require_finite(std::string_view what) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Plain (non-recording) kernels. The autodiff graph calls the same kernels.

Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// aᵀ · b
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

inline constexpr double kLayerNormEps = 1e-6;
/// Per-row normalisation over the last dimension, no affine.
Tensor layer_norm(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scaled(const Tensor& a, double s);
double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double frobenius_norm(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace gatescale
