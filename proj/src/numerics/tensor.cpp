#include "gatescale/numerics/tensor.hpp"

#include <cblas.h>
#include <malloc.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gatescale/numerics/errors.hpp"

namespace gatescale {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (std::size_t e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size())
    throw DimensionError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::rows() const { return shape_.empty() ? 0 : data_.size() / shape_.back(); }
std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::require_finite(std::string_view what) const {
  if (!all_finite()) throw NumericError("non-finite value in " + std::string(what));
}

namespace {

// Activations of a training batch are ~1 MB each. Above glibc's default mmap
// threshold every one of them is a fresh mmap/munmap pair, which costs about
// a third of a training step in page faults. Keep them on the heap instead.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

// C[m×n] = op(A)·op(B), row-major, C zero-initialised by the caller.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c) {
  // One BLAS thread per call: callers parallelise at a coarser grain, and a
  // fixed thread count keeps the summation order independent of the machine.
  static const bool single_threaded = (openblas_set_num_threads(1), true);
  (void)single_threaded;
  const int lda = static_cast<int>(trans_a ? m : k);
  const int ldb = static_cast<int>(trans_b ? k : n);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a, lda, b, ldb, 0.0, c,
              static_cast<int>(n));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor c({m, n});
  gemm(false, false, m, n, k, a.data().data(), b.data().data(), c.data().data());
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k)
    throw DimensionError("matmul_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  Tensor c({m, n});
  gemm(false, true, m, n, k, a.data().data(), b.data().data(), c.data().data());
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_tn");
  require_2d(b, "matmul_tn");
  const std::size_t k = a.shape()[0], m = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul_tn: " + shape_str(a.shape()) + "^T x " + shape_str(b.shape()));
  Tensor c({m, n});
  gemm(true, false, m, n, k, a.data().data(), b.data().data(), c.data().data());
  return c;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor layer_norm(const Tensor& x) {
  const std::size_t d = x.cols();
  if (d < 2) throw DimensionError("layer_norm: normalised dimension must be >= 2");
  Tensor y(x.shape());
  const std::size_t rows = x.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * d;
    double* out = y.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) out[j] = (in[j] - mean) * inv;
  }
  return y;
}

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

Tensor scaled(const Tensor& a, double s) {
  Tensor c = a;
  for (double& v : c.data()) v *= s;
  return c;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double sum(const Tensor& a) { return std::accumulate(a.data().begin(), a.data().end(), 0.0); }

double frobenius_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace gatescale
