#include "gatescale/numerics/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gatescale/numerics/errors.hpp"

namespace gatescale {

SymmetricEigen eig_sym(const Tensor& c) {
  if (c.rank() != 2 || c.shape()[0] != c.shape()[1])
    throw ContractError("eig_sym: expected a square matrix, got " + shape_str(c.shape()));
  const std::size_t d = c.shape()[0];
  double scale = 1.0;
  for (double v : c.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      if (std::abs(c.at(i, j) - c.at(j, i)) > kSymmetryTolerance * scale)
        throw ContractError("eig_sym: matrix is not symmetric");
  c.require_finite("eig_sym input");

  Tensor a = c;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) a.at(i, j) = a.at(j, i) = 0.5 * (c.at(i, j) + c.at(j, i));
  Tensor v = Tensor::identity(d);

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) s += a.at(i, j) * a.at(i, j);
    return std::sqrt(2.0 * s);
  };
  const double total = frobenius_norm(a);

  int sweep = 0;
  for (; sweep < kJacobiMaxSweeps; ++sweep) {
    const double off = off_norm();
    if (off <= 1e-15 * total || off == 0.0) break;
    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a.at(p, q);
        if (apq == 0.0) continue;
        const double app = a.at(p, p), aqq = a.at(q, q);
        // Skip rotations that cannot change the diagonal at working precision.
        if (sweep > 3 && std::abs(apq) < 1e-18 * (std::abs(app) + std::abs(aqq))) {
          a.at(p, q) = a.at(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = cs * akp - sn * akq;
          a.at(k, q) = sn * akp + cs * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = cs * apk - sn * aqk;
          a.at(q, k) = sn * apk + cs * aqk;
        }
        a.at(p, q) = a.at(q, p) = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = cs * vkp - sn * vkq;
          v.at(k, q) = sn * vkp + cs * vkq;
        }
      }
    }
  }
  if (sweep == kJacobiMaxSweeps && off_norm() > 1e-15 * total)
    throw NumericError("eig_sym: Jacobi iteration did not converge");

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a.at(i, i) > a.at(j, j); });

  SymmetricEigen out{Tensor({d}), Tensor({d, d}), sweep};
  for (std::size_t j = 0; j < d; ++j) {
    out.values[j] = a.at(order[j], order[j]);
    for (std::size_t k = 0; k < d; ++k) out.vectors.at(k, j) = v.at(k, order[j]);
  }
  return out;
}

Tensor eig_reconstruct(const SymmetricEigen& eig) {
  const std::size_t d = eig.values.size();
  Tensor scaled_vectors = eig.vectors;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) scaled_vectors.at(i, j) *= eig.values[j];
  return matmul_nt(scaled_vectors, eig.vectors);
}

Tensor sample_mvn(Rng& rng, const Tensor& mean, double sigma, const SymmetricEigen& eig, std::size_t* clamped) {
  const std::size_t d = mean.size();
  if (eig.values.size() != d || eig.vectors.shape() != Shape{d, d})
    throw DimensionError("sample_mvn: eigendecomposition does not match mean of size " + std::to_string(d));
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ContractError("sample_mvn: sigma must be finite and >= 0");

  std::vector<double> root(d);
  for (std::size_t j = 0; j < d; ++j) {
    double lambda = eig.values[j];
    if (lambda < -kNegativeEigenTolerance)
      throw NumericError("sample_mvn: covariance has negative eigenvalue " + std::to_string(lambda));
    if (lambda < kEigenClampFloor) {
      lambda = kEigenClampFloor;
      if (clamped) ++*clamped;
    }
    root[j] = std::sqrt(lambda);
  }
  std::vector<double> z(d);
  for (std::size_t j = 0; j < d; ++j) z[j] = rng.normal() * root[j];

  Tensor x = mean;
  for (std::size_t i = 0; i < d; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += eig.vectors.at(i, j) * z[j];
    x[i] += sigma * acc;
  }
  return x;
}

}  // namespace gatescale
