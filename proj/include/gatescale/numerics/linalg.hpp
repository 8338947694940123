#pragma once

#include <cstddef>

#include "gatescale/numerics/rng.hpp"
#include "gatescale/numerics/tensor.hpp"

namespace gatescale {

/// c = B · diag(values) · Bᵀ, values descending, B's columns are eigenvectors.
struct SymmetricEigen {
  Tensor values;   // [d]
  Tensor vectors;  // [d×d], column j pairs with values[j]
  int sweeps = 0;
};

inline constexpr double kSymmetryTolerance = 1e-12;
inline constexpr int kJacobiMaxSweeps = 100;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Throws ContractError if `c` is not square or deviates from symmetry by more
/// than kSymmetryTolerance (relative to max(1, max|c|)); NumericError if the
/// off-diagonal mass has not vanished after kJacobiMaxSweeps sweeps.
SymmetricEigen eig_sym(const Tensor& c);

/// Reconstruct B·diag(λ)·Bᵀ.
Tensor eig_reconstruct(const SymmetricEigen& eig);

inline constexpr double kEigenClampFloor = 1e-20;
inline constexpr double kNegativeEigenTolerance = 1e-9;

/// mean + sigma · B · diag(√λ) · z with z ~ N(0, I) drawn from rng.
///
/// Eigenvalues in [-1e-9, 1e-20) are clamped to 1e-20 and counted in
/// `*clamped` when provided; anything more negative is a NumericError.
Tensor sample_mvn(Rng& rng, const Tensor& mean, double sigma, const SymmetricEigen& eig,
                  std::size_t* clamped = nullptr);

}  // namespace gatescale
