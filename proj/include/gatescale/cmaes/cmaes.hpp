#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gatescale/numerics/linalg.hpp"
#include "gatescale/numerics/rng.hpp"
#include "gatescale/numerics/tensor.hpp"

namespace gatescale::cmaes {

/// 4 + ⌊3 ln d⌋.
std::size_t recommended_population_size(std::size_t d);

/// Strategy constants of the (μ/μ_w, λ)-CMA-ES with cumulative step-size
/// adaptation, rank-one and rank-μ updates.
struct CmaConstants {
  std::size_t lambda = 0;
  std::size_t mu = 0;
  std::vector<double> weights;  // positive, descending, sum 1
  double mu_eff = 0.0;
  double c_sigma = 0.0;
  double d_sigma = 0.0;
  double c_c = 0.0;
  double c_1 = 0.0;
  double c_mu = 0.0;
  double chi_n = 0.0;  // E‖N(0, I)‖

  static CmaConstants standard(std::size_t dim, std::size_t lambda);
};

struct CmaOptions {
  /// 0 selects recommended_population_size(dim).
  std::size_t population = 0;
};

/// CMA-ES for maximisation behind an ask/tell interface.
///
/// ask() and tell() must alternate; tell() takes one reward per candidate in
/// the order ask() returned them. Only the ranking of rewards is used.
class CmaState {
 public:
  /// Throws ContractError for dim == 0, sigma0 <= 0, or a mean of wrong size.
  CmaState(std::size_t dim, const Tensor& mean0, double sigma0, Rng rng, CmaOptions options = {});

  const std::vector<Tensor>& ask();
  void tell(std::span<const double> rewards);

  std::size_t dim() const noexcept { return dim_; }
  const Tensor& mean() const noexcept { return mean_; }
  double sigma() const noexcept { return sigma_; }
  const Tensor& covariance() const noexcept { return cov_; }
  const Tensor& path_sigma() const noexcept { return p_sigma_; }
  const Tensor& path_c() const noexcept { return p_c_; }
  const SymmetricEigen& eigen() const noexcept { return eig_; }
  long generation() const noexcept { return generation_; }
  std::size_t evaluations() const noexcept { return evaluations_; }
  const CmaConstants& constants() const noexcept { return constants_; }
  std::size_t population() const noexcept { return constants_.lambda; }
  bool awaiting_tell() const noexcept { return awaiting_tell_; }
  /// λ_max / λ_min of C.
  double condition_number() const;
  /// Eigenvalues clamped while sampling so far.
  std::size_t clamped_eigenvalues() const noexcept { return clamped_; }

  /// Exact comparison of the full distribution state (not the rng).
  bool same_distribution(const CmaState& other) const;

  /// Overwrites C without re-decomposing it; lets self-tests inject faults.
  void debug_set_covariance(Tensor c) { cov_ = std::move(c); }

 private:
  std::size_t dim_;
  CmaConstants constants_;
  Tensor mean_;
  double sigma_;
  Tensor cov_;
  Tensor p_sigma_;
  Tensor p_c_;
  SymmetricEigen eig_;
  Rng rng_;
  long generation_ = 0;
  std::size_t evaluations_ = 0;
  std::size_t clamped_ = 0;
  bool awaiting_tell_ = false;
  std::vector<Tensor> candidates_;
};

struct StopCriteria {
  double sigma_stop = 0.01;
  double plateau_epsilon = 1e-3;
  std::size_t plateau_window = 50;
  long max_generations = 1000;
};

struct StopReport {
  bool stop = false;
  /// "sigma", "plateau", "max_generations", or empty.
  std::string trigger;
};

/// `best_history[k]` is the best held-out reward known after generation k.
StopReport should_stop(const CmaState& state, std::span<const double> best_history, const StopCriteria& criteria = {});

}  // namespace gatescale::cmaes
