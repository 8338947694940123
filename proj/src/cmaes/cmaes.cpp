#include "gatescale/cmaes/cmaes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gatescale/numerics/errors.hpp"

namespace gatescale::cmaes {

std::size_t recommended_population_size(std::size_t d) {
  if (d == 0) throw ContractError("population size needs d >= 1");
  return 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(static_cast<double>(d))));
}

CmaConstants CmaConstants::standard(std::size_t dim, std::size_t lambda) {
  if (lambda < 2) throw ContractError("CMA-ES population must be >= 2");
  const double n = static_cast<double>(dim);
  CmaConstants k;
  k.lambda = lambda;
  k.mu = lambda / 2;
  k.weights.resize(k.mu);
  const double base = std::log(static_cast<double>(lambda) / 2.0 + 0.5);
  for (std::size_t i = 0; i < k.mu; ++i) k.weights[i] = base - std::log(static_cast<double>(i + 1));
  const double wsum = std::accumulate(k.weights.begin(), k.weights.end(), 0.0);
  double w2 = 0.0;
  for (double& w : k.weights) {
    w /= wsum;
    w2 += w * w;
  }
  k.mu_eff = 1.0 / w2;
  k.c_sigma = (k.mu_eff + 2.0) / (n + k.mu_eff + 5.0);
  k.d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((k.mu_eff - 1.0) / (n + 1.0)) - 1.0) + k.c_sigma;
  k.c_c = (4.0 + k.mu_eff / n) / (n + 4.0 + 2.0 * k.mu_eff / n);
  k.c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + k.mu_eff);
  k.c_mu = std::min(1.0 - k.c_1, 2.0 * (k.mu_eff - 2.0 + 1.0 / k.mu_eff) / ((n + 2.0) * (n + 2.0) + k.mu_eff));
  k.chi_n = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
  return k;
}

CmaState::CmaState(std::size_t dim, const Tensor& mean0, double sigma0, Rng rng, CmaOptions options)
    : dim_(dim),
      mean_(mean0),
      sigma_(sigma0),
      cov_(dim ? Tensor::identity(dim) : Tensor{}),
      p_sigma_(dim ? Tensor({dim}) : Tensor{}),
      p_c_(dim ? Tensor({dim}) : Tensor{}),
      rng_(rng) {
  if (dim == 0) throw ContractError("CMA-ES dimension must be >= 1");
  if (!(sigma0 > 0.0) || !std::isfinite(sigma0)) throw ContractError("CMA-ES sigma0 must be finite and > 0");
  if (mean0.size() != dim) throw ContractError("CMA-ES initial mean has wrong dimension");
  mean0.require_finite("CMA-ES initial mean");
  mean_ = mean0.reshaped({dim});
  constants_ = CmaConstants::standard(dim, options.population ? options.population : recommended_population_size(dim));
  eig_ = eig_sym(cov_);
}

const std::vector<Tensor>& CmaState::ask() {
  if (awaiting_tell_) throw ProtocolError("ask called twice without tell");
  candidates_.clear();
  candidates_.reserve(constants_.lambda);
  for (std::size_t k = 0; k < constants_.lambda; ++k) candidates_.push_back(sample_mvn(rng_, mean_, sigma_, eig_, &clamped_));
  awaiting_tell_ = true;
  return candidates_;
}

void CmaState::tell(std::span<const double> rewards) {
  if (!awaiting_tell_) throw ProtocolError("tell called without a pending ask");
  if (rewards.size() != constants_.lambda)
    throw ProtocolError("tell expected " + std::to_string(constants_.lambda) + " rewards, got " +
                        std::to_string(rewards.size()));
  for (std::size_t k = 0; k < rewards.size(); ++k)
    if (!std::isfinite(rewards[k])) throw EvaluationError("non-finite reward for candidate " + std::to_string(k));

  const std::size_t n = dim_;
  const CmaConstants& k = constants_;

  // Maximisation: highest reward first, ties by candidate index.
  std::vector<std::size_t> order(k.lambda);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rewards[a] > rewards[b]; });

  // y_i = (x_i − m) / σ for the selected candidates.
  std::vector<std::vector<double>> y(k.mu, std::vector<double>(n));
  std::vector<double> y_w(n, 0.0);
  for (std::size_t i = 0; i < k.mu; ++i) {
    const Tensor& x = candidates_[order[i]];
    for (std::size_t j = 0; j < n; ++j) {
      y[i][j] = (x[j] - mean_[j]) / sigma_;
      y_w[j] += k.weights[i] * y[i][j];
    }
  }
  Tensor new_mean = mean_;
  for (std::size_t j = 0; j < n; ++j) {
    double step = 0.0;
    for (std::size_t i = 0; i < k.mu; ++i) step += k.weights[i] * (candidates_[order[i]][j] - mean_[j]);
    new_mean[j] += step;
  }

  // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
  std::vector<double> bt_y(n, 0.0), c_inv_half_y(n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += eig_.vectors.at(j, a) * y_w[j];
    bt_y[a] = acc / std::sqrt(std::max(eig_.values[a], kEigenClampFloor));
  }
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t a = 0; a < n; ++a) acc += eig_.vectors.at(j, a) * bt_y[a];
    c_inv_half_y[j] = acc;
  }

  const double cs_norm = std::sqrt(k.c_sigma * (2.0 - k.c_sigma) * k.mu_eff);
  for (std::size_t j = 0; j < n; ++j) p_sigma_[j] = (1.0 - k.c_sigma) * p_sigma_[j] + cs_norm * c_inv_half_y[j];
  const double ps_norm = frobenius_norm(p_sigma_);
  const double gens = static_cast<double>(generation_ + 1);
  const double h_sigma_threshold = (1.4 + 2.0 / (static_cast<double>(n) + 1.0)) * k.chi_n;
  const bool h_sigma = ps_norm / std::sqrt(1.0 - std::pow(1.0 - k.c_sigma, 2.0 * gens)) < h_sigma_threshold;

  const double cc_norm = std::sqrt(k.c_c * (2.0 - k.c_c) * k.mu_eff);
  for (std::size_t j = 0; j < n; ++j) p_c_[j] = (1.0 - k.c_c) * p_c_[j] + (h_sigma ? cc_norm * y_w[j] : 0.0);
  const double delta_h = (h_sigma ? 0.0 : 1.0) * k.c_c * (2.0 - k.c_c);

  Tensor c_new({n, n});
  const double keep = 1.0 - k.c_1 - k.c_mu;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a; b < n; ++b) {
      double rank_mu = 0.0;
      for (std::size_t i = 0; i < k.mu; ++i) rank_mu += k.weights[i] * y[i][a] * y[i][b];
      const double v = keep * cov_.at(a, b) + k.c_1 * (p_c_[a] * p_c_[b] + delta_h * cov_.at(a, b)) + k.c_mu * rank_mu;
      c_new.at(a, b) = v;
      c_new.at(b, a) = v;
    }
  }

  sigma_ *= std::exp((k.c_sigma / k.d_sigma) * (ps_norm / k.chi_n - 1.0));
  if (!(sigma_ > 0.0) || !std::isfinite(sigma_)) throw NumericError("CMA-ES step size left (0, inf)");
  mean_ = std::move(new_mean);
  cov_ = std::move(c_new);
  eig_ = eig_sym(cov_);
  evaluations_ += k.lambda;
  ++generation_;
  awaiting_tell_ = false;
}

double CmaState::condition_number() const {
  const double lo = std::max(eig_.values[dim_ - 1], kEigenClampFloor);
  return eig_.values[0] / lo;
}

bool CmaState::same_distribution(const CmaState& o) const {
  return dim_ == o.dim_ && mean_ == o.mean_ && sigma_ == o.sigma_ && cov_ == o.cov_ && p_sigma_ == o.p_sigma_ &&
         p_c_ == o.p_c_ && generation_ == o.generation_ && eig_.values == o.eig_.values &&
         eig_.vectors == o.eig_.vectors;
}

StopReport should_stop(const CmaState& state, std::span<const double> best_history, const StopCriteria& criteria) {
  if (state.sigma() < criteria.sigma_stop) return {true, "sigma"};
  if (state.generation() >= criteria.max_generations) return {true, "max_generations"};
  const std::size_t w = criteria.plateau_window;
  if (w > 0 && best_history.size() > w) {
    const double gain = best_history.back() - best_history[best_history.size() - 1 - w];
    if (gain < criteria.plateau_epsilon) return {true, "plateau"};
  }
  return {};
}

}  // namespace gatescale::cmaes
