// Finite-grid squared-Wasserstein alignment of the conditional score CDF:
// the objective
//
//   J(theta) = (1/|U|) sum_k (q0[k] - q1(U[k];theta))^2
//            + lambda * ||theta - theta_hat||^2 / k0,
//
// its analytic gradient through the implicit quantile identity
// grad q1(u) = -grad_theta F1 / f1 at q1(u), plain gradient descent with
// backtracking, the aligned StCP quantile, and the data-driven lambda
// selection rule over the empirical band [q_L, q_U].

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "stcp/calib.hpp"
#include "stcp/predictors.hpp"

namespace stcp {

struct AlignmentConfig {
  double lambda = 0.0;       // weight on the deviation penalty
  int grid_size = 21;        // K; the level grid always contains 1 - alpha_n
  double step_size = 0.05;
  int max_iters = 2000;
  double grad_tol = 1e-7;
  double bisect_tol = 1e-10;
  bool warm_start = false;   // reuse the previous lambda's solution in
                             // select_lambda instead of restarting at theta_hat
};

struct LambdaSelectionConfig {
  // Ascending nonnegative candidate values; must contain 0.
  std::vector<double> lambda_grid{0.0, 1.0, 10.0, 100.0, 1000.0};
  double alpha_tol = 0.02;

  // Behavior when no candidate lands inside [q_L, q_U]. `raise` throws
  // InfeasibleAll; `clamp_to_band` returns the lambda=0 quantile clamped to
  // the band edge, which still satisfies the selection coverage guarantee.
  enum class OnEmpty { raise, clamp_to_band };
  OnEmpty on_empty = OnEmpty::raise;
};

// Midpoint levels (i - 1/2)/K for i = 1..K with 1 - alpha_n inserted,
// deduplicated and sorted. The midpoints lie in [1/(2K), 1 - 1/(2K)].
std::vector<double> level_grid(double alpha_n, int grid_size);

double alignment_objective(const CondCdfParams& theta,
                           const CondCdfParams& theta_hat,
                           std::span<const double> levels,
                           std::span<const double> target_quantiles,
                           const std::vector<std::vector<double>>& unlabeled,
                           double lambda);

// Throws DegenerateDensity if the mixture density at some aligned quantile
// falls below 1e-12.
std::vector<double> alignment_gradient(
    const CondCdfParams& theta, const CondCdfParams& theta_hat,
    std::span<const double> levels, std::span<const double> target_quantiles,
    const std::vector<std::vector<double>>& unlabeled, double lambda);

struct AlignResult {
  CondCdfParams theta;
  double objective = 0.0;
  double grid_term = 0.0; // objective without the penalty
  int iters = 0;
  bool converged = false; // gradient tolerance reached before max_iters
};

// Gradient descent from `start` (theta_hat when absent) with backtracking
// halving on objective increase; accepted objectives never increase, so
// J(result) <= J(start). alpha_n must lie in (0,1).
AlignResult align(const CondCdfParams& theta_hat, double lambda,
                  std::span<const double> calibration_scores,
                  const std::vector<std::vector<double>>& unlabeled,
                  double alpha_n, const AlignmentConfig& config,
                  const CondCdfParams* start = nullptr);

// Q(1 - alpha_n; F_S^1(.; theta_tilde)); +inf when alpha_n <= 0.
double stcp_quantile(const CondCdfParams& theta_tilde,
                     const AlphaLevels& levels,
                     const std::vector<std::vector<double>>& unlabeled);

struct LambdaRow {
  double lambda = 0.0;
  double q_st = 0.0;
  bool feasible = false;
  double grid_residual = 0.0;
  int iters = 0;
};

struct LambdaSelection {
  double lambda_hat = 0.0;
  double q_st_sel = 0.0;
  double q_lo = 0.0, q_hi = 0.0; // the feasibility band
  bool fallback = false;         // empty feasible set, clamped to the band
  std::vector<LambdaRow> table;  // one row per candidate lambda
};

LambdaSelection select_lambda(const CondCdfParams& theta_hat,
                              const LambdaSelectionConfig& selection,
                              const AlphaLevels& levels,
                              std::span<const double> calibration_scores,
                              const std::vector<std::vector<double>>& unlabeled,
                              const AlignmentConfig& config);

} // namespace stcp
