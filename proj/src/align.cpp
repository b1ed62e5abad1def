#include "stcp/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "stcp/errors.hpp"
#include "stcp/mathutil.hpp"

namespace stcp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kDensityFloor = 1e-12;

std::vector<double> target_quantiles_on(std::span<const double> levels,
                                        const StepwiseCdf& f0) {
  std::vector<double> q0(levels.size());
  for (std::size_t k = 0; k < levels.size(); ++k)
    q0[k] = f0.quantile(levels[k]);
  return q0;
}

// One alignment instance: levels, target quantiles, penalty anchor. Caches
// the per-level quantile roots so successive evaluations along the descent
// path warm-start the inversion.
class AlignProblem {
public:
  AlignProblem(const CondCdfParams& theta_hat,
               std::span<const double> levels, std::vector<double> q0,
               const std::vector<std::vector<double>>& unlabeled,
               double lambda, double bisect_tol)
      : theta_hat_flat_(theta_hat.to_flat()),
        levels_(levels.begin(), levels.end()),
        q0_(std::move(q0)),
        unlabeled_(unlabeled),
        lambda_(lambda),
        bisect_tol_(bisect_tol),
        dim_(theta_hat.dim()) {}

  int k0() const { return 2 * dim_ + 2; }

  struct Eval {
    double objective = 0.0;
    double grid_term = 0.0;
    std::vector<double> roots;
  };

  Eval evaluate(std::span<const double> flat,
                const std::vector<double>* root_guess) const {
    for (double v : flat)
      if (!std::isfinite(v)) throw NonFinite("align: non-finite parameter");
    const CondCdfParams theta = CondCdfParams::from_flat(flat, dim_);
    MixtureCdf mix(theta, unlabeled_);
    Eval out;
    out.roots.resize(levels_.size());
    double sq = 0.0;
    for (std::size_t k = 0; k < levels_.size(); ++k) {
      const bool guided = root_guess != nullptr;
      out.roots[k] = mix.quantile(levels_[k], bisect_tol_,
                                  guided ? (*root_guess)[k] : 0.0, guided);
      const double r = q0_[k] - out.roots[k];
      sq += r * r;
    }
    out.grid_term = sq / static_cast<double>(levels_.size());
    double pen = 0.0;
    for (int i = 0; i < k0(); ++i) {
      const double dv = flat[i] - theta_hat_flat_[i];
      pen += dv * dv;
    }
    out.objective = out.grid_term + lambda_ * pen / static_cast<double>(k0());
    return out;
  }

  // Gradient at `flat` given the roots from evaluate() at the same point.
  std::vector<double> gradient(std::span<const double> flat,
                               const std::vector<double>& roots) const {
    const CondCdfParams theta = CondCdfParams::from_flat(flat, dim_);
    MixtureCdf mix(theta, unlabeled_);
    const int p = k0();
    std::vector<double> g(p, 0.0), gF(p);
    const double inv_k = 1.0 / static_cast<double>(levels_.size());
    for (std::size_t k = 0; k < levels_.size(); ++k) {
      const double dens = mix.density(roots[k]);
      if (dens < kDensityFloor)
        throw DegenerateDensity(
            "alignment_gradient: mixture density " + std::to_string(dens) +
            " below 1e-12 at level " + std::to_string(levels_[k]));
      mix.grad_into(roots[k], gF);
      const double c = 2.0 * inv_k * (roots[k] - q0_[k]) * (-1.0 / dens);
      for (int i = 0; i < p; ++i) g[i] += c * gF[i];
    }
    const double cpen = 2.0 * lambda_ / static_cast<double>(p);
    for (int i = 0; i < p; ++i) g[i] += cpen * (flat[i] - theta_hat_flat_[i]);
    return g;
  }

  const std::vector<double>& theta_hat_flat() const { return theta_hat_flat_; }

private:
  std::vector<double> theta_hat_flat_;
  std::vector<double> levels_;
  std::vector<double> q0_;
  const std::vector<std::vector<double>>& unlabeled_;
  double lambda_;
  double bisect_tol_;
  int dim_;
};

} // namespace

std::vector<double> level_grid(double alpha_n, int grid_size) {
  if (!(alpha_n > 0.0 && alpha_n < 1.0))
    throw InvalidAlpha("level_grid: alpha_n must lie in (0,1)");
  if (grid_size < 2) throw InvalidAlpha("level_grid: K must be >= 2");
  std::vector<double> levels;
  levels.reserve(grid_size + 1);
  for (int i = 1; i <= grid_size; ++i)
    levels.push_back((i - 0.5) / static_cast<double>(grid_size));
  levels.push_back(1.0 - alpha_n);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  return levels;
}

double alignment_objective(const CondCdfParams& theta,
                           const CondCdfParams& theta_hat,
                           std::span<const double> levels,
                           std::span<const double> target_quantiles,
                           const std::vector<std::vector<double>>& unlabeled,
                           double lambda) {
  AlignProblem prob(theta_hat, levels,
                    {target_quantiles.begin(), target_quantiles.end()},
                    unlabeled, lambda,
                    AlignmentConfig{}.bisect_tol);
  return prob.evaluate(theta.to_flat(), nullptr).objective;
}

std::vector<double> alignment_gradient(
    const CondCdfParams& theta, const CondCdfParams& theta_hat,
    std::span<const double> levels, std::span<const double> target_quantiles,
    const std::vector<std::vector<double>>& unlabeled, double lambda) {
  AlignProblem prob(theta_hat, levels,
                    {target_quantiles.begin(), target_quantiles.end()},
                    unlabeled, lambda,
                    AlignmentConfig{}.bisect_tol);
  auto flat = theta.to_flat();
  auto eval = prob.evaluate(flat, nullptr);
  return prob.gradient(flat, eval.roots);
}

AlignResult align(const CondCdfParams& theta_hat, double lambda,
                  std::span<const double> calibration_scores,
                  const std::vector<std::vector<double>>& unlabeled,
                  double alpha_n, const AlignmentConfig& config,
                  const CondCdfParams* start) {
  if (calibration_scores.empty())
    throw EmptyInput("align: empty calibration scores");
  if (unlabeled.empty()) throw EmptyInput("align: empty unlabeled set");
  const StepwiseCdf f0 = empirical_cdf(calibration_scores);
  const auto levels = level_grid(alpha_n, config.grid_size);
  AlignProblem prob(theta_hat, levels, target_quantiles_on(levels, f0),
                    unlabeled, lambda, config.bisect_tol);
  const int p = prob.k0();

  std::vector<double> flat =
      start != nullptr ? start->to_flat() : theta_hat.to_flat();
  auto cur = prob.evaluate(flat, nullptr);

  AlignResult res;
  double step = config.step_size;
  std::vector<double> trial(p);
  int it = 0;
  for (; it < config.max_iters; ++it) {
    auto g = prob.gradient(flat, cur.roots);
    double gnorm = 0.0;
    for (double v : g) gnorm += v * v;
    if (std::sqrt(gnorm) < config.grad_tol) {
      res.converged = true;
      break;
    }
    bool accepted = false;
    for (int h = 0; h < 60; ++h) {
      for (int i = 0; i < p; ++i) trial[i] = flat[i] - step * g[i];
      AlignProblem::Eval next;
      try {
        next = prob.evaluate(trial, &cur.roots);
      } catch (const NonFinite& e) {
        throw NonFinite(std::string(e.what()) + " (iteration " +
                        std::to_string(it) + ", step " +
                        std::to_string(step) + ")");
      }
      if (next.objective <= cur.objective) {
        flat = trial;
        cur = std::move(next);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break; // no descent direction at float resolution
    step = std::min(step * 2.0, config.step_size);
  }
  res.theta = CondCdfParams::from_flat(flat, theta_hat.dim());
  res.objective = cur.objective;
  res.grid_term = cur.grid_term;
  res.iters = it;
  return res;
}

double stcp_quantile(const CondCdfParams& theta_tilde,
                     const AlphaLevels& levels,
                     const std::vector<std::vector<double>>& unlabeled) {
  const double an = levels.alpha_n();
  if (an <= 0.0) return kInf;
  return mixture_cdf_quantile(theta_tilde, 1.0 - an, unlabeled);
}

LambdaSelection select_lambda(const CondCdfParams& theta_hat,
                              const LambdaSelectionConfig& selection,
                              const AlphaLevels& levels,
                              std::span<const double> calibration_scores,
                              const std::vector<std::vector<double>>& unlabeled,
                              const AlignmentConfig& config) {
  const auto& grid = selection.lambda_grid;
  if (grid.empty() || grid.front() != 0.0)
    throw ConfigError("select_lambda: lambda grid must contain 0 first");
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    if (!(grid[i] < grid[i + 1]))
      throw ConfigError("select_lambda: lambda grid must be strictly ascending");

  const double alpha = levels.alpha;
  const StepwiseCdf f0 = empirical_cdf(calibration_scores);
  const double q_lo = f0.quantile(1.0 - alpha - selection.alpha_tol);
  // When 1 - alpha + alpha_tol >= 1 the exceedance set is empty on a finite
  // sample; the band top is the maximum calibration score.
  const double hi_level = 1.0 - alpha + selection.alpha_tol;
  const double q_hi =
      hi_level >= 1.0 ? f0.sorted_values.back() : f0.quantile(hi_level);

  const double an = levels.alpha_n();
  LambdaSelection out;
  out.q_lo = q_lo;
  out.q_hi = q_hi;

  if (an <= 0.0) {
    // Infinite-threshold regime: every method reports +inf, selection is moot.
    for (double lam : grid)
      out.table.push_back({lam, kInf, false, 0.0, 0});
    out.lambda_hat = 0.0;
    out.q_st_sel = kInf;
    return out;
  }

  const CondCdfParams* warm = nullptr;
  CondCdfParams prev;
  for (double lam : grid) {
    LambdaRow row;
    row.lambda = lam;
    auto res = align(theta_hat, lam, calibration_scores, unlabeled, an,
                     config, warm);
    row.q_st = stcp_quantile(res.theta, levels, unlabeled);
    row.grid_residual = res.grid_term;
    row.iters = res.iters;
    if (config.warm_start) {
      prev = res.theta;
      warm = &prev;
    }
    row.feasible = row.q_st >= q_lo && row.q_st <= q_hi;
    out.table.push_back(row);
  }

  const LambdaRow* best = nullptr;
  for (const auto& row : out.table)
    if (row.feasible) best = &row; // grid ascending, so the last wins
  if (best != nullptr) {
    out.lambda_hat = best->lambda;
    out.q_st_sel = best->q_st;
    return out;
  }
  if (selection.on_empty == LambdaSelectionConfig::OnEmpty::raise)
    throw InfeasibleAll(
        "select_lambda: lambda=0 quantile " +
        std::to_string(out.table.front().q_st) + " outside band [" +
        std::to_string(q_lo) + ", " + std::to_string(q_hi) + "]");
  out.fallback = true;
  out.lambda_hat = 0.0;
  out.q_st_sel = std::clamp(out.table.front().q_st, q_lo, q_hi);
  return out;
}

} // namespace stcp
