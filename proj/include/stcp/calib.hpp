// Marginal score-distribution estimators and quantile rules: the base
// conformal quantile, the transductive mixture CDF over unlabeled covariates
// and its inverse, the direct plug-in (DP) quantile, the debiased PPI/SDCP
// estimator with clip + isotonic post-processing, and the oracle rule.

#pragma once

#include <span>
#include <vector>

#include "stcp/predictors.hpp"

namespace stcp {

// Right-continuous step CDF; F(s) = cumulative at the last value <= s and 0
// before the first. Quantile is the generalized inverse inf{s : F(s) >= u}.
struct StepwiseCdf {
  std::vector<double> sorted_values;
  std::vector<double> cumulative; // ascending, ends at 1

  double eval(double s) const;
  double quantile(double u) const;
};

struct AlphaLevels {
  double alpha = 0.1;
  int n = 0;

  // 1 - (1-alpha)(n+1)/n; may be <= 0 for small n, signalling an infinite
  // threshold.
  double alpha_n() const {
    return 1.0 - (1.0 - alpha) * (n + 1) / static_cast<double>(n);
  }
};

StepwiseCdf empirical_cdf(std::span<const double> scores);

// k-th smallest score with k = ceil((1-alpha)(n+1)); +inf when k > n.
double conformal_quantile(std::span<const double> scores, double alpha);

// Mixture CDF m^{-1} sum_j F(s | X_j; theta) with per-component location and
// scale cached; the workhorse behind DP, the debiased estimators and the
// alignment objective.
class MixtureCdf {
public:
  MixtureCdf(const CondCdfParams& theta,
             const std::vector<std::vector<double>>& covariates);

  double eval(double s) const;
  double density(double s) const;

  // inf{s : F(s) >= u} by bracketed Newton with bisection fallback; the
  // bracket starts from pooled loc +/- scale bounds and expands
  // geometrically (BracketFailure after 200 expansions). `guess` warm-starts
  // the search when it already lies inside the bracket.
  double quantile(double u, double tol = 1e-10, double guess = 0.0,
                  bool has_guess = false) const;

  // dF(s)/dtheta in flat parameter order, length k0.
  std::vector<double> grad(double s) const;
  void grad_into(double s, std::span<double> out) const;

  int dim() const { return dim_; }
  std::size_t size() const { return mu_.size(); }
  double min_loc() const { return min_loc_; }
  double max_loc() const { return max_loc_; }
  double max_scale() const { return max_scale_; }

private:
  std::vector<double> mu_, inv_sig_;
  // Cached pieces for grad: covariates flattened, softplus derivative factor.
  std::vector<double> xflat_, dsig_dt_;
  int dim_ = 0;
  double min_loc_ = 0.0, max_loc_ = 0.0, max_scale_ = 0.0;
};

double mixture_cdf_eval(const CondCdfParams& theta, double s,
                        const std::vector<std::vector<double>>& unlabeled);

double mixture_cdf_quantile(const CondCdfParams& theta, double u,
                            const std::vector<std::vector<double>>& unlabeled,
                            double tol = 1e-10);

// Q(1 - alpha_n; F_S^1(.; theta)); +inf when alpha_n <= 0.
double dp_quantile(const CondCdfParams& theta, const AlphaLevels& levels,
                   const std::vector<std::vector<double>>& unlabeled);

// Raw debiased values F0(s) + m^{-1} sum_j F(s|X~_j) - n^{-1} sum_i F(s|X_i)
// on the grid, before post-processing. Exposed for the algebra oracle.
std::vector<double> debiased_raw(
    const StepwiseCdf& f0, const CondCdfParams& theta,
    const std::vector<std::vector<double>>& labeled_x,
    const std::vector<std::vector<double>>& unlabeled,
    std::span<const double> grid);

// Clips the raw values to [0,1], monotonizes by pool-adjacent-violators and
// renormalizes the top to 1; the result is a valid step CDF on the grid.
StepwiseCdf debiased_cdf(const StepwiseCdf& f0, const CondCdfParams& theta,
                         const std::vector<std::vector<double>>& labeled_x,
                         const std::vector<std::vector<double>>& unlabeled,
                         std::span<const double> grid);

// Generalized inverse at 1 - alpha_n; +inf when alpha_n <= 0.
double debiased_quantile(const StepwiseCdf& f_breve,
                         const AlphaLevels& levels);

// Base conformal quantile on the union of both score multisets.
double oracle_quantile(std::span<const double> target_scores,
                       std::span<const double> extra_labeled_scores,
                       double alpha);

// Grid for the debiased estimator: sorted union of the observed target
// scores and 512 equispaced points spanning the pooled range (score range
// widened by the conditional model's loc +/- 8 scale over labeled and
// unlabeled covariates).
std::vector<double> debias_grid(
    std::span<const double> target_scores, const CondCdfParams& theta,
    const std::vector<std::vector<double>>& labeled_x,
    const std::vector<std::vector<double>>& unlabeled);

} // namespace stcp
