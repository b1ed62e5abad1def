// Source-trained models consumed by the score functions and by calibration:
// a linear point predictor, linear pinball-loss quantile predictors, and the
// Gaussian location-scale conditional CDF family
//
//   F(s | x; theta) = Phi((s - loc(x)) / scale(x)),
//   loc(x)   = loc_weights . x + loc_intercept,
//   scale(x) = softplus(scale_weights . x + scale_intercept), floored at 1e-6.
//
// The family is smooth with a strictly positive density, has analytic CDF,
// density, quantile and parameter gradient, and exposes k0 = 2d+2 parameters
// in the flat order [loc_weights, loc_intercept, scale_weights,
// scale_intercept] used by the alignment optimizer.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "stcp/data_model.hpp"

namespace stcp {

struct MeanPredictor {
  std::vector<double> weights;
  double intercept = 0.0;

  double predict(std::span<const double> x) const;
};

struct QuantilePredictor {
  double level = 0.5;
  std::vector<double> weights;
  double intercept = 0.0;

  double predict(std::span<const double> x) const;
};

struct CondCdfParams {
  std::vector<double> loc_weights;
  double loc_intercept = 0.0;
  std::vector<double> scale_weights;
  double scale_intercept = 0.0;

  int dim() const { return static_cast<int>(loc_weights.size()); }
  int param_count() const { return 2 * dim() + 2; } // k0

  double loc(std::span<const double> x) const;
  double scale(std::span<const double> x) const; // >= 1e-6

  std::vector<double> to_flat() const;
  static CondCdfParams from_flat(std::span<const double> flat, int dim);
};

// Scale floor; below this the softplus output is clamped and its parameter
// derivative treated as zero.
inline constexpr double kScaleFloor = 1e-6;

// Least-squares fit with ridge fallback (penalty 1e-8) on singular designs.
MeanPredictor fit_linear_mean(const std::vector<LabeledSample>& data);

// Pinball-loss fit by subgradient descent from a least-squares warm start;
// keeps the best iterate seen.
QuantilePredictor fit_linear_quantile(const std::vector<LabeledSample>& data,
                                      double level, int iters = 2000);

// Gaussian location-scale maximum likelihood by gradient descent with
// backtracking, started from the moment-matched homoscedastic fit
// (least-squares location, constant scale at the residual sd). The returned
// parameters never have higher NLL than that initialization.
CondCdfParams fit_cond_cdf(const std::vector<LabeledSample>& data,
                           int steps = 400, double step_size = 0.05);

double cond_cdf_eval(const CondCdfParams& theta, double s,
                     std::span<const double> x);

// Analytic inverse loc + scale * Phi^{-1}(u); u must lie in (0,1).
double cond_cdf_quantile(const CondCdfParams& theta, double u,
                         std::span<const double> x);

double cond_cdf_density(const CondCdfParams& theta, double s,
                        std::span<const double> x);

// dF(s|x;theta)/dtheta in flat parameter order, length k0.
std::vector<double> cond_cdf_grad(const CondCdfParams& theta, double s,
                                  std::span<const double> x);

// JSON snapshots: {"kind": ..., "dim": ..., "parameters": [...]}.
std::string model_to_json(const MeanPredictor& m);
std::string model_to_json(const QuantilePredictor& m);
std::string model_to_json(const CondCdfParams& m);
MeanPredictor mean_from_json(const std::string& text);
QuantilePredictor quantile_from_json(const std::string& text);
CondCdfParams cond_cdf_from_json(const std::string& text);

} // namespace stcp
