#include "stcp/calib.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stcp/errors.hpp"
#include "stcp/mathutil.hpp"

namespace stcp {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_scores(std::span<const double> scores, const char* who) {
  if (scores.empty()) throw EmptyInput(std::string(who) + ": empty input");
  for (double s : scores)
    if (!std::isfinite(s))
      throw NonFinite(std::string(who) + ": non-finite score");
}
} // namespace

double StepwiseCdf::eval(double s) const {
  auto it = std::upper_bound(sorted_values.begin(), sorted_values.end(), s);
  if (it == sorted_values.begin()) return 0.0;
  return cumulative[static_cast<std::size_t>(it - sorted_values.begin()) - 1];
}

double StepwiseCdf::quantile(double u) const {
  auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
  if (it == cumulative.end()) return sorted_values.back();
  return sorted_values[static_cast<std::size_t>(it - cumulative.begin())];
}

StepwiseCdf empirical_cdf(std::span<const double> scores) {
  check_scores(scores, "empirical_cdf");
  StepwiseCdf cdf;
  cdf.sorted_values.assign(scores.begin(), scores.end());
  std::sort(cdf.sorted_values.begin(), cdf.sorted_values.end());
  const double n = static_cast<double>(scores.size());
  cdf.cumulative.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    cdf.cumulative[i] = static_cast<double>(i + 1) / n;
  return cdf;
}

double conformal_quantile(std::span<const double> scores, double alpha) {
  check_scores(scores, "conformal_quantile");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw InvalidAlpha("conformal_quantile: alpha must lie in (0,1)");
  const std::size_t n = scores.size();
  const auto k = static_cast<std::size_t>(
      std::ceil((1.0 - alpha) * static_cast<double>(n + 1)));
  if (k > n) return kInf;
  std::vector<double> sorted(scores.begin(), scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
  return sorted[k - 1];
}

MixtureCdf::MixtureCdf(const CondCdfParams& theta,
                       const std::vector<std::vector<double>>& covariates) {
  if (covariates.empty()) throw EmptyInput("MixtureCdf: empty covariate set");
  dim_ = theta.dim();
  const std::size_t m = covariates.size();
  mu_.resize(m);
  inv_sig_.resize(m);
  dsig_dt_.resize(m);
  xflat_.resize(m * dim_);
  min_loc_ = kInf;
  max_loc_ = -kInf;
  max_scale_ = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const auto& x = covariates[j];
    double mu = theta.loc_intercept;
    double t = theta.scale_intercept;
    for (int i = 0; i < dim_; ++i) {
      mu += theta.loc_weights[i] * x[i];
      t += theta.scale_weights[i] * x[i];
      xflat_[j * dim_ + i] = x[i];
    }
    double sp = softplus(t);
    bool floored = sp < kScaleFloor;
    double sig = floored ? kScaleFloor : sp;
    mu_[j] = mu;
    inv_sig_[j] = 1.0 / sig;
    dsig_dt_[j] = floored ? 0.0 : sigmoid(t);
    min_loc_ = std::min(min_loc_, mu);
    max_loc_ = std::max(max_loc_, mu);
    max_scale_ = std::max(max_scale_, sig);
  }
}

double MixtureCdf::eval(double s) const {
  double acc = 0.0;
  const std::size_t m = mu_.size();
  for (std::size_t j = 0; j < m; ++j)
    acc += norm_cdf((s - mu_[j]) * inv_sig_[j]);
  return acc / static_cast<double>(m);
}

double MixtureCdf::density(double s) const {
  double acc = 0.0;
  const std::size_t m = mu_.size();
  for (std::size_t j = 0; j < m; ++j)
    acc += norm_pdf((s - mu_[j]) * inv_sig_[j]) * inv_sig_[j];
  return acc / static_cast<double>(m);
}

double MixtureCdf::quantile(double u, double tol, double guess,
                            bool has_guess) const {
  if (!(u > 0.0 && u < 1.0))
    throw InvalidLevel("MixtureCdf::quantile: u must lie in (0,1)");
  const double zu = norm_ppf(u);
  const double pad = (std::abs(zu) + 6.0) * max_scale_;
  double lo = min_loc_ - pad;
  double hi = max_loc_ + pad;
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi))
    throw BracketFailure("MixtureCdf::quantile: non-finite bracket");
  int expansions = 0;
  while (eval(lo) >= u) {
    double w = hi - lo;
    lo -= w;
    if (++expansions > 200)
      throw BracketFailure("MixtureCdf::quantile: lower bracket expansion");
  }
  while (eval(hi) < u) {
    double w = hi - lo;
    hi += w;
    if (++expansions > 200)
      throw BracketFailure("MixtureCdf::quantile: upper bracket expansion");
  }
  double s = has_guess && guess > lo && guess < hi ? guess : 0.5 * (lo + hi);
  for (int it = 0; it < 400; ++it) {
    double f = eval(s) - u;
    if (std::abs(f) <= tol) return s;
    if (f > 0.0)
      hi = s;
    else
      lo = s;
    double d = density(s);
    double next = d > 1e-300 ? s - f / d : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    s = next;
  }
  return s;
}

void MixtureCdf::grad_into(double s, std::span<double> out) const {
  const int d = dim_;
  std::fill(out.begin(), out.end(), 0.0);
  const std::size_t m = mu_.size();
  for (std::size_t j = 0; j < m; ++j) {
    double z = (s - mu_[j]) * inv_sig_[j];
    double phi = norm_pdf(z);
    double dmu = -phi * inv_sig_[j];
    double dt = -phi * z * inv_sig_[j] * dsig_dt_[j];
    const double* x = &xflat_[j * d];
    for (int i = 0; i < d; ++i) {
      out[i] += dmu * x[i];
      out[d + 1 + i] += dt * x[i];
    }
    out[d] += dmu;
    out[2 * d + 1] += dt;
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  for (auto& v : out) v *= inv_m;
}

std::vector<double> MixtureCdf::grad(double s) const {
  std::vector<double> g(2 * dim_ + 2);
  grad_into(s, g);
  return g;
}

double mixture_cdf_eval(const CondCdfParams& theta, double s,
                        const std::vector<std::vector<double>>& unlabeled) {
  return MixtureCdf(theta, unlabeled).eval(s);
}

double mixture_cdf_quantile(const CondCdfParams& theta, double u,
                            const std::vector<std::vector<double>>& unlabeled,
                            double tol) {
  return MixtureCdf(theta, unlabeled).quantile(u, tol);
}

double dp_quantile(const CondCdfParams& theta, const AlphaLevels& levels,
                   const std::vector<std::vector<double>>& unlabeled) {
  const double an = levels.alpha_n();
  if (an <= 0.0) return kInf;
  return mixture_cdf_quantile(theta, 1.0 - an, unlabeled);
}

std::vector<double> debiased_raw(
    const StepwiseCdf& f0, const CondCdfParams& theta,
    const std::vector<std::vector<double>>& labeled_x,
    const std::vector<std::vector<double>>& unlabeled,
    std::span<const double> grid) {
  if (grid.empty()) throw EmptyInput("debiased_raw: empty grid");
  if (labeled_x.empty()) throw EmptyInput("debiased_raw: empty labeled set");
  MixtureCdf f1(theta, unlabeled);
  MixtureCdf f1_labeled(theta, labeled_x);
  std::vector<double> raw(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g)
    raw[g] = f0.eval(grid[g]) + f1.eval(grid[g]) - f1_labeled.eval(grid[g]);
  return raw;
}

StepwiseCdf debiased_cdf(const StepwiseCdf& f0, const CondCdfParams& theta,
                         const std::vector<std::vector<double>>& labeled_x,
                         const std::vector<std::vector<double>>& unlabeled,
                         std::span<const double> grid) {
  std::vector<double> vals = debiased_raw(f0, theta, labeled_x, unlabeled, grid);
  for (auto& v : vals) v = std::clamp(v, 0.0, 1.0);
  vals = pava_nondecreasing(vals);
  double top = vals.back();
  if (top <= 0.0) {
    // Degenerate: all mass at the grid top.
    vals.assign(vals.size(), 0.0);
    vals.back() = 1.0;
  } else if (top < 1.0) {
    for (auto& v : vals) v /= top;
  }
  StepwiseCdf out;
  out.sorted_values.assign(grid.begin(), grid.end());
  out.cumulative = std::move(vals);
  return out;
}

double debiased_quantile(const StepwiseCdf& f_breve,
                         const AlphaLevels& levels) {
  const double an = levels.alpha_n();
  if (an <= 0.0) return kInf;
  return f_breve.quantile(1.0 - an);
}

double oracle_quantile(std::span<const double> target_scores,
                       std::span<const double> extra_labeled_scores,
                       double alpha) {
  std::vector<double> merged(target_scores.begin(), target_scores.end());
  merged.insert(merged.end(), extra_labeled_scores.begin(),
                extra_labeled_scores.end());
  return conformal_quantile(merged, alpha);
}

std::vector<double> debias_grid(
    std::span<const double> target_scores, const CondCdfParams& theta,
    const std::vector<std::vector<double>>& labeled_x,
    const std::vector<std::vector<double>>& unlabeled) {
  check_scores(target_scores, "debias_grid");
  double lo = *std::min_element(target_scores.begin(), target_scores.end());
  double hi = *std::max_element(target_scores.begin(), target_scores.end());
  auto widen = [&](const std::vector<std::vector<double>>& xs) {
    for (const auto& x : xs) {
      double mu = theta.loc(x);
      double sig = theta.scale(x);
      lo = std::min(lo, mu - 8.0 * sig);
      hi = std::max(hi, mu + 8.0 * sig);
    }
  };
  widen(labeled_x);
  widen(unlabeled);
  std::vector<double> grid(target_scores.begin(), target_scores.end());
  const int extra = 512;
  for (int i = 0; i < extra; ++i)
    grid.push_back(lo + (hi - lo) * i / static_cast<double>(extra - 1));
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

} // namespace stcp
