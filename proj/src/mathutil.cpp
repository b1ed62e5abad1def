#include "stcp/mathutil.hpp"

#include <cmath>
#include <cstddef>

namespace stcp {

namespace {
constexpr double kSqrt1_2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
} // namespace

double norm_cdf(double z) { return 0.5 * std::erfc(-z * kSqrt1_2); }

double norm_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

double norm_ppf(double u) {
  // Acklam's rational approximation (central + tail branches).
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (u < plow) {
    double q = std::sqrt(-2.0 * std::log(u));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (u <= 1.0 - plow) {
    double q = u - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - u));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley step against the erfc-based CDF.
  double e = norm_cdf(x) - u;
  double f = norm_pdf(x);
  if (f > 0.0) {
    double w = e / f;
    x -= w / (1.0 + 0.5 * x * w);
  }
  return x;
}

double softplus(double t) {
  if (t > 30.0) return t;
  if (t < -30.0) return std::exp(t);
  return std::log1p(std::exp(t));
}

double softplus_inv(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  double e = std::exp(t);
  return e / (1.0 + e);
}

std::vector<double> pava_nondecreasing(std::span<const double> y) {
  const std::size_t n = y.size();
  std::vector<double> value;
  std::vector<std::size_t> count;
  value.reserve(n);
  count.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    value.push_back(y[i]);
    count.push_back(1);
    // Merge backwards while the monotone constraint is violated.
    while (value.size() > 1 && value[value.size() - 2] > value.back()) {
      double merged = (value[value.size() - 2] * count[count.size() - 2] +
                       value.back() * count.back()) /
                      static_cast<double>(count[count.size() - 2] + count.back());
      count[count.size() - 2] += count.back();
      value[value.size() - 2] = merged;
      value.pop_back();
      count.pop_back();
    }
  }
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t b = 0; b < value.size(); ++b)
    for (std::size_t k = 0; k < count[b]; ++k) out.push_back(value[b]);
  return out;
}

bool cholesky_solve(std::vector<double>& a, std::vector<double>& b, int n,
                    double min_pivot) {
  // In-place LL^T factorization.
  for (int j = 0; j < n; ++j) {
    double diag = a[j * n + j];
    for (int k = 0; k < j; ++k) diag -= a[j * n + k] * a[j * n + k];
    if (diag < min_pivot) return false;
    diag = std::sqrt(diag);
    a[j * n + j] = diag;
    for (int i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (int k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / diag;
    }
  }
  // Forward then back substitution.
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
    b[i] = s / a[i * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k];
    b[i] = s / a[i * n + i];
  }
  return true;
}

} // namespace stcp
