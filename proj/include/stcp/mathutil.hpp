// Small numeric kernels used throughout: standard-normal CDF/PDF/inverse,
// overflow-safe softplus, least-squares pool-adjacent-violators, and a dense
// symmetric solve for the tiny normal-equation systems in the predictors.

#pragma once

#include <span>
#include <vector>

namespace stcp {

// Phi(z) via erfc; absolute error is that of the libm erfc (well below 1e-12).
double norm_cdf(double z);

// Standard normal density.
double norm_pdf(double z);

// Inverse of norm_cdf on (0,1). Acklam's rational approximation polished with
// one Halley step, giving |norm_cdf(norm_ppf(u)) - u| at machine-level error.
double norm_ppf(double u);

// log(1 + e^t) without overflow for large |t|.
double softplus(double t);

// Inverse of softplus for y > 0.
double softplus_inv(double y);

// Logistic sigmoid, the derivative of softplus.
double sigmoid(double t);

// Least-squares isotonic (non-decreasing) fit of y by pool-adjacent-violators.
std::vector<double> pava_nondecreasing(std::span<const double> y);

// Solves A w = b in place for a dense symmetric positive-definite A (row-major,
// n x n) via Cholesky. Returns false if a pivot falls below `min_pivot`.
bool cholesky_solve(std::vector<double>& a, std::vector<double>& b, int n,
                    double min_pivot = 1e-12);

} // namespace stcp
