// Non-conformity scores for the three base methods, plus the two set
// operations every calibration rule needs: membership at a threshold and the
// Lebesgue size of the resulting set. Sets are closed: y belongs iff
// score(x,y) <= q_hat.
//
//   Residual  S(x,y) = |y - mu(x)|                   -> interval of size 2*q
//   Glcp      S(x,y) = F_V(|y - mu(x)| | x)          -> size 2*Q(q; F_V(.|x))
//   Cqr       S(x,y) = max(lo(x) - y, y - hi(x))     -> [lo-q, hi+q]

#pragma once

#include <span>
#include <variant>

#include "stcp/predictors.hpp"

namespace stcp {

struct ResidualScore {
  MeanPredictor mean;
};

struct GlcpScore {
  MeanPredictor mean;
  CondCdfParams v_cdf; // conditional CDF of V = |y - mu(x)| given x
};

struct CqrScore {
  QuantilePredictor lo;
  QuantilePredictor hi; // requires lo.level < hi.level
};

using ScoreModel = std::variant<ResidualScore, GlcpScore, CqrScore>;

double score(const ScoreModel& model, std::span<const double> x, double y);

// true iff score(model, x, y) <= q_hat; q_hat = +inf always contains.
bool set_contains(const ScoreModel& model, double q_hat,
                  std::span<const double> x, double y);

// Lebesgue measure of {y : score(x,y) <= q_hat}; may be 0 or +inf.
double set_size(const ScoreModel& model, double q_hat,
                std::span<const double> x);

} // namespace stcp
