#include "stcp/scores.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stcp {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
// Clamp applied to GLCP thresholds before quantile inversion; the [0,1]
// score saturates near 1 where the Gaussian V-model has unbounded support.
constexpr double kGlcpEps = 1e-9;
} // namespace

double score(const ScoreModel& model, std::span<const double> x, double y) {
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ResidualScore>) {
          return std::abs(y - m.mean.predict(x));
        } else if constexpr (std::is_same_v<T, GlcpScore>) {
          return cond_cdf_eval(m.v_cdf, std::abs(y - m.mean.predict(x)), x);
        } else {
          return std::max(m.lo.predict(x) - y, y - m.hi.predict(x));
        }
      },
      model);
}

bool set_contains(const ScoreModel& model, double q_hat,
                  std::span<const double> x, double y) {
  if (q_hat == kInf) return true;
  return score(model, x, y) <= q_hat;
}

double set_size(const ScoreModel& model, double q_hat,
                std::span<const double> x) {
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ResidualScore>) {
          if (q_hat == kInf) return kInf;
          return 2.0 * std::max(q_hat, 0.0);
        } else if constexpr (std::is_same_v<T, GlcpScore>) {
          if (q_hat >= 1.0) return kInf;
          if (q_hat <= 0.0) return 0.0;
          double u = std::clamp(q_hat, kGlcpEps, 1.0 - kGlcpEps);
          // A negative inverse means the interval around mu(x) is empty.
          return 2.0 * std::max(cond_cdf_quantile(m.v_cdf, u, x), 0.0);
        } else {
          if (q_hat == kInf) return kInf;
          return std::max(m.hi.predict(x) - m.lo.predict(x) + 2.0 * q_hat,
                          0.0);
        }
      },
      model);
}

} // namespace stcp
