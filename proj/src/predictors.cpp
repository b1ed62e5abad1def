#include "stcp/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "stcp/errors.hpp"
#include "stcp/mathutil.hpp"

namespace stcp {

namespace {

double dot(std::span<const double> w, std::span<const double> x) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
  return s;
}

// Solves the normal equations for the design [x | 1]; ridge fallback keeps
// the fit total on singular designs.
std::vector<double> least_squares(const std::vector<LabeledSample>& data) {
  const int d = static_cast<int>(data.front().x.size());
  const int p = d + 1;
  std::vector<double> ata(p * p, 0.0), atb(p, 0.0);
  for (const auto& s : data) {
    for (int i = 0; i < p; ++i) {
      const double xi = i < d ? s.x[i] : 1.0;
      atb[i] += xi * s.y;
      for (int j = 0; j <= i; ++j) {
        const double xj = j < d ? s.x[j] : 1.0;
        ata[i * p + j] += xi * xj;
      }
    }
  }
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j) ata[i * p + j] = ata[j * p + i];

  std::vector<double> a = ata, b = atb;
  if (!cholesky_solve(a, b, p)) {
    a = ata;
    b = atb;
    for (int i = 0; i < p; ++i) a[i * p + i] += 1e-8;
    if (!cholesky_solve(a, b, p))
      throw DegenerateDesign("least_squares: ridge fallback failed");
  }
  return b;
}

double pinball_loss(const std::vector<LabeledSample>& data,
                    std::span<const double> w, double b, double level) {
  double loss = 0.0;
  for (const auto& s : data) {
    double r = s.y - (dot(w, s.x) + b);
    loss += r >= 0.0 ? level * r : (level - 1.0) * r;
  }
  return loss / static_cast<double>(data.size());
}

// Mean negative log-likelihood of the Gaussian location-scale family
// (additive constant dropped) and its flat-parameter gradient.
struct NllEval {
  double value = 0.0;
  std::vector<double> grad;
};

NllEval nll_and_grad(std::span<const double> flat,
                     const std::vector<LabeledSample>& data, int d,
                     bool want_grad) {
  const int k0 = 2 * d + 2;
  NllEval out;
  if (want_grad) out.grad.assign(k0, 0.0);
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (const auto& smp : data) {
    double mu = flat[d];
    double t = flat[2 * d + 1];
    for (int i = 0; i < d; ++i) {
      mu += flat[i] * smp.x[i];
      t += flat[d + 1 + i] * smp.x[i];
    }
    double sp = softplus(t);
    bool floored = sp < kScaleFloor;
    double sig = floored ? kScaleFloor : sp;
    double z = (smp.y - mu) / sig;
    out.value += (std::log(sig) + 0.5 * z * z) * inv_n;
    if (want_grad) {
      double dmu = -z / sig * inv_n;
      double dsig = (1.0 - z * z) / sig * inv_n;
      double dt = floored ? 0.0 : dsig * sigmoid(t);
      for (int i = 0; i < d; ++i) {
        out.grad[i] += dmu * smp.x[i];
        out.grad[d + 1 + i] += dt * smp.x[i];
      }
      out.grad[d] += dmu;
      out.grad[2 * d + 1] += dt;
    }
  }
  return out;
}

nlohmann::json params_json(const std::string& kind, int dim,
                           const std::vector<double>& flat) {
  return nlohmann::json{{"kind", kind}, {"dim", dim}, {"parameters", flat}};
}

} // namespace

double MeanPredictor::predict(std::span<const double> x) const {
  return dot(weights, x) + intercept;
}

double QuantilePredictor::predict(std::span<const double> x) const {
  return dot(weights, x) + intercept;
}

double CondCdfParams::loc(std::span<const double> x) const {
  return dot(loc_weights, x) + loc_intercept;
}

double CondCdfParams::scale(std::span<const double> x) const {
  return std::max(softplus(dot(scale_weights, x) + scale_intercept),
                  kScaleFloor);
}

std::vector<double> CondCdfParams::to_flat() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  flat.insert(flat.end(), loc_weights.begin(), loc_weights.end());
  flat.push_back(loc_intercept);
  flat.insert(flat.end(), scale_weights.begin(), scale_weights.end());
  flat.push_back(scale_intercept);
  return flat;
}

CondCdfParams CondCdfParams::from_flat(std::span<const double> flat, int dim) {
  CondCdfParams p;
  p.loc_weights.assign(flat.begin(), flat.begin() + dim);
  p.loc_intercept = flat[dim];
  p.scale_weights.assign(flat.begin() + dim + 1, flat.begin() + 2 * dim + 1);
  p.scale_intercept = flat[2 * dim + 1];
  return p;
}

MeanPredictor fit_linear_mean(const std::vector<LabeledSample>& data) {
  if (data.size() < 2)
    throw DegenerateDesign("fit_linear_mean: needs at least 2 samples");
  auto coef = least_squares(data);
  MeanPredictor m;
  m.intercept = coef.back();
  coef.pop_back();
  m.weights = std::move(coef);
  return m;
}

QuantilePredictor fit_linear_quantile(const std::vector<LabeledSample>& data,
                                      double level, int iters) {
  if (!(level > 0.0 && level < 1.0))
    throw InvalidLevel("fit_linear_quantile: level must lie in (0,1)");
  if (data.size() < 2)
    throw DegenerateDesign("fit_linear_quantile: needs at least 2 samples");
  const int d = static_cast<int>(data.front().x.size());
  const std::size_t n = data.size();

  // Warm start: least-squares slope, intercept shifted to the residual
  // quantile at the requested level.
  auto coef = least_squares(data);
  std::vector<double> w(coef.begin(), coef.begin() + d);
  double b = coef[d];
  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i)
    resid[i] = data[i].y - (dot(w, data[i].x) + b);
  std::vector<double> sorted = resid;
  std::sort(sorted.begin(), sorted.end());
  std::size_t k = static_cast<std::size_t>(
      std::clamp<long long>(std::llround(std::ceil(level * n)), 1,
                            static_cast<long long>(n)));
  b += sorted[k - 1];

  double sd = 0.0;
  for (double r : resid) sd += r * r;
  sd = std::sqrt(sd / static_cast<double>(n));
  const double step0 = 0.5 * std::max(sd, 1e-8);

  std::vector<double> best_w = w;
  double best_b = b;
  double best_loss = pinball_loss(data, w, b, level);

  std::vector<double> g(d + 1);
  for (int t = 0; t < iters; ++t) {
    std::fill(g.begin(), g.end(), 0.0);
    for (const auto& s : data) {
      double r = s.y - (dot(w, s.x) + b);
      double c = r > 0.0 ? -level : (r < 0.0 ? 1.0 - level : 0.0);
      for (int i = 0; i < d; ++i) g[i] += c * s.x[i];
      g[d] += c;
    }
    const double step =
        step0 / (static_cast<double>(n) * std::sqrt(1.0 + t));
    for (int i = 0; i < d; ++i) w[i] -= step * g[i];
    b -= step * g[d];
    double loss = pinball_loss(data, w, b, level);
    if (loss < best_loss) {
      best_loss = loss;
      best_w = w;
      best_b = b;
    }
  }
  QuantilePredictor q;
  q.level = level;
  q.weights = std::move(best_w);
  q.intercept = best_b;
  return q;
}

CondCdfParams fit_cond_cdf(const std::vector<LabeledSample>& data, int steps,
                           double step_size) {
  if (data.size() < 2)
    throw DegenerateDesign("fit_cond_cdf: needs at least 2 samples");
  const int d = static_cast<int>(data.front().x.size());
  const int k0 = 2 * d + 2;

  // Moment-matched homoscedastic start.
  auto coef = least_squares(data);
  std::vector<double> flat(k0, 0.0);
  for (int i = 0; i <= d; ++i) flat[i] = coef[i];
  double ss = 0.0;
  for (const auto& s : data) {
    double r = s.y - (dot(std::span(coef).first(d), s.x) + coef[d]);
    ss += r * r;
  }
  double sd = std::sqrt(ss / static_cast<double>(data.size()));
  flat[2 * d + 1] = softplus_inv(std::max(sd, kScaleFloor));

  double f = nll_and_grad(flat, data, d, false).value;
  double step = step_size;
  std::vector<double> trial(k0);
  for (int it = 0; it < steps; ++it) {
    auto eval = nll_and_grad(flat, data, d, true);
    double gnorm = 0.0;
    for (double g : eval.grad) gnorm += g * g;
    if (std::sqrt(gnorm) < 1e-9) break;
    bool accepted = false;
    for (int h = 0; h < 60; ++h) {
      for (int i = 0; i < k0; ++i) trial[i] = flat[i] - step * eval.grad[i];
      for (double v : trial)
        if (!std::isfinite(v))
          throw NonFinite("fit_cond_cdf: non-finite parameter at step " +
                          std::to_string(it));
      double f2 = nll_and_grad(trial, data, d, false).value;
      if (f2 <= f) {
        flat = trial;
        f = f2;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    step = std::min(step * 2.0, step_size);
  }
  return CondCdfParams::from_flat(flat, d);
}

double cond_cdf_eval(const CondCdfParams& theta, double s,
                     std::span<const double> x) {
  return norm_cdf((s - theta.loc(x)) / theta.scale(x));
}

double cond_cdf_quantile(const CondCdfParams& theta, double u,
                         std::span<const double> x) {
  if (!(u > 0.0 && u < 1.0))
    throw InvalidLevel("cond_cdf_quantile: u must lie in (0,1)");
  return theta.loc(x) + theta.scale(x) * norm_ppf(u);
}

double cond_cdf_density(const CondCdfParams& theta, double s,
                        std::span<const double> x) {
  double sig = theta.scale(x);
  return norm_pdf((s - theta.loc(x)) / sig) / sig;
}

std::vector<double> cond_cdf_grad(const CondCdfParams& theta, double s,
                                  std::span<const double> x) {
  const int d = theta.dim();
  std::vector<double> g(theta.param_count(), 0.0);
  double t = dot(theta.scale_weights, x) + theta.scale_intercept;
  double sp = softplus(t);
  bool floored = sp < kScaleFloor;
  double sig = floored ? kScaleFloor : sp;
  double z = (s - theta.loc(x)) / sig;
  double phi = norm_pdf(z);
  double dmu = -phi / sig;
  double dt = floored ? 0.0 : -phi * z / sig * sigmoid(t);
  for (int i = 0; i < d; ++i) {
    g[i] = dmu * x[i];
    g[d + 1 + i] = dt * x[i];
  }
  g[d] = dmu;
  g[2 * d + 1] = dt;
  return g;
}

std::string model_to_json(const MeanPredictor& m) {
  std::vector<double> flat = m.weights;
  flat.push_back(m.intercept);
  return params_json("mean", static_cast<int>(m.weights.size()), flat).dump();
}

std::string model_to_json(const QuantilePredictor& m) {
  std::vector<double> flat;
  flat.push_back(m.level);
  flat.insert(flat.end(), m.weights.begin(), m.weights.end());
  flat.push_back(m.intercept);
  return params_json("quantile", static_cast<int>(m.weights.size()), flat)
      .dump();
}

std::string model_to_json(const CondCdfParams& m) {
  return params_json("cond_cdf", m.dim(), m.to_flat()).dump();
}

MeanPredictor mean_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  auto flat = j.at("parameters").get<std::vector<double>>();
  int d = j.at("dim").get<int>();
  MeanPredictor m;
  m.weights.assign(flat.begin(), flat.begin() + d);
  m.intercept = flat[d];
  return m;
}

QuantilePredictor quantile_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  auto flat = j.at("parameters").get<std::vector<double>>();
  int d = j.at("dim").get<int>();
  QuantilePredictor q;
  q.level = flat[0];
  q.weights.assign(flat.begin() + 1, flat.begin() + 1 + d);
  q.intercept = flat[d + 1];
  return q;
}

CondCdfParams cond_cdf_from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  auto flat = j.at("parameters").get<std::vector<double>>();
  return CondCdfParams::from_flat(flat, j.at("dim").get<int>());
}

} // namespace stcp
