#include "stcp/simlab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "stcp/errors.hpp"
#include "stcp/mathutil.hpp"

namespace stcp {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}
} // namespace

std::string to_string(SigmaFamily f) {
  switch (f) {
    case SigmaFamily::LogAbs: return "logabs";
    case SigmaFamily::Quad: return "quad";
    case SigmaFamily::Softplus: return "softplus";
  }
  return "?";
}

std::string to_string(ScoreType s) {
  switch (s) {
    case ScoreType::Residual: return "residual";
    case ScoreType::Glcp: return "glcp";
    case ScoreType::Cqr: return "cqr";
  }
  return "?";
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Base: return "base";
    case Method::Dp: return "dp";
    case Method::Ppi: return "ppi";
    case Method::Sdcp: return "sdcp";
    case Method::Stcp: return "stcp";
    case Method::StcpSel: return "stcp_sel";
    case Method::Oracle: return "oracle";
  }
  return "?";
}

double SyntheticSetting::target_mean_shift() const {
  return 1.0 / (2.0 * std::sqrt(static_cast<double>(d)));
}

double sigma(SigmaFamily family, std::span<const double> x, double gamma) {
  double acc = 0.0;
  switch (family) {
    case SigmaFamily::Quad:
      for (double t : x) acc += t * t;
      break;
    case SigmaFamily::Softplus:
      for (double t : x) acc += softplus(t);
      break;
    case SigmaFamily::LogAbs:
      for (double t : x) acc += std::log1p(std::abs(t));
      break;
  }
  return std::sqrt(gamma) * acc / std::sqrt(static_cast<double>(x.size()));
}

namespace {

LabeledSample draw_labeled(const SyntheticSetting& s, double mean_shift,
                           double slope, double gamma, RngStream& stream) {
  LabeledSample out;
  out.x.resize(s.d);
  double xsum = 0.0;
  for (int i = 0; i < s.d; ++i) {
    out.x[i] = stream.normal() + mean_shift;
    xsum += out.x[i];
  }
  out.y = slope * xsum + sigma(s.family, out.x, gamma) * stream.normal();
  return out;
}

} // namespace

GeneratedData gen_bundle(const SyntheticSetting& setting, int n, int m, int N,
                         int n_test, int oracle_extra, RngStream& stream) {
  GeneratedData out;
  out.bundle.dim = setting.d;
  const double shift = setting.target_mean_shift();
  out.bundle.source_labeled.reserve(N);
  for (int i = 0; i < N; ++i)
    out.bundle.source_labeled.push_back(draw_labeled(
        setting, 0.0, setting.slope_source(), setting.gamma_s, stream));
  out.bundle.target_labeled.reserve(n);
  for (int i = 0; i < n; ++i)
    out.bundle.target_labeled.push_back(draw_labeled(
        setting, shift, setting.slope_target(), setting.gamma_t, stream));
  out.bundle.target_unlabeled.reserve(m);
  for (int j = 0; j < m; ++j) {
    std::vector<double> x(setting.d);
    for (int i = 0; i < setting.d; ++i) x[i] = stream.normal() + shift;
    out.bundle.target_unlabeled.push_back(std::move(x));
  }
  out.bundle.test.reserve(n_test);
  for (int i = 0; i < n_test; ++i)
    out.bundle.test.push_back(draw_labeled(
        setting, shift, setting.slope_target(), setting.gamma_t, stream));
  out.oracle_extra.reserve(oracle_extra);
  for (int i = 0; i < oracle_extra; ++i)
    out.oracle_extra.push_back(draw_labeled(
        setting, shift, setting.slope_target(), setting.gamma_t, stream));
  out.bundle.validate();
  return out;
}

void ExperimentConfig::validate() const {
  if (setting.d < 1) throw ConfigError("/setting/d: must be >= 1");
  if (setting.gamma_s <= 0.0) throw ConfigError("/setting/gamma_s: must be > 0");
  if (setting.gamma_t <= 0.0) throw ConfigError("/setting/gamma_t: must be > 0");
  if (n < 1) throw ConfigError("/n: must be >= 1");
  if (m < 1) throw ConfigError("/m: must be >= 1");
  if (N < 1) throw ConfigError("/N: must be >= 1");
  if (n_test < 1) throw ConfigError("/n_test: must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("/alpha: must lie in (0,1)");
  if (alpha_tol <= 0.0) throw ConfigError("/alpha_tol: must be > 0");
  if (repeats < 1) throw ConfigError("/repeats: must be >= 1");
  if (methods.empty()) throw ConfigError("/methods: must be nonempty");
  if (oracle_extra < 1) throw ConfigError("/oracle_extra: must be >= 1");
  if (n_partitions < 1) throw ConfigError("/n_partitions: must be >= 1");
  if (align.grid_size < 2) throw ConfigError("/align/grid_size: must be >= 2");
  if (align.lambda < 0.0) throw ConfigError("/align/lambda: must be >= 0");
  if (align.step_size <= 0.0) throw ConfigError("/align/step_size: must be > 0");
  if (align.max_iters < 1) throw ConfigError("/align/max_iters: must be >= 1");
  const bool sel = std::find(methods.begin(), methods.end(),
                             Method::StcpSel) != methods.end();
  if (sel) {
    if (lambda_grid.empty() || lambda_grid.front() != 0.0)
      throw ConfigError("/lambda_grid: must start at 0");
    for (std::size_t i = 0; i + 1 < lambda_grid.size(); ++i)
      if (!(lambda_grid[i] < lambda_grid[i + 1]))
        throw ConfigError("/lambda_grid: must be strictly ascending");
  }
}

double metric_std(std::span<const double> values) {
  if (values.size() < 2)
    throw TooFewValues("metric_std: needs at least 2 values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double metric_improvement_rel(double a1, double a_base) {
  if (!(a_base > 0.0))
    throw NonPositiveBase("metric_improvement_rel: base Std must be > 0");
  return (1.0 - a1 / a_base) * 100.0;
}

double metric_improvement_oracle(double a1, double a0, double a_ref) {
  if (a_ref == a0)
    throw DegenerateReference("metric_improvement_oracle: a_ref equals a0");
  return (1.0 - (a1 - a0) / (a_ref - a0)) * 100.0;
}

std::optional<double> select_reference_std(
    const std::vector<MethodAggregate>& aggregates, double alpha, int n) {
  const double lo = 1.0 - alpha - 0.01;
  const double hi = 1.0 - alpha + 1.0 / (n + 1);
  std::optional<double> best;
  for (const auto& a : aggregates) {
    if (a.method != Method::Base && a.method != Method::Sdcp &&
        a.method != Method::Ppi)
      continue;
    if (a.std_infinite) continue;
    if (a.mean_marginal < lo || a.mean_marginal > hi) continue;
    if (!best || a.std_size < *best) best = a.std_size;
  }
  return best;
}

KmeansResult kmeans(const std::vector<std::vector<double>>& points, int k,
                    RngStream& stream, int iters) {
  if (k < 1 || static_cast<std::size_t>(k) > points.size())
    throw TooFewPoints("kmeans: need at least k points");
  const std::size_t npts = points.size();
  KmeansResult res;
  res.centroids.reserve(k);

  // k-means++ seeding.
  res.centroids.push_back(points[stream.uniform_index(npts)]);
  std::vector<double> d2(npts);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < npts; ++i) {
      double best = kInf;
      for (const auto& ctr : res.centroids)
        best = std::min(best, sq_dist(points[i], ctr));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = stream.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < npts; ++i) {
        acc += d2[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = stream.uniform_index(npts);
    }
    res.centroids.push_back(points[pick]);
  }

  res.assignment.assign(npts, -1);
  const std::size_t dim = points.front().size();
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < npts; ++i) {
      int best = nearest_centroid(res.centroids, points[i]);
      if (best != res.assignment[i]) {
        res.assignment[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<int> counts(k, 0);
    for (std::size_t i = 0; i < npts; ++i) {
      counts[res.assignment[i]]++;
      for (std::size_t j = 0; j < dim; ++j)
        sums[res.assignment[i]][j] += points[i][j];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster at the point farthest from its centroid.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < npts; ++i) {
          double dd = sq_dist(points[i], res.centroids[res.assignment[i]]);
          if (dd > far_d) {
            far_d = dd;
            far = i;
          }
        }
        res.centroids[c] = points[far];
      } else {
        for (std::size_t j = 0; j < dim; ++j)
          res.centroids[c][j] = sums[c][j] / counts[c];
      }
    }
  }
  res.inertia = 0.0;
  for (std::size_t i = 0; i < npts; ++i)
    res.inertia += sq_dist(points[i], res.centroids[res.assignment[i]]);
  return res;
}

int nearest_centroid(const std::vector<std::vector<double>>& centroids,
                     std::span<const double> x) {
  int best = 0;
  double best_d = kInf;
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    double d = sq_dist(x, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

double metric_miscoverage(const std::vector<PartitionRecord>& test_records,
                          double alpha, int n_partitions) {
  std::vector<int> count(n_partitions, 0), covered(n_partitions, 0);
  for (const auto& r : test_records) {
    count[r.partition_id]++;
    if (r.covered) covered[r.partition_id]++;
  }
  const double total = static_cast<double>(test_records.size());
  double out = 0.0;
  for (int i = 0; i < n_partitions; ++i) {
    if (count[i] == 0) continue; // empty partitions carry zero weight
    double w = count[i] / total;
    double p = static_cast<double>(covered[i]) / count[i];
    out += w * std::abs(p - (1.0 - alpha));
  }
  return out;
}

namespace {

ScoreModel make_score_model(const ExperimentConfig& cfg,
                            const std::vector<LabeledSample>& src) {
  switch (cfg.score_type) {
    case ScoreType::Residual:
      return ResidualScore{fit_linear_mean(src)};
    case ScoreType::Glcp: {
      MeanPredictor mu = fit_linear_mean(src);
      std::vector<LabeledSample> vpairs(src.size());
      for (std::size_t i = 0; i < src.size(); ++i)
        vpairs[i] = {src[i].x, std::abs(src[i].y - mu.predict(src[i].x))};
      return GlcpScore{std::move(mu), fit_cond_cdf(vpairs)};
    }
    case ScoreType::Cqr:
    default:
      return CqrScore{fit_linear_quantile(src, cfg.alpha / 2.0),
                      fit_linear_quantile(src, 1.0 - cfg.alpha / 2.0)};
  }
}

// Conditional CDF of the score given x, fitted to (x, S(x,y)) pairs.
CondCdfParams fit_score_cdf(const ScoreModel& model,
                            const std::vector<LabeledSample>& samples) {
  std::vector<LabeledSample> pairs(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    pairs[i] = {samples[i].x, score(model, samples[i].x, samples[i].y)};
  return fit_cond_cdf(pairs);
}

std::vector<RepeatRecord> run_one_repeat(const ExperimentConfig& cfg,
                                         int repeat) {
  RngStream stream(SeedSpec{cfg.base_seed,
                            static_cast<std::uint32_t>(repeat)});
  GeneratedData data = gen_bundle(cfg.setting, cfg.n, cfg.m, cfg.N,
                                  cfg.n_test, cfg.oracle_extra, stream);
  const auto& src = data.bundle.source_labeled;
  const auto& calib = data.bundle.target_labeled;
  const auto& unlabeled = data.bundle.target_unlabeled;
  const auto& test = data.bundle.test;

  auto needs = [&](Method m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) !=
           cfg.methods.end();
  };

  ScoreModel model = make_score_model(cfg, src);

  std::vector<double> cal_scores(calib.size());
  for (std::size_t i = 0; i < calib.size(); ++i)
    cal_scores[i] = score(model, calib[i].x, calib[i].y);

  std::vector<std::vector<double>> calib_x(calib.size());
  for (std::size_t i = 0; i < calib.size(); ++i) calib_x[i] = calib[i].x;

  const bool needs_theta_hat = needs(Method::Dp) || needs(Method::Ppi) ||
                               needs(Method::Stcp) || needs(Method::StcpSel);
  CondCdfParams theta_hat;
  if (needs_theta_hat) {
    theta_hat = fit_score_cdf(model, src);
    theta_hat.loc_intercept += cfg.theta_loc_shift;
  }
  CondCdfParams theta_sdcp;
  if (needs(Method::Sdcp)) {
    std::vector<LabeledSample> tpairs(calib.size());
    for (std::size_t i = 0; i < calib.size(); ++i)
      tpairs[i] = {calib[i].x, cal_scores[i]};
    theta_sdcp = fit_cond_cdf(tpairs);
  }

  // Partition centroids for the miscoverage metric, fit once per repeat on
  // the target covariates (calibration plus unlabeled).
  std::vector<std::vector<double>> target_x = calib_x;
  target_x.insert(target_x.end(), unlabeled.begin(), unlabeled.end());
  const int k = std::min<int>(cfg.n_partitions,
                              static_cast<int>(target_x.size()));
  KmeansResult km = kmeans(target_x, k, stream);

  const AlphaLevels levels{cfg.alpha, cfg.n};
  const double alpha_n = levels.alpha_n();

  auto threshold_for = [&](Method method) -> RepeatRecord {
    RepeatRecord rec;
    rec.repeat_index = repeat;
    rec.method = method;
    switch (method) {
      case Method::Base:
        rec.q_hat = conformal_quantile(cal_scores, cfg.alpha);
        break;
      case Method::Oracle: {
        std::vector<double> extra(data.oracle_extra.size());
        for (std::size_t i = 0; i < extra.size(); ++i)
          extra[i] = score(model, data.oracle_extra[i].x,
                           data.oracle_extra[i].y);
        rec.q_hat = oracle_quantile(cal_scores, extra, cfg.alpha);
        break;
      }
      case Method::Dp:
        rec.q_hat = dp_quantile(theta_hat, levels, unlabeled);
        break;
      case Method::Ppi:
      case Method::Sdcp: {
        if (alpha_n <= 0.0) {
          rec.q_hat = kInf;
          break;
        }
        const CondCdfParams& th =
            method == Method::Ppi ? theta_hat : theta_sdcp;
        StepwiseCdf f0 = empirical_cdf(cal_scores);
        auto grid = debias_grid(cal_scores, th, calib_x, unlabeled);
        StepwiseCdf fb = debiased_cdf(f0, th, calib_x, unlabeled, grid);
        rec.q_hat = debiased_quantile(fb, levels);
        break;
      }
      case Method::Stcp: {
        if (alpha_n <= 0.0) {
          rec.q_hat = kInf;
          break;
        }
        auto res = align(theta_hat, cfg.align.lambda, cal_scores, unlabeled,
                         alpha_n, cfg.align);
        rec.q_hat = stcp_quantile(res.theta, levels, unlabeled);
        rec.lambda_used = cfg.align.lambda;
        break;
      }
      case Method::StcpSel: {
        LambdaSelectionConfig sel;
        sel.lambda_grid = cfg.lambda_grid;
        sel.alpha_tol = cfg.alpha_tol;
        sel.on_empty = LambdaSelectionConfig::OnEmpty::clamp_to_band;
        auto out = select_lambda(theta_hat, sel, levels, cal_scores,
                                 unlabeled, cfg.align);
        rec.q_hat = out.q_st_sel;
        rec.lambda_used = out.lambda_hat;
        break;
      }
    }
    return rec;
  };

  std::vector<RepeatRecord> records;
  records.reserve(cfg.methods.size());
  for (Method method : cfg.methods) {
    RepeatRecord rec;
    try {
      rec = threshold_for(method);
    } catch (const StcpError& e) {
      throw StcpError("repeat " + std::to_string(repeat) + ", method " +
                      to_string(method) + ": " + e.what());
    }
    std::vector<PartitionRecord> parts(test.size());
    double covered = 0.0, size_sum = 0.0;
    bool size_inf = false;
    for (std::size_t i = 0; i < test.size(); ++i) {
      bool in = set_contains(model, rec.q_hat, test[i].x, test[i].y);
      covered += in ? 1.0 : 0.0;
      double sz = set_size(model, rec.q_hat, test[i].x);
      if (std::isinf(sz))
        size_inf = true;
      else
        size_sum += sz;
      parts[i] = {nearest_centroid(km.centroids, test[i].x), in};
    }
    rec.marginal_coverage = covered / static_cast<double>(test.size());
    rec.mean_size =
        size_inf ? kInf : size_sum / static_cast<double>(test.size());
    rec.miscoverage = metric_miscoverage(parts, cfg.alpha, k);
    records.push_back(std::move(rec));
  }
  return records;
}

} // namespace

std::vector<MethodAggregate> aggregate_records(
    const std::vector<RepeatRecord>& records,
    const std::vector<Method>& methods, double alpha, int n) {
  std::vector<MethodAggregate> aggs;
  for (Method method : methods) {
    MethodAggregate a;
    a.method = method;
    std::vector<double> sizes;
    double marg = 0.0, mis = 0.0, size_sum = 0.0;
    int count = 0;
    bool any_inf = false;
    for (const auto& r : records) {
      if (r.method != method) continue;
      ++count;
      marg += r.marginal_coverage;
      mis += r.miscoverage;
      if (std::isinf(r.mean_size))
        any_inf = true;
      else {
        sizes.push_back(r.mean_size);
        size_sum += r.mean_size;
      }
    }
    if (count == 0) continue;
    a.mean_marginal = marg / count;
    a.mean_miscoverage = mis / count;
    a.size_infinite = any_inf;
    a.mean_size = any_inf ? kInf : size_sum / count;
    // Any infinite repeat makes the spread infinite rather than dropped.
    a.std_infinite = any_inf;
    a.std_size = any_inf ? kInf
                 : sizes.size() >= 2 ? metric_std(sizes)
                                     : 0.0;
    aggs.push_back(a);
  }
  // Relative and oracle-referenced improvements for the StCP variants.
  const MethodAggregate* base = nullptr;
  const MethodAggregate* oracle = nullptr;
  for (const auto& a : aggs) {
    if (a.method == Method::Base) base = &a;
    if (a.method == Method::Oracle) oracle = &a;
  }
  auto reference = select_reference_std(aggs, alpha, n);
  for (auto& a : aggs) {
    if (a.method != Method::Stcp && a.method != Method::StcpSel) continue;
    if (a.std_infinite) continue;
    if (base != nullptr && !base->std_infinite && base->std_size > 0.0)
      a.improvement_rel = metric_improvement_rel(a.std_size, base->std_size);
    if (oracle != nullptr && !oracle->std_infinite && reference &&
        *reference != oracle->std_size)
      a.improvement_oracle = metric_improvement_oracle(
          a.std_size, oracle->std_size, *reference);
  }
  return aggs;
}

RepeatInputs prepare_repeat_inputs(const ExperimentConfig& config,
                                   int repeat) {
  RngStream stream(SeedSpec{config.base_seed,
                            static_cast<std::uint32_t>(repeat)});
  RepeatInputs out{gen_bundle(config.setting, config.n, config.m, config.N,
                              config.n_test, config.oracle_extra, stream),
                   {}, {}, {}};
  out.model = make_score_model(config, out.data.bundle.source_labeled);
  const auto& calib = out.data.bundle.target_labeled;
  out.calibration_scores.resize(calib.size());
  for (std::size_t i = 0; i < calib.size(); ++i)
    out.calibration_scores[i] = score(out.model, calib[i].x, calib[i].y);
  out.theta_hat = fit_score_cdf(out.model, out.data.bundle.source_labeled);
  out.theta_hat.loc_intercept += config.theta_loc_shift;
  return out;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const int repeats = config.repeats;
  std::vector<std::vector<RepeatRecord>> slots(repeats);

  unsigned hw = std::thread::hardware_concurrency();
  int threads = config.threads > 0 ? config.threads
                                   : static_cast<int>(hw > 0 ? hw : 1);
  threads = std::min(threads, repeats);

  if (threads <= 1) {
    for (int r = 0; r < repeats; ++r) slots[r] = run_one_repeat(config, r);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&]() {
      for (;;) {
        int r = next.fetch_add(1);
        if (r >= repeats) return;
        try {
          slots[r] = run_one_repeat(config, r);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }

  ExperimentReport report;
  report.records.reserve(static_cast<std::size_t>(repeats) *
                         config.methods.size());
  for (auto& slot : slots)
    for (auto& rec : slot) report.records.push_back(std::move(rec));
  report.aggregates = aggregate_records(report.records, config.methods,
                                        config.alpha, config.n);
  return report;
}

} // namespace stcp
