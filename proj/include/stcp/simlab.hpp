// Synthetic transfer-learning generators, the experiment runner over
// methods x repeats, and the evaluation metrics (Std across repeats, marginal
// coverage, mean set size, k-means partitioned conditional miscoverage).
//
// Covariate model: source X' ~ N(0, I_d), target X ~ N(mu_t, I_d) with
// mu_t = 1_d / (2 sqrt(d)); labels Y' = (3/d) sum X'_j + eps' and
// Y = (2/d) sum X_j + eps, noise N(0, sigma^2(x; gamma)) with
// sigma(x; gamma) = sqrt(gamma) * sum_j g(x_j) / sqrt(d) and g chosen by the
// family (Quad t^2, Softplus log(1+e^t), LogAbs log(1+|t|)).

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stcp/align.hpp"
#include "stcp/data_model.hpp"
#include "stcp/scores.hpp"

namespace stcp {

enum class SigmaFamily { LogAbs, Quad, Softplus };
enum class ScoreType { Residual, Glcp, Cqr };
enum class Method { Base, Dp, Ppi, Sdcp, Stcp, StcpSel, Oracle };

std::string to_string(SigmaFamily f);
std::string to_string(ScoreType s);
std::string to_string(Method m);

struct SyntheticSetting {
  SigmaFamily family = SigmaFamily::LogAbs;
  int d = 5;
  double gamma_s = 1.2;
  double gamma_t = 1.0;

  double slope_source() const { return 3.0 / d; }
  double slope_target() const { return 2.0 / d; }
  double target_mean_shift() const; // per-coordinate entry of mu_t
};

double sigma(SigmaFamily family, std::span<const double> x, double gamma);

struct GeneratedData {
  DataBundle bundle;
  std::vector<LabeledSample> oracle_extra;
};

// Draw order (fixed, documented for replay): source samples, target
// calibration, unlabeled covariates, test, oracle extra; within a labeled
// sample, d covariate draws then one noise draw.
GeneratedData gen_bundle(const SyntheticSetting& setting, int n, int m, int N,
                         int n_test, int oracle_extra, RngStream& stream);

struct ExperimentConfig {
  SyntheticSetting setting;
  int n = 30, m = 500, N = 2000, n_test = 2000;
  double alpha = 0.1;
  double alpha_tol = 0.02;
  std::vector<double> lambda_grid{0.0, 1.0, 10.0, 100.0, 1000.0};
  int repeats = 50;
  std::uint64_t base_seed = 1;
  ScoreType score_type = ScoreType::Glcp;
  std::vector<Method> methods{Method::Base, Method::StcpSel};
  int oracle_extra = 2000;
  AlignmentConfig align; // align.lambda drives the fixed-lambda stcp method
  double theta_loc_shift = 0.0; // corrupts theta_hat (DP fragility studies)
  int n_partitions = 10;        // N_x for the miscoverage metric
  int threads = 0;              // 0 = hardware concurrency

  void validate() const; // throws ConfigError with a JSON-pointer-style path
};

struct RepeatRecord {
  int repeat_index = 0;
  Method method = Method::Base;
  std::optional<double> lambda_used;
  double q_hat = 0.0; // may be +inf
  double marginal_coverage = 0.0;
  double mean_size = 0.0; // may be +inf
  double miscoverage = 0.0;
};

struct MethodAggregate {
  Method method = Method::Base;
  double std_size = 0.0; // Std of mean_size across repeats
  bool std_infinite = false;
  double mean_marginal = 0.0;
  double mean_size = 0.0;
  bool size_infinite = false;
  double mean_miscoverage = 0.0;
  std::optional<double> improvement_rel;    // (1 - a1/a_base) * 100
  std::optional<double> improvement_oracle; // vs oracle with reference rule
};

struct ExperimentReport {
  std::vector<RepeatRecord> records; // repeat-major, method order as configured
  std::vector<MethodAggregate> aggregates;
};

ExperimentReport run_experiment(const ExperimentConfig& config);

// The shared per-repeat prefix of the pipeline: generated data, the
// source-trained score model, calibration scores and theta_hat (with any
// configured location shift applied). Replays exactly the stream draws the
// runner uses, so thresholds computed from these inputs match run_experiment.
struct RepeatInputs {
  GeneratedData data;
  ScoreModel model;
  std::vector<double> calibration_scores;
  CondCdfParams theta_hat;
};

RepeatInputs prepare_repeat_inputs(const ExperimentConfig& config, int repeat);

// Aggregates recomputed from records alone (pure; used by run_experiment and
// by the CSV round-trip checks).
std::vector<MethodAggregate> aggregate_records(
    const std::vector<RepeatRecord>& records,
    const std::vector<Method>& methods, double alpha, int n);

// Sample standard deviation with divisor R-1; throws TooFewValues.
double metric_std(std::span<const double> values);

// (1 - a1/a_base) * 100; throws NonPositiveBase.
double metric_improvement_rel(double a1, double a_base);

// (1 - (a1-a0)/(a_ref-a0)) * 100; throws DegenerateReference when a_ref == a0.
double metric_improvement_oracle(double a1, double a0, double a_ref);

// Reference Std for the oracle-relative improvement: the smallest Std among
// base/SDCP/PPI whose mean marginal coverage lies within
// [1-alpha-0.01, 1-alpha+1/(n+1)]. Empty when no candidate qualifies.
std::optional<double> select_reference_std(
    const std::vector<MethodAggregate>& aggregates, double alpha, int n);

struct KmeansResult {
  std::vector<std::vector<double>> centroids;
  std::vector<int> assignment;
  double inertia = 0.0;
};

// Lloyd's algorithm with k-means++ seeding from the stream; iteration cap or
// assignment fixpoint; within-cluster sum of squares never increases.
KmeansResult kmeans(const std::vector<std::vector<double>>& points, int k,
                    RngStream& stream, int iters = 100);

int nearest_centroid(const std::vector<std::vector<double>>& centroids,
                     std::span<const double> x);

struct PartitionRecord {
  int partition_id = 0;
  bool covered = false;
};

// Weighted absolute deviation sum_i w_i |p_i - (1-alpha)| over non-empty
// partitions, w_i the sample share of partition i.
double metric_miscoverage(const std::vector<PartitionRecord>& test_records,
                          double alpha, int n_partitions);

} // namespace stcp
