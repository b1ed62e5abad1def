// stcp command-line front end.
//
//   stcp simulate      --config cfg.json --out DIR [--seed S] [--threads T]
//   stcp sweep         --config cfg.json --out DIR --axis lambda|n|m
//                      --values v1,v2,... [--seed S] [--threads T]
//   stcp select-lambda --config cfg.json --out DIR [--seed S] [--threads T]
//
// Exit codes: 0 success, 2 config error, 3 runtime error.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stcp/errors.hpp"
#include "stcp/report_io.hpp"
#include "stcp/simlab.hpp"

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string iso_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw stcp::StcpError("cannot write " + path.string());
  out << body;
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

stcp::ExperimentConfig load_effective_config(const CommonArgs& args) {
  stcp::ExperimentConfig cfg = stcp::load_config(args.config_path);
  if (args.seed) cfg.base_seed = *args.seed;
  if (args.threads) {
    cfg.threads = *args.threads;
  } else if (const char* env = std::getenv("STCP_THREADS")) {
    cfg.threads = std::atoi(env);
  }
  return cfg;
}

void write_manifest(const std::filesystem::path& dir,
                    const stcp::ExperimentConfig& cfg,
                    const std::string& started_at,
                    const std::vector<std::string>& outputs) {
  nlohmann::json m;
  m["config_digest"] = stcp::config_digest(cfg);
  m["tool_version"] = kToolVersion;
  m["base_seed"] = cfg.base_seed;
  m["started_at"] = started_at;
  m["finished_at"] = iso_timestamp();
  m["output_paths"] = outputs;
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

int cmd_simulate(const CommonArgs& args) {
  const std::string started = iso_timestamp();
  stcp::ExperimentConfig cfg = load_effective_config(args);
  std::filesystem::path dir(args.out_dir);
  std::filesystem::create_directories(dir);
  stcp::ExperimentReport report = stcp::run_experiment(cfg);
  write_file(dir / "records.csv", stcp::records_csv(report));
  write_file(dir / "summary.json",
             stcp::summary_json(cfg, report).dump(2) + "\n");
  write_manifest(dir, cfg, started, {"records.csv", "summary.json"});
  return 0;
}

const char* kSweepGnuplot =
    "# Companion plot file for sweep.csv; run: gnuplot -p sweep.gp\n"
    "set datafile separator ','\n"
    "set key outside\n"
    "set xlabel 'axis value'\n"
    "set ylabel 'std of mean set size'\n"
    "plot for [m in system(\"tail -n +2 sweep.csv | cut -d, -f2 | sort -u | "
    "tr '\\n' ' '\")] \\\n"
    "  'sweep.csv' using 1:($3*(strcol(2) eq m ? 1 : NaN)) \\\n"
    "  with linespoints title m\n";

int cmd_sweep(const CommonArgs& args, const std::string& axis,
              const std::string& values_arg) {
  const std::string started = iso_timestamp();
  stcp::ExperimentConfig cfg = load_effective_config(args);
  if (axis != "lambda" && axis != "n" && axis != "m")
    throw stcp::ConfigError("--axis must be one of lambda, n, m");

  std::vector<double> values;
  std::stringstream ss(values_arg);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      values.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw stcp::ConfigError("--values: bad number '" + tok + "'");
    }
  }
  if (values.empty()) throw stcp::ConfigError("--values: empty list");
  for (std::size_t i = 0; i + 1 < values.size(); ++i)
    if (!(values[i] < values[i + 1]))
      throw stcp::ConfigError("--values must be strictly ascending");

  std::filesystem::path dir(args.out_dir);
  std::filesystem::create_directories(dir);
  std::string csv = stcp::sweep_csv_header();
  for (double v : values) {
    stcp::ExperimentConfig run = cfg;
    if (axis == "lambda")
      run.align.lambda = v;
    else if (axis == "n")
      run.n = static_cast<int>(v);
    else
      run.m = static_cast<int>(v);
    run.validate();
    stcp::ExperimentReport report = stcp::run_experiment(run);
    csv += stcp::sweep_csv_rows(v, report);
  }
  write_file(dir / "sweep.csv", csv);
  write_file(dir / "sweep.gp", kSweepGnuplot);
  write_manifest(dir, cfg, started, {"sweep.csv", "sweep.gp"});
  return 0;
}

int cmd_select_lambda(const CommonArgs& args) {
  const std::string started = iso_timestamp();
  stcp::ExperimentConfig cfg = load_effective_config(args);
  if (cfg.lambda_grid.empty() || cfg.lambda_grid.front() != 0.0)
    throw stcp::ConfigError("/lambda_grid: must start at 0");
  std::filesystem::path dir(args.out_dir);
  std::filesystem::create_directories(dir);

  std::string csv = "repeat,lambda,q_st,feasible,chosen\n";
  for (int r = 0; r < cfg.repeats; ++r) {
    stcp::RepeatInputs inputs = stcp::prepare_repeat_inputs(cfg, r);
    stcp::LambdaSelectionConfig sel;
    sel.lambda_grid = cfg.lambda_grid;
    sel.alpha_tol = cfg.alpha_tol;
    sel.on_empty = stcp::LambdaSelectionConfig::OnEmpty::clamp_to_band;
    stcp::AlphaLevels levels{cfg.alpha, cfg.n};
    auto out = stcp::select_lambda(inputs.theta_hat, sel, levels,
                                   inputs.calibration_scores,
                                   inputs.data.bundle.target_unlabeled,
                                   cfg.align);
    for (const auto& row : out.table) {
      const bool chosen = !out.fallback ? (row.feasible && row.lambda == out.lambda_hat)
                                        : row.lambda == 0.0;
      csv += std::to_string(r);
      csv += ',';
      csv += stcp::format_double(row.lambda);
      csv += ',';
      csv += stcp::format_double(row.q_st);
      csv += ',';
      csv += row.feasible ? '1' : '0';
      csv += ',';
      csv += chosen ? '1' : '0';
      csv += '\n';
    }
  }
  write_file(dir / "selection.csv", csv);
  write_manifest(dir, cfg, started, {"selection.csv"});
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stable conformal prediction experiments"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string axis, values;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "JSON config path")
        ->required();
    sub->add_option("--out", args.out_dir, "output directory")->required();
    sub->add_option_function<std::uint64_t>(
        "--seed", [&args](std::uint64_t s) { args.seed = s; },
        "override base_seed");
    sub->add_option_function<int>(
        "--threads", [&args](int t) { args.threads = t; },
        "worker threads (env STCP_THREADS as fallback)");
  };

  CLI::App* sim = app.add_subcommand("simulate", "run a configured experiment");
  add_common(sim);
  CLI::App* sweep = app.add_subcommand("sweep", "sweep lambda, n or m");
  add_common(sweep);
  sweep->add_option("--axis", axis, "axis: lambda, n or m")->required();
  sweep->add_option("--values", values, "ascending comma-separated values")
      ->required();
  CLI::App* sel =
      app.add_subcommand("select-lambda", "per-repeat lambda selection table");
  add_common(sel);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(args);
    if (sweep->parsed()) return cmd_sweep(args, axis, values);
    if (sel->parsed()) return cmd_select_lambda(args);
    return 2;
  } catch (const stcp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
