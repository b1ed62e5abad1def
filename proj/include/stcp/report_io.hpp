// Config parsing and report serialization shared by the CLI and the tests.
// CSV output is locale-independent: '.' decimal separator, '\n' line
// endings, UTF-8, header row always present; doubles use the shortest
// round-trippable representation and +/-inf serialize as "inf"/"-inf".
// In JSON, infinite aggregates become null with a sibling *_infinite flag.

#pragma once

#include <string>

#include <json.hpp>

#include "stcp/simlab.hpp"

namespace stcp {

// Shortest round-trip decimal form; "inf"/"-inf"/"nan" for non-finite.
std::string format_double(double v);

// Throws ConfigError with a JSON-pointer path on schema violations; missing
// fields keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& config);

// Stable FNV-1a 64 hex digest of the canonicalized config.
std::string config_digest(const ExperimentConfig& config);

// records.csv: repeat,method,lambda_used,q_hat,marginal_coverage,mean_size,
// miscoverage (lambda_used empty for methods without one).
std::string records_csv(const ExperimentReport& report);

// Parses records_csv output back into records (for round-trip checks).
std::vector<RepeatRecord> records_from_csv(const std::string& text);

nlohmann::json summary_json(const ExperimentConfig& config,
                            const ExperimentReport& report);

// sweep.csv rows: axis_value,method,std,marginal,size,miscoverage.
std::string sweep_csv_header();
std::string sweep_csv_rows(double axis_value, const ExperimentReport& report);

// Per-lambda selection table: lambda,q_st,feasible,grid_residual,iters.
std::string lambda_table_csv(const LambdaSelection& selection);

std::string method_name(Method m);
Method method_from_name(const std::string& name);

} // namespace stcp
