#include "stcp/report_io.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>

#include "stcp/errors.hpp"

namespace stcp {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

double parse_double(const std::string& tok) {
  if (tok == "inf") return kInf;
  if (tok == "-inf") return -kInf;
  double v = 0.0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{})
    throw ConfigError("records_from_csv: bad number '" + tok + "'");
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

SigmaFamily family_from_name(const std::string& name) {
  if (name == "logabs") return SigmaFamily::LogAbs;
  if (name == "quad") return SigmaFamily::Quad;
  if (name == "softplus") return SigmaFamily::Softplus;
  throw ConfigError("/setting/family: unknown family '" + name + "'");
}

ScoreType score_from_name(const std::string& name) {
  if (name == "residual") return ScoreType::Residual;
  if (name == "glcp") return ScoreType::Glcp;
  if (name == "cqr") return ScoreType::Cqr;
  throw ConfigError("/score_type: unknown score '" + name + "'");
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out,
                const std::string& pointer) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(pointer + ": wrong type");
  }
}

nlohmann::json aggregate_json(const MethodAggregate& a) {
  nlohmann::json j;
  j["method"] = method_name(a.method);
  j["std"] = a.std_infinite ? nlohmann::json(nullptr)
                            : nlohmann::json(a.std_size);
  j["std_infinite"] = a.std_infinite;
  j["marginal"] = a.mean_marginal;
  j["size"] = a.size_infinite ? nlohmann::json(nullptr)
                              : nlohmann::json(a.mean_size);
  j["size_infinite"] = a.size_infinite;
  j["miscoverage"] = a.mean_miscoverage;
  if (a.improvement_rel) j["improvement_rel"] = *a.improvement_rel;
  if (a.improvement_oracle) j["improvement_oracle"] = *a.improvement_oracle;
  return j;
}

} // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::string method_name(Method m) { return to_string(m); }

Method method_from_name(const std::string& name) {
  if (name == "base") return Method::Base;
  if (name == "dp") return Method::Dp;
  if (name == "ppi") return Method::Ppi;
  if (name == "sdcp") return Method::Sdcp;
  if (name == "stcp") return Method::Stcp;
  if (name == "stcp_sel") return Method::StcpSel;
  if (name == "oracle") return Method::Oracle;
  throw ConfigError("/methods: unknown method '" + name + "'");
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("/: config must be a JSON object");
  ExperimentConfig c;
  if (j.contains("setting")) {
    const auto& s = j.at("setting");
    if (!s.is_object()) throw ConfigError("/setting: must be an object");
    if (s.contains("family"))
      c.setting.family = family_from_name(s.at("family").get<std::string>());
    read_field(s, "d", c.setting.d, "/setting/d");
    read_field(s, "gamma_s", c.setting.gamma_s, "/setting/gamma_s");
    read_field(s, "gamma_t", c.setting.gamma_t, "/setting/gamma_t");
  }
  read_field(j, "n", c.n, "/n");
  read_field(j, "m", c.m, "/m");
  read_field(j, "N", c.N, "/N");
  read_field(j, "n_test", c.n_test, "/n_test");
  read_field(j, "alpha", c.alpha, "/alpha");
  read_field(j, "alpha_tol", c.alpha_tol, "/alpha_tol");
  read_field(j, "lambda_grid", c.lambda_grid, "/lambda_grid");
  read_field(j, "repeats", c.repeats, "/repeats");
  read_field(j, "base_seed", c.base_seed, "/base_seed");
  if (j.contains("score_type"))
    c.score_type = score_from_name(j.at("score_type").get<std::string>());
  if (j.contains("methods")) {
    if (!j.at("methods").is_array())
      throw ConfigError("/methods: must be an array");
    c.methods.clear();
    for (const auto& m : j.at("methods"))
      c.methods.push_back(method_from_name(m.get<std::string>()));
  }
  read_field(j, "oracle_extra", c.oracle_extra, "/oracle_extra");
  if (j.contains("align")) {
    const auto& a = j.at("align");
    if (!a.is_object()) throw ConfigError("/align: must be an object");
    read_field(a, "lambda", c.align.lambda, "/align/lambda");
    read_field(a, "grid_size", c.align.grid_size, "/align/grid_size");
    read_field(a, "step_size", c.align.step_size, "/align/step_size");
    read_field(a, "max_iters", c.align.max_iters, "/align/max_iters");
    read_field(a, "grad_tol", c.align.grad_tol, "/align/grad_tol");
    read_field(a, "bisect_tol", c.align.bisect_tol, "/align/bisect_tol");
    read_field(a, "warm_start", c.align.warm_start, "/align/warm_start");
  }
  read_field(j, "theta_loc_shift", c.theta_loc_shift, "/theta_loc_shift");
  read_field(j, "n_partitions", c.n_partitions, "/n_partitions");
  read_field(j, "threads", c.threads, "/threads");
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["setting"] = {{"family", to_string(c.setting.family)},
                  {"d", c.setting.d},
                  {"gamma_s", c.setting.gamma_s},
                  {"gamma_t", c.setting.gamma_t}};
  j["n"] = c.n;
  j["m"] = c.m;
  j["N"] = c.N;
  j["n_test"] = c.n_test;
  j["alpha"] = c.alpha;
  j["alpha_tol"] = c.alpha_tol;
  j["lambda_grid"] = c.lambda_grid;
  j["repeats"] = c.repeats;
  j["base_seed"] = c.base_seed;
  j["score_type"] = to_string(c.score_type);
  nlohmann::json methods = nlohmann::json::array();
  for (Method m : c.methods) methods.push_back(method_name(m));
  j["methods"] = methods;
  j["oracle_extra"] = c.oracle_extra;
  j["align"] = {{"lambda", c.align.lambda},
                {"grid_size", c.align.grid_size},
                {"step_size", c.align.step_size},
                {"max_iters", c.align.max_iters},
                {"grad_tol", c.align.grad_tol},
                {"bisect_tol", c.align.bisect_tol},
                {"warm_start", c.align.warm_start}};
  j["theta_loc_shift"] = c.theta_loc_shift;
  j["n_partitions"] = c.n_partitions;
  return j;
}

std::string config_digest(const ExperimentConfig& config) {
  const std::string canon = config_to_json(config).dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string records_csv(const ExperimentReport& report) {
  std::string out =
      "repeat,method,lambda_used,q_hat,marginal_coverage,mean_size,"
      "miscoverage\n";
  for (const auto& r : report.records) {
    out += std::to_string(r.repeat_index);
    out += ',';
    out += method_name(r.method);
    out += ',';
    if (r.lambda_used) out += format_double(*r.lambda_used);
    out += ',';
    out += format_double(r.q_hat);
    out += ',';
    out += format_double(r.marginal_coverage);
    out += ',';
    out += format_double(r.mean_size);
    out += ',';
    out += format_double(r.miscoverage);
    out += '\n';
  }
  return out;
}

std::vector<RepeatRecord> records_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line); // header
  std::vector<RepeatRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto tok = split_csv_line(line);
    if (tok.size() != 7)
      throw ConfigError("records_from_csv: expected 7 fields");
    RepeatRecord r;
    r.repeat_index = std::stoi(tok[0]);
    r.method = method_from_name(tok[1]);
    if (!tok[2].empty()) r.lambda_used = parse_double(tok[2]);
    r.q_hat = parse_double(tok[3]);
    r.marginal_coverage = parse_double(tok[4]);
    r.mean_size = parse_double(tok[5]);
    r.miscoverage = parse_double(tok[6]);
    out.push_back(r);
  }
  return out;
}

nlohmann::json summary_json(const ExperimentConfig& config,
                            const ExperimentReport& report) {
  nlohmann::json j;
  j["config_digest"] = config_digest(config);
  j["repeats"] = config.repeats;
  j["alpha"] = config.alpha;
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& a : report.aggregates) methods.push_back(aggregate_json(a));
  j["methods"] = methods;
  return j;
}

std::string sweep_csv_header() {
  return "axis_value,method,std,marginal,size,miscoverage\n";
}

std::string lambda_table_csv(const LambdaSelection& selection) {
  std::string out = "lambda,q_st,feasible,grid_residual,iters\n";
  for (const auto& row : selection.table) {
    out += format_double(row.lambda);
    out += ',';
    out += format_double(row.q_st);
    out += ',';
    out += row.feasible ? '1' : '0';
    out += ',';
    out += format_double(row.grid_residual);
    out += ',';
    out += std::to_string(row.iters);
    out += '\n';
  }
  return out;
}

std::string sweep_csv_rows(double axis_value, const ExperimentReport& report) {
  std::string out;
  for (const auto& a : report.aggregates) {
    out += format_double(axis_value);
    out += ',';
    out += method_name(a.method);
    out += ',';
    out += format_double(a.std_infinite ? kInf : a.std_size);
    out += ',';
    out += format_double(a.mean_marginal);
    out += ',';
    out += format_double(a.size_infinite ? kInf : a.mean_size);
    out += ',';
    out += format_double(a.mean_miscoverage);
    out += '\n';
  }
  return out;
}

} // namespace stcp
