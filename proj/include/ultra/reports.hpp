#pragma once

#include "ultra/carleman.hpp"
#include "ultra/errors.hpp"
#include "ultra/pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ultra {

// Parse failure with a 1-based location in the config text.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& msg, int line, int column);
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_, column_;
};

inline CoefficientFamily zero_family() {
  CoefficientFamily f;
  f.a0 = 0.0;
  return f;
}

struct OperatorConfig {
  std::string preset = "jerk";            // heat | L1 | jerk | example1 | custom
  int n = 3;                              // size for example1
  std::vector<std::vector<double>> B1;    // custom only, n x m
  std::vector<std::vector<double>> B2;    // custom only, n x n
  CoefficientFamily diffusivity;
  CoefficientFamily potential = zero_family();
  std::vector<double> drift_v;            // first-order coefficient, size m
  double lambda = 1.1;
  bool operator==(const OperatorConfig&) const = default;
};

struct GridConfig {
  int nt = 65;
  std::vector<Axis> v{{2.0, 64}};
  std::vector<Axis> w;
  bool operator==(const GridConfig&) const = default;
};

struct CarlemanConfig {
  std::vector<double> alphas{4, 8, 16, 32, 64, 128, 256};
  double b = 0.04;
  double t1 = 0.02;
  double t2 = 0.04;
  std::vector<double> R{0.2};
  double eps0 = kDefaultEps0;
  double alpha0 = kDefaultAlpha0;
  double c_star = kDefaultCStar;
  double c0 = kDefaultC0;
  Ceilings ceilings;
  bool operator==(const CarlemanConfig&) const = default;
};

// Suite item names: check-rank, constants, local, global, lemma1, lemma2,
// identities, sweep, simulate-jerk, pipeline.
struct SuiteConfig {
  std::vector<std::string> items{"check-rank"};
  int seeds = 5;
  std::uint64_t seed_base = 0;
  TestFunctionKind test_function = TestFunctionKind::RandomBandLimited;
  std::vector<double> rho;           // local, lemma2, identities; empty = unit e_1
  double lemma2_eps = 1e-3;
  std::vector<double> rho_scales{0.2, 0.4, 0.8};  // lemma2 band, strictly inside the regime
  std::string sweep_mode = "local";  // local | global
  bool operator==(const SuiteConfig&) const = default;
};

struct JerkConfig {
  PipelineSetup setup;    // base and alphas are filled from the carleman block
  bool export_trajectory = false;
  bool operator==(const JerkConfig&) const = default;
};

struct OutputConfig {
  std::string directory = "out";
  std::vector<std::string> formats{"json", "csv"};
  bool operator==(const OutputConfig&) const = default;
};

struct RunConfig {
  OperatorConfig op;
  GridConfig grid;
  CarlemanConfig carleman;
  SuiteConfig suite;
  JerkConfig jerk;
  OutputConfig output;
  bool operator==(const RunConfig&) const = default;
};

inline const std::vector<std::string>& suite_items() {
  static const std::vector<std::string> items{"check-rank", "constants",  "local",         "global",  "lemma1",
                                              "lemma2",     "identities", "simulate-jerk", "pipeline", "sweep"};
  return items;
}

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& cfg);

OperatorSpec build_operator(const RunConfig& cfg);
GridSpec build_grid(const RunConfig& cfg);
CarlemanParams base_params(const RunConfig& cfg, double alpha, double R);

struct RunOptions {
  std::optional<std::filesystem::path> out;
  int threads = 1;
  std::optional<std::uint64_t> seed_base;
  bool strict = false;                  // inconclusive counts as failure
  std::vector<std::string> only;        // restrict suite items; empty = all
};

struct RunResult {
  std::vector<VerificationReport> reports;  // sorted by (suite, alpha, seed, name)
  int exit_code = 0;
  std::filesystem::path directory;
};

// Exit codes: 0 all pass, 1 any failure, 2 usage or config error, 3 nothing checkable.
inline constexpr int kExitPass = 0, kExitFail = 1, kExitConfig = 2, kExitOutOfRegime = 3;

RunResult run(const RunConfig& cfg, const RunOptions& opts);
int exit_code_for(const std::vector<VerificationReport>& reports, bool strict);

// Deterministic ordering by (suite, alpha, seed, name); stable otherwise.
void sort_reports(std::vector<VerificationReport>& reports);

// %.17g numbers; non-finite values become null.
std::string report_json(const VerificationReport& r);
std::string reports_json(const std::vector<VerificationReport>& reports);
std::string csv_header();
std::string reports_csv(const std::vector<VerificationReport>& reports);

// Writes to a temporary sibling then renames over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& body);

// reports.json, reports.csv, summary.json (deterministic) and timing.json
// (runtimes and wall-clock stamp) into `dir`, honouring `formats`.
void emit_report(const std::vector<VerificationReport>& reports, const std::vector<std::string>& formats,
                 const std::filesystem::path& dir, int exit_code);

}  // namespace ultra
