#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "tides/cli/config.hpp"
#include "tides/cli/properties.hpp"

namespace tides::cli {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitCriterion = 2, kExitRuntime = 3 };

// Thresholds for the experiment-level checks; all of them land in the manifest.
struct CriterionTolerances {
  double ff_mamba_edge_ratio = 2.0;  // Mamba error at the grid edges over its Delta = 1 error, lower bound
  double ff_tides_edge_ratio = 1.5;  // TIDES error at the grid edges over its Delta = 1 error, upper bound
  double ff_probe_abs = 0.01;        // generator probe vs the true zone rate
  double dr_lti_spread_pts = 2.0;    // s5 accuracy range over r_test, in points
  double dr_tides_drop_pts = 10.0;   // tides accuracy loss from r_test 0.5 to 0.9
  double dr_mamba_drop_pts = 15.0;   // mamba accuracy loss at r_test 0.9, lower bound
  double bench_ratio_lo = 1.3;
  double bench_ratio_hi = 3.0;
  std::size_t bench_ratio_min_length = 1024;  // doubling ratios are checked from here up
  double verify_max_seconds = 300.0;
};

struct Criterion {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct Invocation {
  std::string command;  // fading-flash, droprate, verify, bench
  RunConfig config;
  std::string out_dir = "out";
  bool dry_run = false;
  VerifyOptions verify;
  std::size_t jobs = 1;  // concurrent droprate cells
  std::ostream* out = nullptr;  // reports and the dry-run config
  std::ostream* log = nullptr;  // progress
};

struct CommandResult {
  int exit_code = kExitOk;
  std::vector<Criterion> criteria;
  std::vector<std::string> outputs;  // files written, relative to out_dir
  std::string error;
  double wall_seconds = 0.0;
};

const std::vector<std::string>& command_names();

// Runs one subcommand and writes its manifest (unless dry_run). Exceptions
// are mapped to exit codes: std::invalid_argument -> 1, anything else -> 3.
CommandResult run_command(const Invocation& inv, const CriterionTolerances& tol = {});

std::string manifest_file_name(const std::string& command);

// Rebuilds the invocation recorded in a manifest; out_dir, streams and jobs
// are left at their defaults.
Invocation invocation_from_manifest(const std::string& path);

// Version string compiled in from `git describe`, or "unknown".
std::string version_string();

}  // namespace tides::cli
