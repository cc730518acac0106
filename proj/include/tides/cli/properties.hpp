#pragma once

#include <string>
#include <vector>

namespace tides::cli {

// Thresholds the invariant suite enforces.
struct PropertyTolerances {
  double scan_rel = 1e-6;
  double grad_rel = 1e-4;
  double grad_step = 1e-5;
  double zoh_abs = 1e-10;
  double semigroup_abs = 1e-12;
  double zero_init_abs = 1e-12;
  double generator_abs = 1e-12;
  double block_identity_abs = 1e-12;
  double bn_mean_abs = 1e-10;
  double bn_var_lo = 0.99;
  double bn_var_hi = 1.01;
  double timestamp_abs = 1e-12;
};

struct VerifyOptions {
  // Runs the scan property with the operands of the combine swapped; the
  // property must then fail.
  bool flip_scan_combine = false;
  std::vector<std::string> only;  // property names; empty runs all
  PropertyTolerances tol;
};

struct PropertyResult {
  std::string name;
  bool pass = false;
  std::string detail;  // measured worst case against its threshold
  double seconds = 0.0;
};

// scan, gradient, zoh, zero_init, generator, block, drop_timestamps.
const std::vector<std::string>& property_names();

// Throws std::invalid_argument on an unknown name.
PropertyResult run_property(const std::string& name, const VerifyOptions& options = {});
std::vector<PropertyResult> run_properties(const VerifyOptions& options = {});

}  // namespace tides::cli
