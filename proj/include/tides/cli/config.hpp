#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tides/block/model.hpp"
#include "tides/drop/drop_harness.hpp"
#include "tides/flash/fading_flash.hpp"

namespace tides::cli {

// Every knob the subcommands read. Files use `key = value` lines with `#`
// comments; lists are comma-separated.
struct RunConfig {
  std::uint64_t seed = 0;

  // fading-flash
  std::vector<std::string> ff_kinds = {"s5", "mamba", "tides"};
  std::size_t ff_hidden = 16;
  std::size_t ff_states = 16;
  std::size_t ff_bc_rank = 4;
  std::size_t ff_steps = 3000;
  std::size_t ff_batch = 32;
  double ff_lr = 3e-3;
  double ff_delta_lo = 0.5;
  double ff_delta_hi = 1.5;
  std::size_t ff_eval_batches = 6;
  std::size_t ff_eval_batch_size = 64;
  std::size_t ff_var_batches = 10;
  std::size_t ff_var_batch_size = 128;

  // droprate
  std::string dr_dataset = "synthetic";  // or a CSV path
  std::size_t dr_train_size = drop::kSynthTrainSize;
  std::size_t dr_test_size = drop::kSynthTestSize;
  double dr_test_fraction = 0.3;          // CSV only
  std::vector<std::string> dr_specs = {"s5", "mamba", "tides", "tides_lambda", "tides_bc", "tides_full"};
  std::vector<std::uint64_t> dr_seeds = {0, 1, 2};
  double dr_r_train = 0.5;
  std::vector<double> dr_r_test = {0.1, 0.3, 0.5, 0.7, 0.9};
  std::size_t dr_epochs = 400;
  std::size_t dr_batch = 16;
  double dr_lr = 1e-3;
  double dr_weight_decay = 0.1;
  std::size_t dr_ssm_mult = drop::kVariantStates;

  // bench
  std::vector<std::size_t> bench_lengths = {256, 512, 1024, 2048, 4096};
  std::size_t bench_repeats = 5;
  std::size_t bench_batch = 1;
  std::size_t bench_hidden = 64;
  std::size_t bench_layers = 1;
  std::size_t bench_ssm_b = 2;
  std::size_t bench_ssm_mult = 16;
  std::size_t bench_bc_rank = 8;
  double bench_ff_mult = 2.0;
  bool bench_clip_eigs = true;
  bool bench_bidir = false;
  std::string bench_disc = "zoh";

  // Throws std::invalid_argument naming the offending key.
  void validate() const;

  flash::TrainConfig train_config() const;
  flash::EvalConfig eval_config() const;
  std::vector<flash::ToyKind> kinds() const;
  drop::SweepConfig sweep_config() const;
  block::ModelConfig bench_model_config() const;
};

// Unknown keys, duplicate keys, malformed lines and out-of-domain values
// throw std::invalid_argument with the line number and key.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);
// Every key in a fixed order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& config);

// Applies one `key = value` assignment on top of `config`.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);
std::vector<std::string> config_keys();

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace tides::cli
