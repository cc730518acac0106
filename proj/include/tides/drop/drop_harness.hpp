#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "tides/block/model.hpp"
#include "tides/rng.hpp"

namespace tides::drop {

// values is row-major [L, channels].
struct TimestampedSeries {
  std::vector<double> values;
  std::size_t channels = 1;
  std::vector<double> timestamps;
  std::size_t label = 0;

  std::size_t length() const noexcept { return timestamps.size(); }
  double value(std::size_t k, std::size_t c) const { return values[k * channels + c]; }
  // Throws std::invalid_argument on L < 2, non-increasing timestamps or a
  // values/timestamps size mismatch.
  void validate() const;
};

using Dataset = std::vector<TimestampedSeries>;

enum class DropMode { fresh_per_step, fixed_per_seed };

struct DropPlan {
  std::vector<std::size_t> kept;  // strictly increasing
  double rate = 0.0;
  DropMode mode = DropMode::fresh_per_step;
};

// round((1 - r) L), halves rounded away from zero.
std::size_t kept_count(double rate, std::size_t length);

// Uniform subset without replacement. Fresh mode consumes `rng`; fixed
// mode ignores it in favour of fixed_drop's substream.
DropPlan sample_drop(Rng& rng, double rate, std::size_t length, DropMode mode = DropMode::fresh_per_step);
// Fixed evaluation plan: a pure function of (seed, sequence id, rate).
DropPlan fixed_drop(std::uint64_t seed, std::size_t sequence_id, double rate, std::size_t length);

TimestampedSeries apply_drop(const TimestampedSeries& series, const DropPlan& plan);

// Forward differences t_{k+1} - t_k (L - 1 entries).
std::vector<double> gaps(const TimestampedSeries& series);
// One step size per row: gaps(), with the last row repeating the final gap.
std::vector<double> step_sizes(const TimestampedSeries& series);

struct VariantSpec {
  std::string name;
  bool id_re_lambda = false;
  bool id_im_lambda = false;
  bool id_bc = false;
  bool id_delta = false;
  std::size_t hidden = 16;

  // Throws std::invalid_argument unless the flags match a known variant row.
  void validate() const;
};

// s5, mamba, tides, tides_lambda, tides_bc, tides_full.
const std::vector<VariantSpec>& variant_table();
const VariantSpec& find_variant(std::string_view name);

inline constexpr std::size_t kVariantStates = 16;
// Low-rank width of the selective B and C heads; equal to the H of the
// selective rows so all six variants land near the same size.
inline constexpr std::size_t kVariantBcRank = 16;

// One block, bidirectional, ZOH, complex state, classification head. The
// input width is `channels`, plus one when Delta is a value channel.
block::ModelConfig variant_model_config(const VariantSpec& spec, std::size_t channels, std::size_t classes,
                                        std::size_t states = kVariantStates);
block::Model build_variant(const VariantSpec& spec, std::size_t channels, std::size_t classes, Rng& rng,
                           std::size_t states = kVariantStates);

// Model inputs for a batch of equal-length series: u [B*L, width] and the
// per-row step sizes [B*L, 1].
struct VariantInputs {
  ad::Tensor u;
  ad::Tensor delta;
  std::size_t value_channels = 0;  // columns of u that carry observed values
  bool delta_channel = false;      // whether the last column of u is Delta
};

VariantInputs variant_inputs(const VariantSpec& spec, const std::vector<const TimestampedSeries*>& batch);

struct SweepConfig {
  std::vector<VariantSpec> specs = variant_table();
  double r_train = 0.5;
  std::vector<double> r_test = {0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::size_t epochs = 400;
  std::size_t batch = 16;
  double lr = 1e-3;
  double weight_decay = 0.1;
  std::size_t states = kVariantStates;  // ssm_mult of every variant
};

struct SweepRow {
  std::string spec;
  std::uint64_t seed = 0;
  double r_train = 0.0;
  double r_test = 0.0;
  double accuracy = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  // Mean over seeds for one (spec, r_test) cell.
  double mean_accuracy(std::string_view spec, double r_test) const;
};

// Called after each (spec, seed) cell finishes.
using SweepProgress = std::function<void(const VariantSpec&, std::uint64_t seed)>;

// Each (spec, seed) trains on `train` with fresh drops at r_train and is
// scored on `test` under fixed_drop plans at every r_test. Plans depend only
// on (seed, test index, r), so every spec sees the same evaluation data.
SweepResult run_sweep(const Dataset& train, const Dataset& test, const SweepConfig& config,
                      const SweepProgress& progress = {});

// Holds out every index i with i % 10 < round(10 * test_fraction).
void split_dataset(const Dataset& all, double test_fraction, Dataset& train, Dataset& test);

// CSV with header `series_id,timestamp,label,c0,c1,...`. Series are ordered
// by id and sorted by timestamp. Errors name the line or the series.
Dataset ingest_csv(const std::string& path);

inline constexpr std::size_t kSynthLength = 200;
// Continuous time per unit timestamp used by the glow recursion.
inline constexpr double kSynthTimeScale = 0.05;

// Fading-flash-style glow series of length 200 on unit timestamps, one value
// channel, labelled by the rate index of the first zone. Flashes fire
// independently at every step. Label i % classes for the i-th series, so
// classes are balanced.
Dataset synth_classification(Rng& rng, std::size_t n, std::size_t classes = 3);

inline constexpr std::size_t kSynthTrainSize = 48;
inline constexpr std::size_t kSynthTestSize = 150;

struct TrainTest {
  Dataset train;
  Dataset test;
};

// Train and test sets from independent substreams of `seed`.
TrainTest synth_benchmark(std::uint64_t seed, std::size_t n_train = kSynthTrainSize,
                          std::size_t n_test = kSynthTestSize);

// Recovers the label from a clean full-resolution synthetic series by
// reading the decay right after its first flash.
std::size_t oracle_classify(const TimestampedSeries& series, std::size_t classes = 3);

}  // namespace tides::drop
