#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "tides/autodiff/tape.hpp"
#include "tides/rng.hpp"
#include "tides/ssm/ssm_layer.hpp"

namespace tides::flash {

inline constexpr std::size_t kSeqLen = 40;
inline constexpr std::size_t kInputChannels = 4;  // p_k, one-hot(z_k)
inline constexpr std::array<double, 3> kZoneRates = {1.0, 1.5, 2.0};
inline constexpr std::size_t kMinBoundary = 4;
inline constexpr std::size_t kMaxBoundary = 35;
inline constexpr std::size_t kMinZoneSpan = 4;
inline constexpr std::size_t kMaxLayoutRetries = 1000;

// One Fading Flash example. zones[k] is the rate index of position k, so
// the one-hot zone channel tells the model which decay rate applies.
struct FlashSequence {
  std::vector<double> flashes;       // p_k in {0, 1}
  std::vector<std::size_t> zones;    // z_k in {0, 1, 2}
  double delta = 1.0;
  std::vector<double> target;        // y_k = h_k

  std::size_t length() const noexcept { return flashes.size(); }
  std::size_t flash_count() const;
  // Number of maximal runs of equal zone index.
  std::size_t zone_count() const;
  // [L, 4] input rows.
  std::vector<double> input() const;
};

// h_k = a_k h_{k-1} + b_k p_k, a_k = exp(-lambda_k delta), b_k = (1 - a_k) / lambda_k.
std::vector<double> compute_target(const FlashSequence& seq);

FlashSequence generate_sequence(Rng& rng, double delta);

// A sequence with a single zone and the given flash positions.
FlashSequence single_zone_sequence(std::size_t zone, double delta, const std::vector<std::size_t>& flash_at);

// Throws std::logic_error naming the first violated constraint.
void check_invariants(const FlashSequence& seq);

enum class ToyKind { s5, mamba, tides };

inline constexpr std::array<ToyKind, 3> kAllKinds = {ToyKind::s5, ToyKind::mamba, ToyKind::tides};

std::string_view to_string(ToyKind k);
ToyKind parse_toy_kind(std::string_view name);

struct ToyConfig {
  ToyKind kind = ToyKind::tides;
  std::size_t hidden = 16;  // H
  std::size_t states = 16;  // P
  std::size_t bc_rank = 4;
};

// Linear encoder W_enc (no bias) into a real diagonal SSM with ZOH,
// readout y = C x + D h.
struct ToyModel {
  ToyConfig config;
  ad::Tensor w_enc;  // [4, H]
  ssm::SsmLayer ssm;

  static ToyModel build(const ToyConfig& config, Rng& rng);

  // Trainable parameters. The physical-mode step scale is frozen at
  // exp(0) = 1 so the step is exactly Delta.
  template <class F>
  void visit_params(F&& f) {
    f(std::string("w_enc"), w_enc);
    ssm.visit_params([&](const std::string& name, ad::Tensor& t) {
      if (name.find("log_step") == std::string::npos) f("ssm." + name, t);
    });
  }
  std::size_t parameter_count();
};

ssm::SsmConfig toy_ssm_config(const ToyConfig& config);
std::size_t analytic_toy_parameter_count(const ToyConfig& config);
// Hidden widths per kind: mamba and tides use `base_hidden`, s5 the width
// whose count is closest to the tides count.
ToyConfig matched_toy_config(ToyKind kind, std::size_t base_hidden = 16, std::size_t states = 16,
                             std::size_t bc_rank = 4);

// u: [B*L, 4], delta: [B*L, 1] -> [B*L, 1].
ad::Var toy_forward(ad::ParamBinder& bind, const ToyModel& model, ad::Var u, ad::Var delta,
                    std::size_t seq_len = kSeqLen);

// Predictions for a batch of sequences, one vector of length L per sequence.
using Predictor = std::function<std::vector<std::vector<double>>(const std::vector<FlashSequence>&)>;

Predictor model_predictor(const ToyModel& model);
// Returns the exact targets; the reference for the probe and the metric.
Predictor oracle_predictor();

struct TrainConfig {
  std::size_t steps = 3000;
  std::size_t batch = 32;
  double lr = 3e-3;
  double delta_lo = 0.5;
  double delta_hi = 1.5;
};

struct TrainResult {
  ToyModel model;
  std::vector<double> losses;  // one per step
  // Mean of the trailing min(100, steps) losses.
  double final_loss() const;
};

// Seeds the data stream from `seed` alone, so every kind sees the same
// batches; initialization uses a per-kind substream. Throws std::runtime_error
// on a non-finite loss, naming the step.
TrainResult train_toy(const ToyConfig& config, std::uint64_t seed, const TrainConfig& train = {});

inline constexpr std::array<double, 10> kDeltaGrid = {0.1, 0.2, 0.3, 0.5, 0.8, 1.0, 1.2, 1.5, 1.8, 2.0};

struct EvalConfig {
  std::vector<double> deltas{kDeltaGrid.begin(), kDeltaGrid.end()};
  std::size_t eval_batches = 6;
  std::size_t eval_batch_size = 64;
  std::size_t var_batches = 10;
  std::size_t var_batch_size = 128;
};

struct GridPoint {
  double delta = 0.0;
  double mse = 0.0;
  double variance = 0.0;
  double rel_error_pct = 0.0;
};

double relative_error_pct(double mse, double variance);

// Eval and variance sequences are drawn from substreams of `seed` keyed by
// grid index, so every predictor is scored on the same data.
std::vector<GridPoint> evaluate_grid(const Predictor& predict, std::uint64_t seed, const EvalConfig& eval = {});

inline constexpr std::size_t kProbeFlashAt = 5;
inline constexpr std::size_t kProbeTailBegin = 7;
inline constexpr double kProbeClamp = 1e-8;

// Least-squares slope of log(max(r_k, clamp)) against k over positions
// [kProbeTailBegin, L), using only entries above the clamp; returns
// -slope / delta. Throws std::runtime_error when fewer than two remain.
double fit_decay_rate(const std::vector<double>& response, double delta);

// Flash response of a single-zone probe: prediction with a flash at
// kProbeFlashAt minus the prediction without it, then fit_decay_rate.
double effective_decay_probe(const Predictor& predict, std::size_t zone, double delta);

}  // namespace tides::flash
