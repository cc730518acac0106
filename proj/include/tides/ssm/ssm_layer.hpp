#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tides/autodiff/tape.hpp"
#include "tides/rng.hpp"
#include "tides/ssm/discretize.hpp"
#include "tides/ssm/head.hpp"
#include "tides/ssm/spectrum.hpp"

namespace tides::ssm {

// How the discretization step is formed.
//   physical:     delta_p = exp(log_step_p) * Delta_k (Delta never enters a head)
//   learned_gate: delta_p = softplus([u_k, Delta_k] W + b)_p
enum class DeltaMode { physical, learned_gate };

// Which state the readout sees at step k: the one that already absorbed u_k
// (post_update), or the one before it (pre_update).
enum class StateReadout { post_update, pre_update };

DeltaMode parse_delta_mode(std::string_view name);
std::string_view to_string(DeltaMode m);
StateReadout parse_readout(std::string_view name);
std::string_view to_string(StateReadout r);

struct Selectivity {
  bool lambda_re = false;
  bool lambda_im = false;
  bool bc = false;
};

struct SsmConfig {
  std::size_t input_dim = 1;   // H
  std::size_t output_dim = 1;  // feedthrough is diagonal when equal to H
  std::size_t groups = 1;      // ssm_b
  std::size_t group_size = 1;  // ssm_mult
  bool complex_state = true;
  bool bidirectional = false;
  Discretization disc = Discretization::zoh;
  DeltaMode delta_mode = DeltaMode::physical;
  Reparam reparam = Reparam::stable;
  bool clip_eigs = false;
  Selectivity selectivity;
  std::size_t bc_rank = 1;
  std::size_t lambda_depth = 0;
  bool normalize = false;
  StateReadout readout = StateReadout::post_update;

  std::size_t modes() const noexcept { return groups * group_size; }
  std::size_t directions() const noexcept { return bidirectional ? 2 : 1; }
  bool diagonal_feedthrough() const noexcept { return output_dim == input_dim; }
  void validate() const;
};

// One independent diagonal SSM over `group_size` modes.
//
// Parameter layouts (q = 2m with complex state, m otherwise; S = m * dirs):
//   b.bias  [q * H]      rows of B_k, real rows then imaginary rows
//   c.bias  [O * cs]     per output o: Re C(o, 0..S) then Im C(o, 0..S); the
//                        forward-direction modes precede the backward ones
// where cs = 2S with complex state and S otherwise.
struct SsmGroup {
  SelectivityHead lambda_re;  // bias: theta
  SelectivityHead lambda_im;  // bias: Im(lambda); empty for real state
  ad::Tensor log_step;        // [m]; empty in learned-gate mode
  SelectivityHead b;
  SelectivityHead c;
  std::optional<ad::Tensor> gate_w;  // [H + 1, m]
  std::optional<ad::Tensor> gate_b;  // [m]
};

struct SsmLayer {
  SsmConfig config;
  std::vector<SsmGroup> groups;
  ad::Tensor d;  // [H] when diagonal, [H, O] otherwise

  static SsmLayer init(const SsmConfig& config, Rng& rng);
  void validate() const;
  DiagonalSpectrum spectrum(std::size_t group) const;
  std::size_t parameter_count();

  template <class F>
  void visit_params(F&& f) {
    for (std::size_t i = 0; i < groups.size(); ++i) {
      SsmGroup& g = groups[i];
      const std::string p = "g" + std::to_string(i);
      g.lambda_re.visit_params(p + ".theta", f);
      if (config.complex_state) g.lambda_im.visit_params(p + ".lambda_im", f);
      if (g.log_step.size() > 0) f(p + ".log_step", g.log_step);
      g.b.visit_params(p + ".B", f);
      g.c.visit_params(p + ".C", f);
      if (g.gate_w) f(p + ".gate_w", *g.gate_w);
      if (g.gate_b) f(p + ".gate_b", *g.gate_b);
    }
    f(std::string("D"), d);
  }
};

// Observation points for tests: node ids of every tensor fed into a
// selectivity head or a step gate, and of the delta input.
struct SsmTrace {
  std::vector<int> head_inputs;
  std::vector<int> gate_inputs;
  int delta_node = -1;
};

// u: [B*L, H] with rows grouped by sequence, delta: [B*L, 1] step sizes.
// Returns y: [B*L, O], y_k = Re(C_k x_k) + D u_k.
ad::Var ssm_forward(ad::ParamBinder& bind, const SsmLayer& layer, ad::Var u, ad::Var delta, std::size_t seq_len,
                    SsmTrace* trace = nullptr);

// Half-open mode ranges of `groups` equal groups over `modes`.
std::vector<std::pair<std::size_t, std::size_t>> group_ranges(std::size_t modes, std::size_t groups);

// Re-express a single-group layer as `groups` independent groups over the same
// modes. The forward pass is unchanged (up to summation order).
SsmLayer split_groups(const SsmLayer& whole, std::size_t groups);

}  // namespace tides::ssm
