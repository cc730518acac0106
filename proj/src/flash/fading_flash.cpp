#include "tides/flash/fading_flash.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tides/autodiff/adam.hpp"
#include "tides/autodiff/ops.hpp"
#include "tides/ssm/head.hpp"
#include "tides/ssm/spectrum.hpp"

namespace tides::flash {

std::size_t FlashSequence::flash_count() const {
  return static_cast<std::size_t>(std::count(flashes.begin(), flashes.end(), 1.0));
}

std::size_t FlashSequence::zone_count() const {
  if (zones.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t k = 1; k < zones.size(); ++k) n += zones[k] != zones[k - 1];
  return n;
}

std::vector<double> FlashSequence::input() const {
  std::vector<double> u(length() * kInputChannels, 0.0);
  for (std::size_t k = 0; k < length(); ++k) {
    u[k * kInputChannels] = flashes[k];
    u[k * kInputChannels + 1 + zones[k]] = 1.0;
  }
  return u;
}

std::vector<double> compute_target(const FlashSequence& seq) {
  if (!(seq.delta > 0.0)) throw std::invalid_argument("fading flash: delta must be positive");
  std::vector<double> y(seq.length());
  double h = 0.0;
  for (std::size_t k = 0; k < seq.length(); ++k) {
    const double rate = kZoneRates.at(seq.zones[k]);
    const double a = std::exp(-rate * seq.delta);
    h = a * h + (1.0 - a) / rate * seq.flashes[k];
    y[k] = h;
  }
  return y;
}

FlashSequence generate_sequence(Rng& rng, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("fading flash: delta must be positive");
  const std::size_t n_zones = 2 + rng.index(2);
  std::vector<std::size_t> starts;
  for (std::size_t attempt = 0;; ++attempt) {
    if (attempt == kMaxLayoutRetries) {
      throw std::runtime_error("fading flash: no valid zone layout after " + std::to_string(kMaxLayoutRetries) +
                               " draws");
    }
    std::vector<std::size_t> b = rng.sample_without_replacement(kMaxBoundary - kMinBoundary + 1, n_zones - 1);
    for (std::size_t& x : b) x += kMinBoundary;
    std::sort(b.begin(), b.end());
    starts = {0};
    starts.insert(starts.end(), b.begin(), b.end());
    bool ok = true;
    for (std::size_t i = 0; i < n_zones; ++i) {
      const std::size_t end = i + 1 < n_zones ? starts[i + 1] : kSeqLen;
      ok = ok && end - starts[i] >= kMinZoneSpan;
    }
    if (ok) break;
  }

  // Each later zone takes one of the two rates its predecessor does not.
  std::vector<std::size_t> rate(n_zones);
  rate[0] = rng.index(kZoneRates.size());
  for (std::size_t i = 1; i < n_zones; ++i) rate[i] = (rate[i - 1] + 1 + rng.index(kZoneRates.size() - 1)) % 3;

  FlashSequence seq;
  seq.delta = delta;
  seq.zones.resize(kSeqLen);
  for (std::size_t i = 0; i < n_zones; ++i) {
    const std::size_t end = i + 1 < n_zones ? starts[i + 1] : kSeqLen;
    std::fill(seq.zones.begin() + static_cast<std::ptrdiff_t>(starts[i]),
              seq.zones.begin() + static_cast<std::ptrdiff_t>(end), rate[i]);
  }
  seq.flashes.assign(kSeqLen, 0.0);
  for (std::size_t k : rng.sample_without_replacement(kSeqLen, 2 + rng.index(3))) seq.flashes[k] = 1.0;
  seq.target = compute_target(seq);
  return seq;
}

FlashSequence single_zone_sequence(std::size_t zone, double delta, const std::vector<std::size_t>& flash_at) {
  if (zone >= kZoneRates.size()) throw std::invalid_argument("fading flash: zone index out of range");
  FlashSequence seq;
  seq.delta = delta;
  seq.zones.assign(kSeqLen, zone);
  seq.flashes.assign(kSeqLen, 0.0);
  for (std::size_t k : flash_at) seq.flashes.at(k) = 1.0;
  seq.target = compute_target(seq);
  return seq;
}

void check_invariants(const FlashSequence& seq) {
  auto fail = [](const std::string& what) { throw std::logic_error("fading flash: " + what); };
  if (seq.length() != kSeqLen || seq.zones.size() != kSeqLen || seq.target.size() != kSeqLen) fail("length != 40");
  if (!(seq.delta > 0.0)) fail("delta not positive");
  for (double p : seq.flashes) {
    if (p != 0.0 && p != 1.0) fail("flash indicator not in {0, 1}");
  }
  const std::size_t nf = seq.flash_count();
  if (nf < 2 || nf > 4) fail(std::to_string(nf) + " flashes");
  const std::size_t nz = seq.zone_count();
  if (nz < 2 || nz > 3) fail(std::to_string(nz) + " zones");
  std::size_t run_start = 0;
  for (std::size_t k = 1; k <= kSeqLen; ++k) {
    if (k < kSeqLen && seq.zones[k] == seq.zones[k - 1]) continue;
    if (seq.zones[k - 1] >= kZoneRates.size()) fail("zone index out of range");
    if (k - run_start < kMinZoneSpan) fail("zone starting at " + std::to_string(run_start) + " is too short");
    if (k < kSeqLen && (k < kMinBoundary || k > kMaxBoundary)) fail("boundary at " + std::to_string(k));
    run_start = k;
  }
  if (seq.target != compute_target(seq)) fail("target does not satisfy the recursion");
}

std::string_view to_string(ToyKind k) {
  switch (k) {
    case ToyKind::s5: return "s5";
    case ToyKind::mamba: return "mamba";
    case ToyKind::tides: return "tides";
  }
  return "?";
}

ToyKind parse_toy_kind(std::string_view name) {
  for (ToyKind k : kAllKinds) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown toy model kind '" + std::string(name) + "'");
}

ssm::SsmConfig toy_ssm_config(const ToyConfig& config) {
  if (config.hidden == 0 || config.states == 0) throw std::invalid_argument("toy model: H and P must be positive");
  ssm::SsmConfig c;
  c.input_dim = config.hidden;
  c.output_dim = 1;
  c.groups = 1;
  c.group_size = config.states;
  c.complex_state = false;
  c.disc = ssm::Discretization::zoh;
  c.reparam = ssm::Reparam::exp;
  c.bc_rank = config.bc_rank;
  c.selectivity.lambda_re = config.kind == ToyKind::tides;
  c.selectivity.bc = config.kind != ToyKind::s5;
  c.delta_mode = config.kind == ToyKind::mamba ? ssm::DeltaMode::learned_gate : ssm::DeltaMode::physical;
  return c;
}

ToyModel ToyModel::build(const ToyConfig& config, Rng& rng) {
  ToyModel m;
  m.config = config;
  Rng erng = rng.split("encoder");
  m.w_enc = ssm::gaussian({kInputChannels, config.hidden}, 1.0 / std::sqrt(static_cast<double>(kInputChannels)), erng);
  Rng srng = rng.split("ssm");
  m.ssm = ssm::SsmLayer::init(toy_ssm_config(config), srng);
  // Real diagonal spectrum lambda_p = -(p + 1) and unit step scale.
  ssm::SsmGroup& g = m.ssm.groups.at(0);
  for (std::size_t p = 0; p < config.states; ++p) {
    g.lambda_re.bias[p] = ssm::reparam_preimage(-static_cast<double>(p + 1), ssm::Reparam::exp);
  }
  g.log_step.fill(0.0);
  return m;
}

std::size_t ToyModel::parameter_count() {
  std::size_t n = 0;
  visit_params([&n](const std::string&, ad::Tensor& t) { n += t.size(); });
  return n;
}

std::size_t analytic_toy_parameter_count(const ToyConfig& c) {
  const std::size_t h = c.hidden, p = c.states, r = c.bc_rank;
  std::size_t n = kInputChannels * h;  // encoder
  n += p + p * h + p + h;              // theta, B, C, D
  if (c.kind == ToyKind::tides) n += h * p;
  if (c.kind == ToyKind::mamba) n += (h + 1) * p + p;
  if (c.kind != ToyKind::s5) n += (h * r + r * p * h) + (h * r + r * p);
  return n;
}

ToyConfig matched_toy_config(ToyKind kind, std::size_t base_hidden, std::size_t states, std::size_t bc_rank) {
  ToyConfig c{kind, base_hidden, states, bc_rank};
  if (kind != ToyKind::s5) return c;
  const std::size_t goal = analytic_toy_parameter_count({ToyKind::tides, base_hidden, states, bc_rank});
  auto gap = [&](std::size_t h) {
    const double n = static_cast<double>(analytic_toy_parameter_count({ToyKind::s5, h, states, bc_rank}));
    return std::abs(n - static_cast<double>(goal));
  };
  std::size_t best = 1;
  for (std::size_t h = 1; h <= 64 * goal; ++h) {
    if (gap(h) < gap(best)) best = h;
    if (analytic_toy_parameter_count({ToyKind::s5, h, states, bc_rank}) > goal) break;
  }
  c.hidden = best;
  return c;
}

ad::Var toy_forward(ad::ParamBinder& bind, const ToyModel& model, ad::Var u, ad::Var delta, std::size_t seq_len) {
  ad::Var h = ad::matmul(u, bind(model.w_enc));
  return ssm::ssm_forward(bind, model.ssm, h, delta, seq_len);
}

namespace {

struct Batch {
  ad::Tensor u, delta, target;
};

Batch make_batch(const std::vector<FlashSequence>& seqs) {
  const std::size_t n = seqs.size() * kSeqLen;
  Batch b{ad::Tensor({n, kInputChannels}), ad::Tensor({n, 1}), ad::Tensor({n, 1})};
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const FlashSequence& s = seqs[i];
    if (s.length() != kSeqLen) throw std::invalid_argument("fading flash: sequence length must be 40");
    const std::vector<double> u = s.input();
    std::copy(u.begin(), u.end(), b.u.data().begin() + static_cast<std::ptrdiff_t>(i * kSeqLen * kInputChannels));
    for (std::size_t k = 0; k < kSeqLen; ++k) {
      b.delta[i * kSeqLen + k] = s.delta;
      b.target[i * kSeqLen + k] = s.target[k];
    }
  }
  return b;
}

}  // namespace

Predictor model_predictor(const ToyModel& model) {
  return [model](const std::vector<FlashSequence>& seqs) {
    const Batch b = make_batch(seqs);
    ad::Tape tape;
    ad::ParamBinder bind(tape);
    const ad::Tensor y = toy_forward(bind, model, tape.constant(b.u), tape.constant(b.delta)).value();
    std::vector<std::vector<double>> out(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      out[i].assign(y.data().begin() + static_cast<std::ptrdiff_t>(i * kSeqLen),
                    y.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * kSeqLen));
    }
    return out;
  };
}

Predictor oracle_predictor() {
  return [](const std::vector<FlashSequence>& seqs) {
    std::vector<std::vector<double>> out;
    for (const FlashSequence& s : seqs) out.push_back(compute_target(s));
    return out;
  };
}

double TrainResult::final_loss() const {
  if (losses.empty()) throw std::logic_error("train: no recorded losses");
  const std::size_t n = std::min<std::size_t>(100, losses.size());
  double s = 0.0;
  for (std::size_t i = losses.size() - n; i < losses.size(); ++i) s += losses[i];
  return s / static_cast<double>(n);
}

TrainResult train_toy(const ToyConfig& config, std::uint64_t seed, const TrainConfig& train) {
  if (train.batch == 0) throw std::invalid_argument("train: batch must be positive");
  const Rng root(seed);
  Rng init_rng = root.split("init").split(to_string(config.kind));
  Rng data_rng = root.split("train-data");
  TrainResult result{ToyModel::build(config, init_rng), {}};
  ToyModel& model = result.model;

  std::vector<ad::Tensor*> params;
  model.visit_params([&params](const std::string&, ad::Tensor& t) { params.push_back(&t); });
  ad::AdamState adam;
  adam.config.lr = train.lr;
  result.losses.reserve(train.steps);

  std::vector<FlashSequence> seqs(train.batch);
  std::vector<ad::Tensor> grads(params.size());
  for (std::size_t step = 0; step < train.steps; ++step) {
    for (FlashSequence& s : seqs) s = generate_sequence(data_rng, data_rng.uniform(train.delta_lo, train.delta_hi));
    const Batch b = make_batch(seqs);
    ad::Tape tape;
    ad::ParamBinder bind(tape);
    ad::Var pred = toy_forward(bind, model, tape.constant(b.u), tape.constant(b.delta));
    ad::Var loss = ad::mse(pred, tape.constant(b.target));
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      throw std::runtime_error("train " + std::string(to_string(config.kind)) + ": non-finite loss at step " +
                               std::to_string(step + 1));
    }
    result.losses.push_back(value);
    const ad::Gradients g = tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const ad::Var leaf = bind.find(*params[i]);
      grads[i] = leaf.valid() ? g[leaf] : ad::Tensor(params[i]->shape());
    }
    ad::adam_step(params, grads, adam);
  }
  return result;
}

double relative_error_pct(double mse, double variance) {
  if (!(variance > 0.0)) throw std::runtime_error("fading flash: target variance is not positive");
  if (!(mse >= 0.0)) throw std::invalid_argument("fading flash: negative mse");
  return std::sqrt(mse / variance) * 100.0;
}

std::vector<GridPoint> evaluate_grid(const Predictor& predict, std::uint64_t seed, const EvalConfig& eval) {
  const Rng root = Rng(seed).split("eval");
  std::vector<GridPoint> report;
  for (std::size_t gi = 0; gi < eval.deltas.size(); ++gi) {
    const double delta = eval.deltas[gi];
    const Rng point = root.split(gi);
    Rng var_rng = point.split("variance");
    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < eval.var_batches * eval.var_batch_size; ++i) {
      for (double y : generate_sequence(var_rng, delta).target) {
        sum += y;
        sum_sq += y * y;
        ++count;
      }
    }
    const double mean = sum / static_cast<double>(count);
    const double variance = (sum_sq - static_cast<double>(count) * mean * mean) / static_cast<double>(count - 1);

    Rng eval_rng = point.split("mse");
    double se = 0.0;
    std::size_t n = 0;
    for (std::size_t bi = 0; bi < eval.eval_batches; ++bi) {
      std::vector<FlashSequence> seqs;
      for (std::size_t i = 0; i < eval.eval_batch_size; ++i) seqs.push_back(generate_sequence(eval_rng, delta));
      const auto pred = predict(seqs);
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        for (std::size_t k = 0; k < kSeqLen; ++k) {
          const double e = pred.at(i).at(k) - seqs[i].target[k];
          se += e * e;
          ++n;
        }
      }
    }
    const double mse = se / static_cast<double>(n);
    report.push_back({delta, mse, variance, relative_error_pct(mse, variance)});
  }
  return report;
}

double fit_decay_rate(const std::vector<double>& response, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("decay probe: delta must be positive");
  std::vector<double> xs, ys;
  for (std::size_t k = kProbeTailBegin; k < response.size(); ++k) {
    const double v = std::max(response[k], kProbeClamp);
    if (v > kProbeClamp) {
      xs.push_back(static_cast<double>(k));
      ys.push_back(std::log(v));
    }
  }
  if (xs.size() < 2) throw std::runtime_error("decay probe: flash response is below the clamp over the whole tail");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  return -(sxy / sxx) / delta;
}

double effective_decay_probe(const Predictor& predict, std::size_t zone, double delta) {
  const auto pred = predict({single_zone_sequence(zone, delta, {kProbeFlashAt}), single_zone_sequence(zone, delta, {})});
  std::vector<double> response(kSeqLen);
  for (std::size_t k = 0; k < kSeqLen; ++k) response[k] = pred.at(0).at(k) - pred.at(1).at(k);
  return fit_decay_rate(response, delta);
}

}  // namespace tides::flash
