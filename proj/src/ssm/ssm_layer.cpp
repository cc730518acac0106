#include "tides/ssm/ssm_layer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "tides/autodiff/ops.hpp"
#include "tides/ssm/scan.hpp"

namespace tides::ssm {

DeltaMode parse_delta_mode(std::string_view name) {
  if (name == "physical") return DeltaMode::physical;
  if (name == "learned_gate" || name == "gate") return DeltaMode::learned_gate;
  throw std::invalid_argument("unknown delta mode '" + std::string(name) + "'");
}

std::string_view to_string(DeltaMode m) { return m == DeltaMode::physical ? "physical" : "learned_gate"; }

StateReadout parse_readout(std::string_view name) {
  if (name == "post_update" || name == "post") return StateReadout::post_update;
  if (name == "pre_update" || name == "pre") return StateReadout::pre_update;
  throw std::invalid_argument("unknown state readout '" + std::string(name) + "'");
}

std::string_view to_string(StateReadout r) { return r == StateReadout::post_update ? "post_update" : "pre_update"; }

void SsmConfig::validate() const {
  if (input_dim == 0 || output_dim == 0) throw std::invalid_argument("ssm: zero input or output width");
  if (groups == 0 || group_size == 0) throw std::invalid_argument("ssm: need at least one group of one mode");
  if (selectivity.bc && bc_rank == 0) throw std::invalid_argument("ssm: selective B/C needs bc_rank >= 1");
  if (selectivity.lambda_im && !complex_state) {
    throw std::invalid_argument("ssm: input-dependent Im(lambda) requires a complex state");
  }
}

std::vector<std::pair<std::size_t, std::size_t>> group_ranges(std::size_t modes, std::size_t groups) {
  if (groups == 0 || modes % groups != 0) {
    throw std::invalid_argument("cannot split " + std::to_string(modes) + " modes into " + std::to_string(groups) +
                                " equal groups");
  }
  const std::size_t m = modes / groups;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t g = 0; g < groups; ++g) out.emplace_back(g * m, (g + 1) * m);
  return out;
}

namespace {

std::size_t state_width(const SsmConfig& c) { return c.complex_state ? 2 * c.group_size : c.group_size; }

std::size_t readout_width(const SsmConfig& c) {
  const std::size_t s = c.group_size * c.directions();
  return c.complex_state ? 2 * s : s;
}

}  // namespace

SsmLayer SsmLayer::init(const SsmConfig& config, Rng& rng) {
  config.validate();
  SsmLayer layer;
  layer.config = config;
  const std::size_t h = config.input_dim, o = config.output_dim, m = config.group_size;
  const double bc_std = 1.0 / std::sqrt(static_cast<double>(config.modes()));
  const Selectivity& sel = config.selectivity;
  for (std::size_t gi = 0; gi < config.groups; ++gi) {
    Rng grng = rng.split("group" + std::to_string(gi));
    Rng srng = grng.split("spectrum");
    DiagonalSpectrum spec = hippo_init(m, config.reparam, config.clip_eigs, srng);
    SsmGroup g;
    HeadSpec lre{HeadTarget::lambda_re, h, sel.lambda_re, 0, config.lambda_depth, config.normalize, m};
    Rng hrng = grng.split("heads");
    g.lambda_re = make_head(lre, ad::Tensor({m}, spec.theta), hrng);
    if (config.complex_state) {
      HeadSpec lim{HeadTarget::lambda_im, h, sel.lambda_im, 0, config.lambda_depth, config.normalize, m};
      g.lambda_im = make_head(lim, ad::Tensor({m}, spec.lambda_im), hrng);
    }
    if (config.delta_mode == DeltaMode::physical) {
      g.log_step = ad::Tensor({m}, spec.log_step);
    } else {
      // Bias = softplus^{-1}(s) with s log-uniform in [kMinInitStep, kMaxInitStep].
      ad::Tensor bias({m});
      for (double& b : bias.data()) b = std::log(std::expm1(std::exp(srng.uniform(std::log(kMinInitStep),
                                                                                   std::log(kMaxInitStep)))));
      g.gate_b = std::move(bias);
      g.gate_w = gaussian({h + 1, m}, 1.0 / std::sqrt(static_cast<double>(h + 1)), hrng);
    }
    Rng brng = grng.split("bc");
    const std::size_t q = state_width(config);
    HeadSpec bs{HeadTarget::b, h, sel.bc, config.bc_rank, 0, config.normalize, m * h};
    g.b = make_head(bs, gaussian({q * h}, bc_std, brng), hrng);
    const std::size_t cw = readout_width(config);
    HeadSpec cs{HeadTarget::c, h, sel.bc, config.bc_rank, 0, config.normalize, o * m * config.directions()};
    g.c = make_head(cs, gaussian({o * cw}, bc_std, brng), hrng);
    layer.groups.push_back(std::move(g));
  }
  layer.d = config.diagonal_feedthrough() ? ad::Tensor({h}, 1.0) : ad::Tensor({h, o});
  layer.validate();
  return layer;
}

void SsmLayer::validate() const {
  config.validate();
  if (groups.size() != config.groups) throw std::invalid_argument("ssm: group count does not match config");
  const std::size_t h = config.input_dim, o = config.output_dim, m = config.group_size;
  for (const SsmGroup& g : groups) {
    g.lambda_re.validate();
    g.b.validate();
    g.c.validate();
    if (g.lambda_re.out_dim() != m) throw std::invalid_argument("ssm: theta has wrong length");
    if (config.complex_state) {
      g.lambda_im.validate();
      if (g.lambda_im.out_dim() != m) throw std::invalid_argument("ssm: Im(lambda) has wrong length");
    }
    if (g.b.out_dim() != state_width(config) * h) throw std::invalid_argument("ssm: B has wrong size");
    if (g.c.out_dim() != o * readout_width(config)) throw std::invalid_argument("ssm: C has wrong size");
    for (const SelectivityHead* head : {&g.lambda_re, &g.lambda_im, &g.b, &g.c}) {
      if (head->selective() && head->in_dim() != h) {
        throw std::invalid_argument("ssm: head " + std::string(to_string(head->target)) + " expects width " +
                                    std::to_string(head->in_dim()));
      }
    }
    if (config.delta_mode == DeltaMode::physical) {
      if (g.log_step.shape() != ad::Shape{m}) throw std::invalid_argument("ssm: log_step has wrong length");
    } else if (!g.gate_w || !g.gate_b || g.gate_w->shape() != ad::Shape{h + 1, m} ||
               g.gate_b->shape() != ad::Shape{m}) {
      throw std::invalid_argument("ssm: learned-gate mode needs gate weights [H+1, m] and bias [m]");
    }
  }
  const ad::Shape want_d = config.diagonal_feedthrough() ? ad::Shape{h} : ad::Shape{h, o};
  if (d.shape() != want_d) throw std::invalid_argument("ssm: D has shape " + ad::shape_str(d.shape()));
}

DiagonalSpectrum SsmLayer::spectrum(std::size_t group) const {
  const SsmGroup& g = groups.at(group);
  DiagonalSpectrum s;
  s.theta = g.lambda_re.bias.vec();
  s.lambda_im = config.complex_state ? g.lambda_im.bias.vec() : std::vector<double>(config.group_size, 0.0);
  s.log_step = g.log_step.vec();
  s.reparam = config.reparam;
  s.clip_eigs = config.clip_eigs;
  return s;
}

std::size_t SsmLayer::parameter_count() {
  std::size_t n = 0;
  visit_params([&n](const std::string&, ad::Tensor& t) { n += t.size(); });
  return n;
}

namespace {

void check_finite(const ad::Var& v, std::string_view head) {
  for (double x : v.value().data()) {
    if (std::isnan(x)) throw std::domain_error("ssm: head " + std::string(head) + " produced NaN");
  }
}

ad::Var head_output(ad::ParamBinder& bind, const SelectivityHead& head, ad::Var u, SsmTrace* trace) {
  if (head.selective() && trace) trace->head_inputs.push_back(u.id);
  ad::Var out = apply_head(bind, head, u);
  check_finite(out, to_string(head.target));
  return out;
}

// Per-row product M_k x_k, where M_k [rows, cols] is the head output for
// step k. A factored head without normalization never builds M_k:
//   M_k x_k = M_0 x_k + sum_r z_kr (U_r x_k),   z = g(u) W_down,
// with U_r row r of W_up viewed as [rows, cols].
ad::Var project(ad::ParamBinder& bind, const SelectivityHead& head, ad::Var u, ad::Var x, std::size_t rows,
                std::size_t cols, SsmTrace* trace) {
  if (!head.selective()) return ad::matmul(x, ad::transpose(ad::reshape(bind(head.bias), {rows, cols})));
  if (!head.w_down || head.normalize) return ad::row_matvec(head_output(bind, head, u, trace), x);
  if (trace) trace->head_inputs.push_back(u.id);
  ad::Var z = ad::matmul(apply_glu_blocks(bind, head.blocks, u), bind(*head.w_down));
  ad::Var base = ad::matmul(x, ad::transpose(ad::reshape(bind(head.bias), {rows, cols})));
  ad::Var per_rank = ad::matmul(x, ad::transpose(ad::reshape(bind(*head.w_up), {head.rank() * rows, cols})));
  ad::Var out = ad::add(base, ad::row_combine(per_rank, z));
  check_finite(out, to_string(head.target));
  return out;
}

// Re(C x) for every row as a dot product against [Re x | -Im x].
ad::Var group_forward(ad::ParamBinder& bind, const SsmConfig& cfg, const SsmGroup& g, ad::Var u, ad::Var delta,
                      std::size_t seq_len, SsmTrace* trace) {
  const std::size_t h = cfg.input_dim, m = cfg.group_size, o = cfg.output_dim;

  ad::Var re = reparameterize(head_output(bind, g.lambda_re, u, trace), cfg.reparam);
  if (cfg.clip_eigs) re = ad::clamp(re, -std::numeric_limits<double>::infinity(), kEigenFloor);

  ad::Var step;
  if (cfg.delta_mode == DeltaMode::physical) {
    step = ad::matmul(delta, ad::reshape(ad::exp(bind(g.log_step)), {1, m}));
  } else {
    ad::Var gate_in = ad::concat({u, delta});
    if (trace) trace->gate_inputs.push_back(gate_in.id);
    step = ad::softplus(ad::add(ad::matmul(gate_in, bind(*g.gate_w)), bind(*g.gate_b)));
  }

  ad::Var z;
  if (cfg.complex_state) {
    ad::Var im = head_output(bind, g.lambda_im, u, trace);
    z = ad::concat({ad::mul(re, step), ad::mul(im, step)});
  } else {
    z = ad::complex_from_real(ad::mul(re, step));
  }
  DiscretizedVars dv = discretize(z, step, cfg.disc);

  const std::size_t q = state_width(cfg);
  ad::Var bu = project(bind, g.b, u, u, q, h, trace);
  if (!cfg.complex_state) bu = ad::complex_from_real(bu);
  ad::Var drive = ad::complex_mul(dv.input_coefficient, bu);

  std::vector<ad::Var> states{linear_scan(dv.a_bar, drive, seq_len, ScanDirection::forward)};
  if (cfg.bidirectional) states.push_back(linear_scan(dv.a_bar, drive, seq_len, ScanDirection::reverse));
  if (cfg.readout == StateReadout::pre_update) {
    states[0] = previous_states(states[0], seq_len, ScanDirection::forward);
    if (cfg.bidirectional) states[1] = previous_states(states[1], seq_len, ScanDirection::reverse);
  }

  std::vector<ad::Var> parts;
  for (const ad::Var& x : states) parts.push_back(ad::complex_real(x));
  if (cfg.complex_state) {
    for (const ad::Var& x : states) parts.push_back(ad::neg(ad::complex_imag(x)));
  }
  ad::Var xc = parts.size() == 1 ? parts[0] : ad::concat(parts);

  return project(bind, g.c, u, xc, o, readout_width(cfg), trace);
}

}  // namespace

ad::Var ssm_forward(ad::ParamBinder& bind, const SsmLayer& layer, ad::Var u, ad::Var delta, std::size_t seq_len,
                    SsmTrace* trace) {
  const SsmConfig& cfg = layer.config;
  const ad::Tensor& uv = u.value();
  if (uv.rank() != 2 || uv.cols() != cfg.input_dim) {
    throw std::invalid_argument("ssm_forward: input shape " + ad::shape_str(uv.shape()) + ", expected width " +
                                std::to_string(cfg.input_dim));
  }
  if (seq_len == 0 || uv.rows() % seq_len != 0 || uv.rows() == 0) {
    throw std::invalid_argument("ssm_forward: " + std::to_string(uv.rows()) + " rows do not form sequences of " +
                                std::to_string(seq_len));
  }
  if (delta.value().shape() != ad::Shape{uv.rows(), 1}) {
    throw std::invalid_argument("ssm_forward: delta shape " + ad::shape_str(delta.shape()) + ", expected [" +
                                std::to_string(uv.rows()) + ", 1]");
  }
  for (double d : delta.value().data()) {
    if (!(d > 0.0)) throw std::domain_error("ssm_forward: step sizes must be positive, got " + std::to_string(d));
  }
  if (trace) trace->delta_node = delta.id;

  ad::Var y;
  for (const SsmGroup& g : layer.groups) {
    ad::Var yg = group_forward(bind, cfg, g, u, delta, seq_len, trace);
    y = y.valid() ? ad::add(y, yg) : yg;
  }
  ad::Var dv = bind(layer.d);
  return ad::add(y, cfg.diagonal_feedthrough() ? ad::mul(u, dv) : ad::matmul(u, dv));
}

namespace {

ad::Tensor take(const ad::Tensor& t, const std::vector<std::size_t>& idx) {
  ad::Tensor out({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = t[idx[i]];
  return out;
}

ad::Tensor take_columns(const ad::Tensor& t, const std::vector<std::size_t>& idx) {
  const std::size_t r = t.shape()[0], c = t.shape()[1];
  ad::Tensor out({r, idx.size()});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < idx.size(); ++j) out[i * idx.size() + j] = t[i * c + idx[j]];
  }
  return out;
}

std::vector<std::size_t> range(std::size_t b, std::size_t e) {
  std::vector<std::size_t> v;
  for (std::size_t i = b; i < e; ++i) v.push_back(i);
  return v;
}

}  // namespace

SsmLayer split_groups(const SsmLayer& whole, std::size_t groups) {
  if (whole.groups.size() != 1) throw std::invalid_argument("split_groups: layer is already grouped");
  const SsmConfig& wc = whole.config;
  if (wc.normalize) throw std::invalid_argument("split_groups: normalized heads do not factor over groups");
  const std::size_t p = wc.modes(), h = wc.input_dim, o = wc.output_dim, dirs = wc.directions();
  const auto ranges = group_ranges(p, groups);
  const SsmGroup& src = whole.groups[0];

  SsmLayer out;
  out.config = wc;
  out.config.groups = groups;
  out.config.group_size = p / groups;
  out.d = whole.d;
  for (auto [b, e] : ranges) {
    const std::vector<std::size_t> modes = range(b, e);
    SsmGroup g;
    auto slice_head = [&](const SelectivityHead& head, const std::vector<std::size_t>& idx) {
      SelectivityHead s = head;
      s.bias = take(head.bias, idx);
      if (head.w_full) s.w_full = take_columns(*head.w_full, idx);
      if (head.w_up) s.w_up = take_columns(*head.w_up, idx);
      return s;
    };
    g.lambda_re = slice_head(src.lambda_re, modes);
    if (wc.complex_state) g.lambda_im = slice_head(src.lambda_im, modes);
    g.log_step = src.log_step.size() ? take(src.log_step, modes) : ad::Tensor();
    if (src.gate_w) g.gate_w = take_columns(*src.gate_w, modes);
    if (src.gate_b) g.gate_b = take(*src.gate_b, modes);

    // B rows: real block then imaginary block, each p x H.
    std::vector<std::size_t> bidx;
    const std::size_t parts = wc.complex_state ? 2 : 1;
    for (std::size_t part = 0; part < parts; ++part) {
      for (std::size_t mode : modes) {
        for (std::size_t j = 0; j < h; ++j) bidx.push_back((part * p + mode) * h + j);
      }
    }
    g.b = slice_head(src.b, bidx);

    // C per output: parts x dirs x p columns.
    std::vector<std::size_t> cidx;
    const std::size_t cw = parts * dirs * p;
    for (std::size_t oi = 0; oi < o; ++oi) {
      for (std::size_t part = 0; part < parts; ++part) {
        for (std::size_t dir = 0; dir < dirs; ++dir) {
          for (std::size_t mode : modes) cidx.push_back(oi * cw + (part * dirs + dir) * p + mode);
        }
      }
    }
    g.c = slice_head(src.c, cidx);
    out.groups.push_back(std::move(g));
  }
  out.validate();
  return out;
}

}  // namespace tides::ssm
