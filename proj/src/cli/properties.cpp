#include "tides/cli/properties.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <stdexcept>

#include "tides/autodiff/gradcheck.hpp"
#include "tides/autodiff/ops.hpp"
#include "tides/block/model.hpp"
#include "tides/drop/drop_harness.hpp"
#include "tides/flash/fading_flash.hpp"
#include "tides/ssm/discretize.hpp"
#include "tides/ssm/scan.hpp"
#include "tides/ssm/ssm_layer.hpp"

namespace tides::cli {

namespace {

using ssm::cplx;

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

ad::Tensor normal_tensor(ad::Shape shape, Rng& rng, double scale = 1.0) {
  ad::Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

struct Outcome {
  bool pass;
  std::string detail;
};

Outcome scan_property(const VerifyOptions& o) {
  const ssm::CombineOrder order = o.flip_scan_combine ? ssm::CombineOrder::flipped : ssm::CombineOrder::standard;
  double worst = 0.0;
  std::size_t worst_len = 0;
  for (std::size_t len : {1, 2, 3, 17, 1024, 4096}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng = Rng(seed).split("verify-scan").split(len);
      std::vector<ssm::ScanElement> es(len);
      for (ssm::ScanElement& e : es) {
        for (int p = 0; p < 4; ++p) {
          e.a.push_back(std::polar(rng.uniform(0.0, 0.999), rng.uniform(-M_PI, M_PI)));
          e.b.emplace_back(rng.normal(), rng.normal());
        }
      }
      const auto par = ssm::parallel_scan(es, order), seq = ssm::sequential_scan(es);
      for (std::size_t k = 0; k < len; ++k) {
        for (std::size_t p = 0; p < 4; ++p) {
          const double rel = std::abs(par[k][p] - seq[k][p]) / std::max(std::abs(seq[k][p]), 1e-12);
          if (rel > worst) {
            worst = rel;
            worst_len = len;
          }
        }
      }
    }
  }
  return {worst < o.tol.scan_rel,
          "max relative error " + sci(worst) + " (L=" + std::to_string(worst_len) + ") vs " + sci(o.tol.scan_rel)};
}

Outcome gradient_property(const VerifyOptions& o) {
  using namespace flash;
  Rng rng = Rng(0).split("verify-grad");
  ToyConfig tc;
  tc.kind = ToyKind::tides;
  ToyModel m = ToyModel::build(tc, rng);
  // Move every projection off zero so all parameters carry gradient.
  ssm::SsmGroup& g = m.ssm.groups.at(0);
  g.lambda_re.w_full = normal_tensor(g.lambda_re.w_full->shape(), rng, 0.1);
  g.b.w_up = normal_tensor(g.b.w_up->shape(), rng, 0.1);
  g.c.w_up = normal_tensor(g.c.w_up->shape(), rng, 0.1);
  m.ssm.d = normal_tensor(m.ssm.d.shape(), rng, 0.3);

  const std::size_t batch = 8;
  ad::Tensor u({batch * kSeqLen, kInputChannels}), delta({batch * kSeqLen, 1}), target({batch * kSeqLen, 1});
  for (std::size_t b = 0; b < batch; ++b) {
    const FlashSequence s = generate_sequence(rng, rng.uniform(0.5, 1.5));
    const std::vector<double> in = s.input();
    for (std::size_t k = 0; k < kSeqLen; ++k) {
      const std::size_t r = b * kSeqLen + k;
      for (std::size_t c = 0; c < kInputChannels; ++c) u.at(r, c) = in[k * kInputChannels + c];
      delta[r] = s.delta;
      target[r] = s.target[k];
    }
  }
  std::vector<ad::Tensor*> params;
  m.visit_params([&](const std::string&, ad::Tensor& t) { params.push_back(&t); });
  const ad::GradCheckResult r = ad::check_param_gradients(
      params,
      [&](ad::ParamBinder& bind) {
        ad::Tape& tape = bind.tape();
        return ad::mse(toy_forward(bind, m, tape.constant(u), tape.constant(delta)), tape.constant(target));
      },
      o.tol.grad_step);
  return {r.max_rel_error < o.tol.grad_rel, "max relative error " + sci(r.max_rel_error) + " over " +
                                                std::to_string(m.parameter_count()) + " parameters vs " +
                                                sci(o.tol.grad_rel)};
}

Outcome zoh_property(const VerifyOptions& o) {
  double worst = 0.0, worst_semi = 0.0;
  const std::vector<double> no_scale = {0.0};
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    Rng rng = Rng(draw).split("verify-zoh");
    const cplx lambda(-rng.uniform(0.05, 3.0), rng.uniform(-4.0, 4.0));
    const cplx b(rng.normal(), rng.normal());
    const std::size_t n = 1 + rng.index(40);
    std::vector<double> dt(n), u(n), t(n + 1, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      dt[k] = rng.uniform(0.01, 2.0);
      u[k] = rng.normal();
      t[k + 1] = t[k] + dt[k];
    }
    cplx x = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const ssm::Discretized d = ssm::discretize_zoh(std::span(&lambda, 1), std::span(&b, 1), dt[k], no_scale);
      x = d.a_bar[0] * x + d.b_bar[0] * u[k];
      // x(t) = sum_j u_j b \int_{t_j}^{t_{j+1}} e^{lambda (t - s)} ds for the held inputs so far.
      cplx exact = 0.0;
      for (std::size_t j = 0; j <= k; ++j) {
        exact += u[j] * b * (std::exp(lambda * (t[k + 1] - t[j])) - std::exp(lambda * (t[k + 1] - t[j + 1]))) / lambda;
      }
      worst = std::max(worst, std::abs(x - exact));
    }
    const double d1 = rng.uniform(0.01, 2.0), d2 = rng.uniform(0.01, 2.0);
    auto a_of = [&](double dd) {
      return ssm::discretize_zoh(std::span(&lambda, 1), std::span(&b, 1), dd, no_scale).a_bar[0];
    };
    worst_semi = std::max(worst_semi, std::abs(a_of(d1) * a_of(d2) - a_of(d1 + d2)));
  }
  return {worst < o.tol.zoh_abs && worst_semi < o.tol.semigroup_abs,
          "max |x - x_exact| " + sci(worst) + " vs " + sci(o.tol.zoh_abs) + "; semigroup " + sci(worst_semi) +
              " vs " + sci(o.tol.semigroup_abs)};
}

Outcome zero_init_property(const VerifyOptions& o) {
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    Rng rng = Rng(i).split("verify-zero-init");
    ssm::SsmConfig c;
    c.input_dim = 4;
    c.output_dim = 4;
    c.groups = 1 + i % 2;
    c.group_size = 4;
    c.bidirectional = i % 3 == 0;
    c.disc = i % 4 == 1 ? ssm::Discretization::bilinear : ssm::Discretization::zoh;
    c.bc_rank = 2;
    c.selectivity = {true, i % 2 == 0, true};
    const ssm::SsmLayer tides_layer = ssm::SsmLayer::init(c, rng);
    if (!tides_layer.groups[0].b.selective() || !tides_layer.groups[0].lambda_re.selective()) {
      return {false, "TIDES layer was built without selective heads"};
    }
    ssm::SsmConfig lti = c;
    lti.selectivity = {};
    ssm::SsmLayer s5 = ssm::SsmLayer::init(lti, rng);
    for (std::size_t gi = 0; gi < s5.groups.size(); ++gi) {
      const ssm::SsmGroup& from = tides_layer.groups[gi];
      ssm::SsmGroup& to = s5.groups[gi];
      to.lambda_re.bias = from.lambda_re.bias;
      to.lambda_im.bias = from.lambda_im.bias;
      to.b.bias = from.b.bias;
      to.c.bias = from.c.bias;
      to.log_step = from.log_step;
    }
    s5.d = tides_layer.d;
    const std::size_t len = 12, seqs = 2;
    const ad::Tensor u = normal_tensor({seqs * len, 4}, rng);
    ad::Tensor delta({seqs * len, 1});
    for (double& d : delta.data()) d = rng.uniform(0.1, 2.0);
    ad::Tape tape;
    ad::ParamBinder bind(tape);
    const ad::Tensor a = ssm::ssm_forward(bind, tides_layer, tape.constant(u), tape.constant(delta), len).value();
    const ad::Tensor b = ssm::ssm_forward(bind, s5, tape.constant(u), tape.constant(delta), len).value();
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  }
  return {worst < o.tol.zero_init_abs,
          "max |TIDES - S5| " + sci(worst) + " over 50 inputs vs " + sci(o.tol.zero_init_abs)};
}

// y_k as a sum of independent flash responses, each decaying with the rate
// of every zone it passes through.
std::vector<double> superposition(const flash::FlashSequence& s) {
  std::vector<double> y(s.length(), 0.0);
  for (std::size_t j = 0; j < s.length(); ++j) {
    if (s.flashes[j] == 0.0) continue;
    const double lj = flash::kZoneRates[s.zones[j]];
    double amp = -std::expm1(-lj * s.delta) / lj;
    for (std::size_t k = j; k < s.length(); ++k) {
      if (k > j) amp *= std::exp(-flash::kZoneRates[s.zones[k]] * s.delta);
      y[k] += amp;
    }
  }
  return y;
}

Outcome generator_property(const VerifyOptions& o) {
  Rng rng = Rng(0).split("verify-generator");
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const flash::FlashSequence s = flash::generate_sequence(rng, rng.uniform(0.1, 2.0));
    try {
      flash::check_invariants(s);
    } catch (const std::logic_error& e) {
      return {false, "draw " + std::to_string(i) + ": " + e.what()};
    }
    const std::vector<double> want = superposition(s), got = flash::compute_target(s);
    for (std::size_t k = 0; k < got.size(); ++k) worst = std::max(worst, std::abs(got[k] - want[k]));
  }
  return {worst < o.tol.generator_abs,
          "10000 draws valid; max |target - oracle| " + sci(worst) + " vs " + sci(o.tol.generator_abs)};
}

Outcome block_property(const VerifyOptions& o) {
  Rng rng = Rng(0).split("verify-block");
  block::ModelConfig c;
  c.input_dim = 3;
  c.hidden = 6;
  c.ssm_mult = 4;
  c.bc_rank = 2;
  c.selectivity = {true, false, true};
  c.output_dim = 2;
  c.drop_rate = 0.2;
  block::Model m = block::Model::init(c, rng);
  const std::size_t len = 10, rows = 3 * len;
  ad::Tensor delta({rows, 1});
  for (double& d : delta.data()) d = rng.uniform(0.5, 1.5);
  const ad::Tensor x = normal_tensor({rows, 6}, rng);

  std::vector<std::string> log;
  {
    ad::Tape tape;
    ad::ParamBinder bind(tape);
    block::Block b = m.blocks[0];
    block::block_forward(bind, b, tape.constant(x), tape.constant(delta), len, c.drop_rate, {true, &rng, &log});
  }
  const std::vector<std::string> order = {"BN", "SSM", "GELU", "Dropout", "GLU", "Dropout", "residual-add"};
  if (log != order) return {false, "sub-layer order differs from BN, SSM, GELU, Dropout, GLU, Dropout, residual-add"};

  double identity = 0.0;
  {
    block::Block b = m.blocks[0];
    b.ssm.visit_params([](const std::string&, ad::Tensor& t) { t.fill(0.0); });
    b.ff.visit_params("ff", [](const std::string&, ad::Tensor& t) { t.fill(0.0); });
    ad::Tape tape;
    ad::ParamBinder bind(tape);
    const ad::Tensor z =
        block::block_forward(bind, b, tape.constant(x), tape.constant(delta), len, 0.0, {}).value();
    for (std::size_t k = 0; k < z.size(); ++k) identity = std::max(identity, std::abs(z[k] - x[k]));
  }

  double worst_mean = 0.0, var_lo = INFINITY, var_hi = -INFINITY;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 64, ch = 5;
    ad::Tensor xb = normal_tensor({n, ch}, rng, rng.uniform(0.1, 10.0));
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < ch; ++j) xb.at(r, j) += 3.0 * static_cast<double>(j);
    }
    block::BatchNorm bn(ch);
    ad::Tape tape;
    const ad::Tensor y = block::batchnorm_no_affine(tape.constant(xb), bn, true).value();
    for (std::size_t j = 0; j < ch; ++j) {
      double mean = 0.0, var = 0.0;
      for (std::size_t r = 0; r < n; ++r) mean += y.at(r, j) / static_cast<double>(n);
      for (std::size_t r = 0; r < n; ++r) var += (y.at(r, j) - mean) * (y.at(r, j) - mean) / static_cast<double>(n);
      worst_mean = std::max(worst_mean, std::abs(mean));
      var_lo = std::min(var_lo, var);
      var_hi = std::max(var_hi, var);
    }
  }
  const bool pass = identity < o.tol.block_identity_abs && worst_mean < o.tol.bn_mean_abs &&
                    var_lo >= o.tol.bn_var_lo && var_hi <= o.tol.bn_var_hi;
  return {pass, "order ok; zero-weight |z - x| " + sci(identity) + "; BN |mean| " + sci(worst_mean) + ", var in [" +
                    sci(var_lo) + ", " + sci(var_hi) + "]"};
}

Outcome drop_timestamp_property(const VerifyOptions& o) {
  Rng rng = Rng(0).split("verify-drop");
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    drop::TimestampedSeries s;
    double t = rng.uniform(-5.0, 5.0);
    for (int k = 0; k < 200; ++k) {
      t += rng.uniform(0.01, 3.0);
      s.timestamps.push_back(t);
      s.values.push_back(rng.normal());
    }
    for (double r : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const drop::DropPlan p = drop::sample_drop(rng, r, s.length());
      const drop::TimestampedSeries out = drop::apply_drop(s, p);
      const std::vector<double> g = drop::gaps(out);
      for (std::size_t i = 0; i < out.length(); ++i) {
        if (out.timestamps[i] != s.timestamps[p.kept[i]]) return {false, "kept timestamp differs from the original"};
        if (i + 1 < out.length()) {
          worst = std::max(worst, std::abs(g[i] - (s.timestamps[p.kept[i + 1]] - s.timestamps[p.kept[i]])));
        }
      }
      if (drop::fixed_drop(7, static_cast<std::size_t>(trial), r, 200).kept !=
          drop::fixed_drop(7, static_cast<std::size_t>(trial), r, 200).kept) {
        return {false, "fixed evaluation plan is not reproducible"};
      }
    }
  }
  return {worst < o.tol.timestamp_abs, "subsequence ok; max gap error " + sci(worst)};
}

using PropertyFn = std::function<Outcome(const VerifyOptions&)>;

const std::vector<std::pair<std::string, PropertyFn>>& registry() {
  static const std::vector<std::pair<std::string, PropertyFn>> r = {
      {"scan", scan_property},           {"gradient", gradient_property},   {"zoh", zoh_property},
      {"zero_init", zero_init_property}, {"generator", generator_property}, {"block", block_property},
      {"drop_timestamps", drop_timestamp_property},
  };
  return r;
}

}  // namespace

const std::vector<std::string>& property_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, fn] : registry()) n.push_back(name);
    return n;
  }();
  return names;
}

PropertyResult run_property(const std::string& name, const VerifyOptions& options) {
  for (const auto& [n, fn] : registry()) {
    if (n != name) continue;
    const auto t0 = std::chrono::steady_clock::now();
    PropertyResult r{name, false, "", 0.0};
    try {
      const Outcome out = fn(options);
      r.pass = out.pass;
      r.detail = out.detail;
    } catch (const std::exception& e) {
      r.detail = std::string("threw: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }
  throw std::invalid_argument("unknown property '" + name + "'");
}

std::vector<PropertyResult> run_properties(const VerifyOptions& options) {
  for (const std::string& n : options.only) {
    if (std::find(property_names().begin(), property_names().end(), n) == property_names().end()) {
      throw std::invalid_argument("unknown property '" + n + "'");
    }
  }
  std::vector<PropertyResult> out;
  for (const std::string& n : property_names()) {
    if (options.only.empty() || std::find(options.only.begin(), options.only.end(), n) != options.only.end()) {
      out.push_back(run_property(n, options));
    }
  }
  return out;
}

}  // namespace tides::cli
