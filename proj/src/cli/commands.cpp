#include "tides/cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "tides/autodiff/ops.hpp"
#include "tides/block/model.hpp"
#include "tides/cli/output.hpp"
#include "tides/drop/drop_harness.hpp"
#include "tides/flash/fading_flash.hpp"

#ifndef TIDES_VERSION
#define TIDES_VERSION "unknown"
#endif

namespace tides::cli {

namespace {

using Clock = std::chrono::steady_clock;
using json = nlohmann::ordered_json;

std::ostream& log_of(const Invocation& inv) { return inv.log ? *inv.log : std::clog; }
std::ostream& out_of(const Invocation& inv) { return inv.out ? *inv.out : std::cout; }

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct Output {
  std::string dir;
  std::vector<std::string>* written;

  void file(const std::string& name, const std::string& content) const {
    write_file_atomic((std::filesystem::path(dir) / name).string(), content);
    written->push_back(name);
  }
  void chart(const std::string& name, const std::vector<ChartSeries>& series, const ChartSpec& spec) const {
    file(name, render_svg(series, spec));
  }
};

bool contains(const std::vector<double>& xs, double v) { return std::find(xs.begin(), xs.end(), v) != xs.end(); }
bool contains(const std::vector<std::string>& xs, const std::string& v) {
  return std::find(xs.begin(), xs.end(), v) != xs.end();
}

// ---------------------------------------------------------------- fading-flash

void fading_flash(const Invocation& inv, const CriterionTolerances& tol, const Output& out, CommandResult& res,
                  json& metrics) {
  const RunConfig& cfg = inv.config;
  const flash::EvalConfig eval = cfg.eval_config();
  std::ostream& log = log_of(inv);

  struct KindRun {
    std::string name;
    flash::Predictor predict;
    std::vector<flash::GridPoint> grid;
  };
  std::vector<KindRun> runs;
  std::vector<flash::TrainResult> trained;
  trained.reserve(cfg.ff_kinds.size());
  for (flash::ToyKind kind : cfg.kinds()) {
    const std::string name(flash::to_string(kind));
    const flash::ToyConfig tc = flash::matched_toy_config(kind, cfg.ff_hidden, cfg.ff_states, cfg.ff_bc_rank);
    const auto t0 = Clock::now();
    trained.push_back(flash::train_toy(tc, cfg.seed, cfg.train_config()));
    flash::TrainResult& tr = trained.back();
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    log << "fading-flash: trained " << name << " (H=" << tc.hidden << ", " << tr.model.parameter_count()
        << " params) final loss " << fmt("%.4g", tr.final_loss()) << " in " << fmt("%.1f", secs) << " s\n";
    metrics["final_loss"][name] = tr.final_loss();
    metrics["parameters"][name] = tr.model.parameter_count();
    KindRun run{name, flash::model_predictor(tr.model), {}};
    run.grid = flash::evaluate_grid(run.predict, cfg.seed, eval);
    runs.push_back(std::move(run));
  }

  std::string report = "kind,seed,delta,mse,variance,rel_error_pct\n";
  std::vector<ChartSeries> err_series;
  std::map<std::string, double> mean_err;
  for (const KindRun& r : runs) {
    ChartSeries s{r.name, {}, {}};
    double sum = 0.0;
    for (const flash::GridPoint& g : r.grid) {
      report += r.name + "," + std::to_string(cfg.seed) + "," + format_number(g.delta) + "," + format_number(g.mse) + "," +
                format_number(g.variance) + "," + format_number(g.rel_error_pct) + "\n";
      s.x.push_back(g.delta);
      s.y.push_back(g.rel_error_pct);
      sum += g.rel_error_pct;
    }
    mean_err[r.name] = sum / static_cast<double>(r.grid.size());
    metrics["mean_rel_error_pct"][r.name] = mean_err[r.name];
    err_series.push_back(std::move(s));
  }
  out.file("fading_flash_report.csv", report);
  out.chart("fading_flash_error.svg", err_series,
            {"Fading Flash: relative error vs step size", "Delta", "relative error (%)", true, true});

  // Decay probe for every trained kind plus the analytic generator.
  std::vector<std::pair<std::string, flash::Predictor>> probed;
  for (const KindRun& r : runs) probed.emplace_back(r.name, r.predict);
  probed.emplace_back("generator", flash::oracle_predictor());
  std::string probe_csv = "kind,zone_rate,delta,lambda_hat\n";
  std::vector<ChartSeries> probe_series;
  double worst_generator = 0.0;
  for (const auto& [name, predict] : probed) {
    for (std::size_t zone = 0; zone < flash::kZoneRates.size(); ++zone) {
      ChartSeries s{name + " rate " + format_number(flash::kZoneRates[zone]), {}, {}};
      for (double delta : eval.deltas) {
        double rate = NAN;
        try {
          rate = flash::effective_decay_probe(predict, zone, delta);
        } catch (const std::runtime_error&) {
          // Response below the clamp everywhere: no observable decay.
        }
        if (name == "generator") {
          const double err = std::isnan(rate) ? INFINITY : std::abs(rate - flash::kZoneRates[zone]);
          worst_generator = std::max(worst_generator, err);
        }
        probe_csv += name + "," + format_number(flash::kZoneRates[zone]) + "," + format_number(delta) + "," + format_number(rate) + "\n";
        s.x.push_back(delta);
        s.y.push_back(rate);
      }
      probe_series.push_back(std::move(s));
    }
  }
  out.file("decay_probe.csv", probe_csv);
  out.chart("decay_probe.svg", probe_series,
            {"Fading Flash: effective decay rate vs step size", "Delta", "fitted decay rate", true, false});

  auto err_at = [&](const std::string& kind, double delta) {
    for (const KindRun& r : runs) {
      if (r.name != kind) continue;
      for (const flash::GridPoint& g : r.grid) {
        if (g.delta == delta) return g.rel_error_pct;
      }
    }
    throw std::logic_error("no grid point for " + kind);
  };
  const bool have_edges = contains(eval.deltas, 0.1) && contains(eval.deltas, 1.0) && contains(eval.deltas, 2.0);

  if (mean_err.count("tides") && mean_err.count("s5") && mean_err.count("mamba")) {
    const double t = mean_err["tides"], s = mean_err["s5"], m = mean_err["mamba"];
    res.criteria.push_back({"ff_mean_error_order", t < s && t < m,
                            "mean rel. error %: tides " + fmt("%.3f", t) + ", s5 " + fmt("%.3f", s) + ", mamba " +
                                fmt("%.3f", m) + " (need tides below both)"});
  }
  if (have_edges && mean_err.count("mamba")) {
    const double mid = err_at("mamba", 1.0), lo = err_at("mamba", 0.1), hi = err_at("mamba", 2.0);
    const double bound = tol.ff_mamba_edge_ratio * mid;
    res.criteria.push_back({"ff_mamba_edges", lo > bound && hi > bound,
                            "mamba error % at 0.1 / 1.0 / 2.0: " + fmt("%.3f", lo) + " / " + fmt("%.3f", mid) +
                                " / " + fmt("%.3f", hi) + " (need edges > " + fmt("%.3f", bound) + ")"});
  }
  if (have_edges && mean_err.count("tides")) {
    const double mid = err_at("tides", 1.0), lo = err_at("tides", 0.1), hi = err_at("tides", 2.0);
    const double bound = tol.ff_tides_edge_ratio * mid;
    res.criteria.push_back({"ff_tides_edges", lo <= bound && hi <= bound,
                            "tides error % at 0.1 / 1.0 / 2.0: " + fmt("%.3f", lo) + " / " + fmt("%.3f", mid) +
                                " / " + fmt("%.3f", hi) + " (need edges <= " + fmt("%.3f", bound) + ")"});
  }
  res.criteria.push_back({"ff_generator_probe", worst_generator <= tol.ff_probe_abs,
                          "max |lambda_hat - lambda| " + fmt("%.3g", worst_generator) + " over " +
                              std::to_string(eval.deltas.size() * 3) + " probes (need <= " +
                              fmt("%.3g", tol.ff_probe_abs) + ")"});
}

// ---------------------------------------------------------------- droprate

drop::SweepResult parallel_sweep(const drop::Dataset& train, const drop::Dataset& test,
                                 const drop::SweepConfig& sweep, std::size_t jobs, std::ostream& log) {
  struct Cell {
    std::size_t spec, seed;
  };
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < sweep.specs.size(); ++i) {
    for (std::size_t j = 0; j < sweep.seeds.size(); ++j) cells.push_back({i, j});
  }
  std::vector<drop::SweepResult> results(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0}, done{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t c = next++; c < cells.size(); c = next++) {
      drop::SweepConfig one = sweep;
      one.specs = {sweep.specs[cells[c].spec]};
      one.seeds = {sweep.seeds[cells[c].seed]};
      const auto t0 = Clock::now();
      try {
        results[c] = drop::run_sweep(train, test, one);
      } catch (...) {
        errors[c] = std::current_exception();
      }
      const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
      std::lock_guard<std::mutex> lock(log_mutex);
      log << "droprate: " << one.specs[0].name << " seed " << one.seeds[0] << " done (" << ++done << "/"
          << cells.size() << ", " << fmt("%.1f", secs) << " s)\n";
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  // Same row order as a sequential run_sweep.
  drop::SweepResult all;
  for (const drop::SweepResult& r : results) all.rows.insert(all.rows.end(), r.rows.begin(), r.rows.end());
  return all;
}

void droprate(const Invocation& inv, const CriterionTolerances& tol, const Output& out, CommandResult& res,
              json& metrics) {
  const RunConfig& cfg = inv.config;
  drop::Dataset train, test;
  if (cfg.dr_dataset == "synthetic") {
    drop::TrainTest tt = drop::synth_benchmark(cfg.seed, cfg.dr_train_size, cfg.dr_test_size);
    train = std::move(tt.train);
    test = std::move(tt.test);
  } else {
    drop::split_dataset(drop::ingest_csv(cfg.dr_dataset), cfg.dr_test_fraction, train, test);
  }
  log_of(inv) << "droprate: " << train.size() << " train / " << test.size() << " test series, "
              << cfg.dr_specs.size() * cfg.dr_seeds.size() << " cells\n";
  const drop::SweepConfig sweep = cfg.sweep_config();
  const drop::SweepResult r = parallel_sweep(train, test, sweep, inv.jobs, log_of(inv));

  std::string table = "spec,seed,r_train,r_test,accuracy\n";
  for (const drop::SweepRow& row : r.rows) {
    table += row.spec + "," + std::to_string(row.seed) + "," + format_number(row.r_train) + "," +
             format_number(row.r_test) + "," + format_number(row.accuracy) + "\n";
  }
  out.file("droprate_table.csv", table);

  std::string summary = "spec,r_test,mean_accuracy\n";
  std::vector<ChartSeries> series;
  for (const drop::VariantSpec& spec : sweep.specs) {
    ChartSeries s{spec.name, {}, {}};
    for (double rt : sweep.r_test) {
      const double acc = r.mean_accuracy(spec.name, rt);
      summary += spec.name + "," + format_number(rt) + "," + format_number(acc) + "\n";
      s.x.push_back(rt);
      s.y.push_back(100.0 * acc);
      metrics["mean_accuracy"][spec.name][format_number(rt)] = acc;
    }
    series.push_back(std::move(s));
  }
  out.file("droprate_summary.csv", summary);
  out.chart("droprate_accuracy.svg", series,
            {"Accuracy vs test drop rate (mean over seeds)", "test drop rate", "accuracy (%)", false, false});

  auto pts = [&](const std::string& spec, double rt) { return 100.0 * r.mean_accuracy(spec, rt); };
  const bool has_mid = contains(sweep.r_test, 0.5), has_hi = contains(sweep.r_test, 0.9);
  if (contains(cfg.dr_specs, "s5") && sweep.r_test.size() > 1) {
    double lo = INFINITY, hi = -INFINITY;
    for (double rt : sweep.r_test) {
      lo = std::min(lo, pts("s5", rt));
      hi = std::max(hi, pts("s5", rt));
    }
    res.criteria.push_back({"dr_lti_flat", hi - lo < tol.dr_lti_spread_pts,
                            "s5 accuracy spread " + fmt("%.2f", hi - lo) + " points (need < " +
                                fmt("%.3g", tol.dr_lti_spread_pts) + ")"});
  }
  if (contains(cfg.dr_specs, "tides") && has_mid && has_hi) {
    const double d = pts("tides", 0.5) - pts("tides", 0.9);
    res.criteria.push_back({"dr_tides_robust", d < tol.dr_tides_drop_pts,
                            "tides drop 0.5 -> 0.9: " + fmt("%.2f", d) + " points (need < " +
                                fmt("%.3g", tol.dr_tides_drop_pts) + ")"});
  }
  if (contains(cfg.dr_specs, "mamba") && has_mid && has_hi) {
    const double d = pts("mamba", 0.5) - pts("mamba", 0.9);
    res.criteria.push_back({"dr_mamba_degrades", d >= tol.dr_mamba_drop_pts,
                            "mamba drop 0.5 -> 0.9: " + fmt("%.2f", d) + " points (need >= " +
                                fmt("%.3g", tol.dr_mamba_drop_pts) + ")"});
  }
}

// ---------------------------------------------------------------- verify

void verify(const Invocation& inv, const CriterionTolerances& tol, const Output& out, CommandResult& res,
            json& metrics) {
  std::ostream& o = out_of(inv);
  const auto t0 = Clock::now();
  std::string csv = "property,pass,detail\n";
  for (const PropertyResult& p : run_properties(inv.verify)) {
    o << (p.pass ? "PASS " : "FAIL ") << p.name << " (" << fmt("%.2f", p.seconds) << " s): " << p.detail << "\n";
    csv += p.name + "," + (p.pass ? "true" : "false") + "," + csv_quote(p.detail) + "\n";
    res.criteria.push_back({"property_" + p.name, p.pass, p.detail});
    metrics["seconds"][p.name] = p.seconds;
  }
  const double total = std::chrono::duration<double>(Clock::now() - t0).count();
  res.criteria.push_back({"verify_runtime", total < tol.verify_max_seconds,
                          fmt("%.1f", total) + " s (need < " + fmt("%.0f", tol.verify_max_seconds) + " s)"});
  out.file("verify_report.csv", csv);
}

// ---------------------------------------------------------------- bench

void bench(const Invocation& inv, const CriterionTolerances& tol, const Output& out, CommandResult& res,
           json& metrics) {
  const RunConfig& cfg = inv.config;
  const Rng root = Rng(cfg.seed).split("bench");
  Rng init_rng = root.split("init");
  block::Model model = block::Model::init(cfg.bench_model_config(), init_rng);
  const std::size_t params = model.parameter_count();
  metrics["parameters"] = params;
  log_of(inv) << "bench: " << params << " parameters\n";

  std::vector<double> times;
  std::string csv = "L,time_ms\n";
  for (std::size_t len : cfg.bench_lengths) {
    Rng data = root.split("input").split(len);
    ad::Tensor u({cfg.bench_batch * len, 1}), delta({cfg.bench_batch * len, 1}, 1.0),
        target({cfg.bench_batch * len, 1});
    for (double& v : u.data()) v = data.normal();
    auto step = [&] {
      ad::Tape tape;
      ad::ParamBinder bind(tape);
      ad::Var y = block::model_forward(bind, model, tape.constant(u), tape.constant(delta), len);
      ad::Var loss = ad::mse(y, tape.constant(target));
      const ad::Gradients g = tape.backward(loss);
      return g.size();
    };
    step();  // warm-up
    std::vector<double> ms;
    for (std::size_t i = 0; i < cfg.bench_repeats; ++i) {
      const auto t0 = Clock::now();
      step();
      ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
    std::sort(ms.begin(), ms.end());
    const double median = ms.size() % 2 ? ms[ms.size() / 2] : 0.5 * (ms[ms.size() / 2 - 1] + ms[ms.size() / 2]);
    times.push_back(median);
    csv += std::to_string(len) + "," + format_number(median) + "\n";
    log_of(inv) << "bench: L=" << len << " median " << fmt("%.2f", median) << " ms\n";
  }
  out.file("bench.csv", csv);
  std::vector<double> xs(cfg.bench_lengths.begin(), cfg.bench_lengths.end());
  out.chart("bench.svg", {{"forward+backward", xs, times}},
            {"Wall time vs sequence length", "L", "time (ms)", true, true});

  bool monotone = true;
  for (std::size_t i = 1; i < times.size(); ++i) monotone = monotone && times[i] >= times[i - 1];
  res.criteria.push_back({"bench_monotone", monotone, "median time nondecreasing in L"});
  for (std::size_t i = 1; i < times.size(); ++i) {
    const std::size_t a = cfg.bench_lengths[i - 1], b = cfg.bench_lengths[i];
    if (b != 2 * a || a < tol.bench_ratio_min_length) continue;
    const double ratio = times[i] / times[i - 1];
    res.criteria.push_back({"bench_ratio_" + std::to_string(a) + "_" + std::to_string(b),
                            ratio >= tol.bench_ratio_lo && ratio <= tol.bench_ratio_hi,
                            "time(" + std::to_string(b) + ") / time(" + std::to_string(a) + ") = " +
                                fmt("%.3f", ratio) + " (need in [" + fmt("%.2g", tol.bench_ratio_lo) + ", " +
                                fmt("%.2g", tol.bench_ratio_hi) + "])"});
  }
}

json tolerances_json(const CriterionTolerances& c, const PropertyTolerances& p) {
  return {
      {"ff_mamba_edge_ratio", c.ff_mamba_edge_ratio},
      {"ff_tides_edge_ratio", c.ff_tides_edge_ratio},
      {"ff_probe_abs", c.ff_probe_abs},
      {"dr_lti_spread_pts", c.dr_lti_spread_pts},
      {"dr_tides_drop_pts", c.dr_tides_drop_pts},
      {"dr_mamba_drop_pts", c.dr_mamba_drop_pts},
      {"bench_ratio_lo", c.bench_ratio_lo},
      {"bench_ratio_hi", c.bench_ratio_hi},
      {"bench_ratio_min_length", c.bench_ratio_min_length},
      {"verify_max_seconds", c.verify_max_seconds},
      {"scan_rel", p.scan_rel},
      {"grad_rel", p.grad_rel},
      {"grad_step", p.grad_step},
      {"zoh_abs", p.zoh_abs},
      {"semigroup_abs", p.semigroup_abs},
      {"zero_init_abs", p.zero_init_abs},
      {"generator_abs", p.generator_abs},
      {"block_identity_abs", p.block_identity_abs},
      {"bn_mean_abs", p.bn_mean_abs},
      {"bn_var_lo", p.bn_var_lo},
      {"bn_var_hi", p.bn_var_hi},
      {"timestamp_abs", p.timestamp_abs},
  };
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"fading-flash", "droprate", "verify", "bench"};
  return names;
}

std::string manifest_file_name(const std::string& command) { return command + "_manifest.json"; }

std::string version_string() { return TIDES_VERSION; }

CommandResult run_command(const Invocation& inv, const CriterionTolerances& tol) {
  CommandResult res;
  if (!contains(command_names(), inv.command)) {
    res.exit_code = kExitValidation;
    res.error = "unknown command '" + inv.command + "'";
    return res;
  }
  if (inv.dry_run) {
    out_of(inv) << serialize_config(inv.config);
    return res;
  }
  const auto t0 = Clock::now();
  json metrics = json::object();
  const Output out{inv.out_dir, &res.outputs};
  try {
    inv.config.validate();
    if (inv.command == "fading-flash") fading_flash(inv, tol, out, res, metrics);
    if (inv.command == "droprate") droprate(inv, tol, out, res, metrics);
    if (inv.command == "verify") verify(inv, tol, out, res, metrics);
    if (inv.command == "bench") bench(inv, tol, out, res, metrics);
    const bool all_pass = std::all_of(res.criteria.begin(), res.criteria.end(), [](const Criterion& c) { return c.pass; });
    res.exit_code = all_pass ? kExitOk : kExitCriterion;
  } catch (const std::invalid_argument& e) {
    res.exit_code = kExitValidation;
    res.error = e.what();
  } catch (const std::exception& e) {
    res.exit_code = kExitRuntime;
    res.error = e.what();
  }
  res.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();

  json manifest;
  manifest["command"] = inv.command;
  manifest["status"] = res.exit_code == kExitOk ? "passed" : "failed";
  manifest["exit_code"] = res.exit_code;
  if (!res.error.empty()) manifest["error"] = res.error;
  manifest["seed"] = inv.config.seed;
  manifest["version"] = version_string();
  manifest["wall_seconds"] = res.wall_seconds;
  manifest["config"] = serialize_config(inv.config);
  if (inv.command == "verify") {
    manifest["verify"] = {{"flip_scan_combine", inv.verify.flip_scan_combine}, {"only", inv.verify.only}};
  }
  json criteria = json::array();
  for (const Criterion& c : res.criteria) criteria.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  manifest["criteria"] = criteria;
  manifest["tolerances"] = tolerances_json(tol, inv.verify.tol);
  manifest["metrics"] = metrics;
  manifest["outputs"] = res.outputs;
  try {
    write_file_atomic((std::filesystem::path(inv.out_dir) / manifest_file_name(inv.command)).string(),
                      manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    if (res.error.empty()) res.error = e.what();
    res.exit_code = kExitRuntime;
  }
  return res;
}

Invocation invocation_from_manifest(const std::string& path) {
  json m;
  try {
    m = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw std::invalid_argument("manifest " + path + ": " + e.what());
  }
  Invocation inv;
  try {
    inv.command = m.at("command").get<std::string>();
    inv.config = parse_config(m.at("config").get<std::string>());
    if (m.contains("verify")) {
      inv.verify.flip_scan_combine = m["verify"].at("flip_scan_combine").get<bool>();
      inv.verify.only = m["verify"].at("only").get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument("manifest " + path + ": " + e.what());
  }
  if (!contains(command_names(), inv.command)) {
    throw std::invalid_argument("manifest " + path + ": unknown command '" + inv.command + "'");
  }
  return inv;
}

}  // namespace tides::cli
