#include "tides/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tides/ssm/discretize.hpp"

namespace tides::cli {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw std::invalid_argument("config key '" + std::string(key) + "': expected " + std::string(want) + ", got '" +
                              std::string(value) + "'");
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || end != v.data() + v.size()) bad_value(key, v, "a nonnegative integer");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || end != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true or false");
}

std::string fmt_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

Field size_field(std::string key, std::size_t RunConfig::*m, std::size_t min = 1) {
  return {key,
          [key, m, min](RunConfig& c, std::string_view v) {
            const std::uint64_t x = to_u64(key, v);
            if (x < min) bad_value(key, v, "an integer >= " + std::to_string(min));
            c.*m = static_cast<std::size_t>(x);
          },
          [m](const RunConfig& c) { return std::to_string(c.*m); }};
}

Field double_field(std::string key, double RunConfig::*m, double lo, double hi, bool lo_open) {
  return {key,
          [key, m, lo, hi, lo_open](RunConfig& c, std::string_view v) {
            const double x = to_double(key, v);
            if ((lo_open ? x <= lo : x < lo) || x > hi) {
              bad_value(key, v, "a number in " + std::string(lo_open ? "(" : "[") + fmt_double(lo) + ", " +
                                    fmt_double(hi) + "]");
            }
            c.*m = x;
          },
          [m](const RunConfig& c) { return fmt_double(c.*m); }};
}

Field bool_field(std::string key, bool RunConfig::*m) {
  return {key, [key, m](RunConfig& c, std::string_view v) { c.*m = to_bool(key, v); },
          [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

Field names_field(std::string key, std::vector<std::string> RunConfig::*m) {
  return {key,
          [key, m](RunConfig& c, std::string_view v) {
            std::vector<std::string> out;
            for (std::string_view s : split_list(v)) {
              if (s.empty()) bad_value(key, v, "a comma-separated list of names");
              out.emplace_back(s);
            }
            if (out.empty()) bad_value(key, v, "at least one name");
            c.*m = std::move(out);
          },
          [m](const RunConfig& c) { return join(c.*m, [](const std::string& s) { return s; }); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"seed", [](RunConfig& c, std::string_view v) { c.seed = to_u64("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});

    f.push_back(names_field("fading_flash.kinds", &RunConfig::ff_kinds));
    f.push_back(size_field("fading_flash.hidden", &RunConfig::ff_hidden));
    f.push_back(size_field("fading_flash.states", &RunConfig::ff_states));
    f.push_back(size_field("fading_flash.bc_rank", &RunConfig::ff_bc_rank));
    f.push_back(size_field("fading_flash.steps", &RunConfig::ff_steps));
    f.push_back(size_field("fading_flash.batch", &RunConfig::ff_batch));
    f.push_back(double_field("fading_flash.lr", &RunConfig::ff_lr, 0.0, 1.0, true));
    f.push_back(double_field("fading_flash.delta_lo", &RunConfig::ff_delta_lo, 0.0, 1e3, true));
    f.push_back(double_field("fading_flash.delta_hi", &RunConfig::ff_delta_hi, 0.0, 1e3, true));
    f.push_back(size_field("fading_flash.eval_batches", &RunConfig::ff_eval_batches));
    f.push_back(size_field("fading_flash.eval_batch_size", &RunConfig::ff_eval_batch_size));
    f.push_back(size_field("fading_flash.var_batches", &RunConfig::ff_var_batches));
    f.push_back(size_field("fading_flash.var_batch_size", &RunConfig::ff_var_batch_size, 2));

    f.push_back({"droprate.dataset",
                 [](RunConfig& c, std::string_view v) {
                   if (v.empty()) bad_value("droprate.dataset", v, "'synthetic' or a CSV path");
                   c.dr_dataset = std::string(v);
                 },
                 [](const RunConfig& c) { return c.dr_dataset; }});
    f.push_back(size_field("droprate.train_size", &RunConfig::dr_train_size, 3));
    f.push_back(size_field("droprate.test_size", &RunConfig::dr_test_size, 1));
    f.push_back(double_field("droprate.test_fraction", &RunConfig::dr_test_fraction, 0.0, 0.9, true));
    f.push_back(names_field("droprate.specs", &RunConfig::dr_specs));
    f.push_back({"droprate.seeds",
                 [](RunConfig& c, std::string_view v) {
                   std::vector<std::uint64_t> out;
                   for (std::string_view s : split_list(v)) out.push_back(to_u64("droprate.seeds", s));
                   if (out.empty()) bad_value("droprate.seeds", v, "at least one seed");
                   c.dr_seeds = std::move(out);
                 },
                 [](const RunConfig& c) { return join(c.dr_seeds, [](std::uint64_t s) { return std::to_string(s); }); }});
    f.push_back(double_field("droprate.r_train", &RunConfig::dr_r_train, 0.0, 0.99, false));
    f.push_back({"droprate.r_test",
                 [](RunConfig& c, std::string_view v) {
                   std::vector<double> out;
                   for (std::string_view s : split_list(v)) {
                     const double r = to_double("droprate.r_test", s);
                     if (r < 0.0 || r >= 1.0) bad_value("droprate.r_test", s, "rates in [0, 1)");
                     out.push_back(r);
                   }
                   if (out.empty()) bad_value("droprate.r_test", v, "at least one rate");
                   c.dr_r_test = std::move(out);
                 },
                 [](const RunConfig& c) { return join(c.dr_r_test, fmt_double); }});
    f.push_back(size_field("droprate.epochs", &RunConfig::dr_epochs));
    f.push_back(size_field("droprate.batch", &RunConfig::dr_batch));
    f.push_back(double_field("droprate.lr", &RunConfig::dr_lr, 0.0, 1.0, true));
    f.push_back(double_field("droprate.weight_decay", &RunConfig::dr_weight_decay, 0.0, 10.0, false));
    f.push_back(size_field("droprate.ssm_mult", &RunConfig::dr_ssm_mult));

    f.push_back({"bench.lengths",
                 [](RunConfig& c, std::string_view v) {
                   std::vector<std::size_t> out;
                   for (std::string_view s : split_list(v)) {
                     const std::uint64_t l = to_u64("bench.lengths", s);
                     if (l < 64) bad_value("bench.lengths", s, "lengths >= 64");
                     out.push_back(static_cast<std::size_t>(l));
                   }
                   if (out.empty()) bad_value("bench.lengths", v, "at least one length");
                   c.bench_lengths = std::move(out);
                 },
                 [](const RunConfig& c) {
                   return join(c.bench_lengths, [](std::size_t l) { return std::to_string(l); });
                 }});
    f.push_back(size_field("bench.repeats", &RunConfig::bench_repeats));
    f.push_back(size_field("bench.batch", &RunConfig::bench_batch));
    f.push_back(size_field("bench.hidden", &RunConfig::bench_hidden));
    f.push_back(size_field("bench.layers", &RunConfig::bench_layers));
    f.push_back(size_field("bench.ssm_b", &RunConfig::bench_ssm_b));
    f.push_back(size_field("bench.ssm_mult", &RunConfig::bench_ssm_mult));
    f.push_back(size_field("bench.bc_rank", &RunConfig::bench_bc_rank));
    f.push_back(double_field("bench.ff_mult", &RunConfig::bench_ff_mult, 0.0, 16.0, true));
    f.push_back(bool_field("bench.clip_eigs", &RunConfig::bench_clip_eigs));
    f.push_back(bool_field("bench.bidir", &RunConfig::bench_bidir));
    f.push_back({"bench.disc",
                 [](RunConfig& c, std::string_view v) {
                   try {
                     ssm::parse_discretization(v);
                   } catch (const std::exception&) {
                     bad_value("bench.disc", v, "zoh or bilinear");
                   }
                   c.bench_disc = std::string(v);
                 },
                 [](const RunConfig& c) { return c.bench_disc; }});
    return f;
  }();
  return table;
}

const Field& find_field(std::string_view key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
}

}  // namespace

void RunConfig::validate() const {
  if (!(ff_delta_lo < ff_delta_hi)) {
    throw std::invalid_argument("config keys 'fading_flash.delta_lo' and 'fading_flash.delta_hi': need lo < hi");
  }
  std::set<std::string> seen;
  for (const std::string& k : ff_kinds) {
    try {
      flash::parse_toy_kind(k);
    } catch (const std::exception&) {
      throw std::invalid_argument("config key 'fading_flash.kinds': unknown kind '" + k + "'");
    }
    if (!seen.insert(k).second) throw std::invalid_argument("config key 'fading_flash.kinds': duplicate '" + k + "'");
  }
  seen.clear();
  for (const std::string& s : dr_specs) {
    try {
      drop::find_variant(s);
    } catch (const std::exception&) {
      throw std::invalid_argument("config key 'droprate.specs': unknown variant '" + s + "'");
    }
    if (!seen.insert(s).second) throw std::invalid_argument("config key 'droprate.specs': duplicate '" + s + "'");
  }
  if (std::set<std::uint64_t>(dr_seeds.begin(), dr_seeds.end()).size() != dr_seeds.size()) {
    throw std::invalid_argument("config key 'droprate.seeds': duplicate seed");
  }
  if (dr_train_size < 3 || dr_test_size < 1) throw std::invalid_argument("config key 'droprate.train_size': too small");
  bench_model_config().validate();
}

flash::TrainConfig RunConfig::train_config() const {
  return {ff_steps, ff_batch, ff_lr, ff_delta_lo, ff_delta_hi};
}

flash::EvalConfig RunConfig::eval_config() const {
  flash::EvalConfig e;
  e.eval_batches = ff_eval_batches;
  e.eval_batch_size = ff_eval_batch_size;
  e.var_batches = ff_var_batches;
  e.var_batch_size = ff_var_batch_size;
  return e;
}

std::vector<flash::ToyKind> RunConfig::kinds() const {
  std::vector<flash::ToyKind> out;
  for (const std::string& k : ff_kinds) out.push_back(flash::parse_toy_kind(k));
  return out;
}

drop::SweepConfig RunConfig::sweep_config() const {
  drop::SweepConfig s;
  s.specs.clear();
  for (const std::string& name : dr_specs) s.specs.push_back(drop::find_variant(name));
  s.r_train = dr_r_train;
  s.r_test = dr_r_test;
  s.seeds = dr_seeds;
  s.epochs = dr_epochs;
  s.batch = dr_batch;
  s.lr = dr_lr;
  s.weight_decay = dr_weight_decay;
  s.states = dr_ssm_mult;
  return s;
}

block::ModelConfig RunConfig::bench_model_config() const {
  block::ModelConfig c;
  c.input_dim = 1;
  c.hidden = bench_hidden;
  c.layers = bench_layers;
  c.bc_rank = bench_bc_rank;
  c.ssm_b = bench_ssm_b;
  c.ssm_mult = bench_ssm_mult;
  c.bidirectional = bench_bidir;
  c.disc = ssm::parse_discretization(bench_disc);
  c.clip_eigs = bench_clip_eigs;
  c.ff_mult = bench_ff_mult;
  c.selectivity = {true, false, true};
  c.task = block::Task::regression;
  c.output_dim = 1;
  return c;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  find_field(trim(key)).set(config, trim(value));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.key);
  return out;
}

RunConfig parse_config(std::string_view text) {
  RunConfig c;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw std::invalid_argument(where + "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (!seen.insert(key).second) throw std::invalid_argument(where + "duplicate key '" + key + "'");
    try {
      set_config_value(c, key, line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

bool operator==(const RunConfig& a, const RunConfig& b) { return serialize_config(a) == serialize_config(b); }

}  // namespace tides::cli
