// Acceptance suite: one PASS/FAIL line per criterion, exit 0 iff all pass.
//
//   acceptance [--work-dir DIR] [--only 1,5,10] [--jobs N]

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "tides/cli/commands.hpp"
#include "tides/cli/output.hpp"
#include "tides/cli/properties.hpp"

namespace {

using namespace tides::cli;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::vector<std::string> details;
};

std::string seconds_str(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f s", s);
  return buf;
}

Outcome property_with_budget(const std::string& name, double budget_s) {
  const PropertyResult r = run_property(name);
  Outcome o;
  o.pass = r.pass && r.seconds < budget_s;
  o.details.push_back(r.detail);
  o.details.push_back("runtime " + seconds_str(r.seconds) + " (budget " + seconds_str(budget_s) + ")");
  return o;
}

Outcome property_plain(const std::string& name) {
  const PropertyResult r = run_property(name);
  return {r.pass, {r.detail, "runtime " + seconds_str(r.seconds)}};
}

struct Context {
  fs::path work;
  std::size_t jobs = 1;
  std::ostringstream sink;  // command progress is kept out of the report
};

Outcome command_with_budget(Context& ctx, const std::string& command, const RunConfig& config, double budget_s) {
  Invocation inv;
  inv.command = command;
  inv.config = config;
  inv.out_dir = (ctx.work / command).string();
  inv.jobs = ctx.jobs;
  inv.out = inv.log = &ctx.sink;
  fs::remove_all(inv.out_dir);
  const CommandResult r = run_command(inv);
  Outcome o;
  o.pass = r.error.empty() && r.wall_seconds < budget_s && !r.criteria.empty();
  for (const Criterion& c : r.criteria) {
    o.pass = o.pass && c.pass;
    o.details.push_back(std::string(c.pass ? "pass " : "FAIL ") + c.name + ": " + c.detail);
  }
  if (!r.error.empty()) o.details.push_back("error: " + r.error);
  o.details.push_back("runtime " + seconds_str(r.wall_seconds) + " (budget " + seconds_str(budget_s) + ")");
  o.details.push_back("artifacts in " + inv.out_dir);
  return o;
}

// Runs `command`, replays it from its manifest into a second directory and
// compares every CSV byte for byte. `skip_column` names CSV files whose last
// column is wall-clock time and is compared without it.
Outcome replay_identical(Context& ctx, const std::string& command, const RunConfig& config,
                         const VerifyOptions& verify = {}, const std::string& timing_csv = "") {
  const fs::path first = ctx.work / "replay" / (command + "_a"), second = ctx.work / "replay" / (command + "_b");
  fs::remove_all(first);
  fs::remove_all(second);
  Invocation inv;
  inv.command = command;
  inv.config = config;
  inv.verify = verify;
  inv.out_dir = first.string();
  inv.jobs = ctx.jobs;
  inv.out = inv.log = &ctx.sink;
  const CommandResult a = run_command(inv);
  Invocation again = invocation_from_manifest((first / manifest_file_name(command)).string());
  again.out_dir = second.string();
  again.jobs = ctx.jobs;
  again.out = again.log = &ctx.sink;
  const CommandResult b = run_command(again);

  Outcome o{a.error.empty() && b.error.empty(), {}};
  if (!a.error.empty()) o.details.push_back(command + " error: " + a.error);
  std::size_t compared = 0;
  for (const std::string& f : a.outputs) {
    if (fs::path(f).extension() != ".csv") continue;
    std::string x = read_file((first / f).string()), y = read_file((second / f).string());
    if (f == timing_csv) {
      auto strip = [](const std::string& s) {
        std::istringstream in(s);
        std::string line, out;
        while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
        return out;
      };
      x = strip(x);
      y = strip(y);
    }
    const bool same = x == y;
    o.pass = o.pass && same;
    ++compared;
    o.details.push_back(command + " " + f + (f == timing_csv ? " (time column excluded)" : "") +
                        (same ? ": identical" : ": DIFFERS"));
  }
  if (compared == 0) {
    o.pass = false;
    o.details.push_back(command + ": no CSV outputs");
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"TIDES acceptance criteria"};
  Context ctx;
  std::string work = "acceptance_runs";
  std::vector<int> only;
  ctx.jobs = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--work-dir", work, "Scratch directory for command outputs");
  app.add_option("--only", only, "Criterion numbers to run")->delimiter(',');
  app.add_option("--jobs", ctx.jobs, "Concurrent droprate cells")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  ctx.work = work;
  fs::create_directories(ctx.work);

  struct Check {
    int id;
    std::string title;
    std::function<Outcome()> run;
  };
  const std::vector<Check> checks = {
      {1, "scan correctness (rel. error < 1e-6, < 10 s)", [] { return property_with_budget("scan", 10.0); }},
      {2, "gradient fidelity (rel. error < 1e-4, < 60 s)", [] { return property_with_budget("gradient", 60.0); }},
      {3, "ZOH exactness (< 1e-10, semigroup < 1e-12, < 5 s)", [] { return property_with_budget("zoh", 5.0); }},
      {4, "zero-init reduction to S5 (< 1e-12, < 5 s)", [] { return property_with_budget("zero_init", 5.0); }},
      {5, "Fading Flash reproduction (seed 0, 3000 steps, < 20 min)",
       [&] { return command_with_budget(ctx, "fading-flash", RunConfig{}, 20 * 60.0); }},
      {6, "drop-harness pattern (3 seeds x 6 variants, < 30 min)",
       [&] { return command_with_budget(ctx, "droprate", RunConfig{}, 30 * 60.0); }},
      {7, "generator fidelity (10000 draws, oracle < 1e-12)", [] { return property_plain("generator"); }},
      {8, "block contract (order, identity < 1e-12, BN stats)", [] { return property_plain("block"); }},
      {9, "linear scaling (doubling ratios in [1.3, 3.0], < 2 min)",
       [&] { return command_with_budget(ctx, "bench", RunConfig{}, 120.0); }},
      {10, "reproducibility (manifest replay gives identical CSVs)",
       [&] {
         RunConfig c;
         c.ff_steps = 200;
         c.dr_specs = {"s5", "mamba", "tides"};
         c.dr_seeds = {1};
         c.dr_epochs = 20;
         c.bench_lengths = {256, 512};
         VerifyOptions v;
         v.only = {"scan", "zoh", "zero_init", "drop_timestamps"};
         Outcome all{true, {}};
         for (Outcome o : {replay_identical(ctx, "fading-flash", c), replay_identical(ctx, "droprate", c),
                           replay_identical(ctx, "verify", c, v), replay_identical(ctx, "bench", c, {}, "bench.csv")}) {
           all.pass = all.pass && o.pass;
           all.details.insert(all.details.end(), o.details.begin(), o.details.end());
         }
         return all;
       }},
  };

  bool all_pass = true;
  for (const Check& c : checks) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, {std::string("threw: ") + e.what()}};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << ": " << c.title << " [" << seconds_str(secs)
              << "]\n";
    for (const std::string& d : o.details) std::cout << "        " << d << "\n";
    std::cout.flush();
  }
  return all_pass ? 0 : 1;
}
