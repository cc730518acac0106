// tides: command-line entry point for the experiments and checks.

#include <CLI11.hpp>

#include <iostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "tides/cli/commands.hpp"
#include "tides/cli/config.hpp"

namespace {

// The autodiff tape allocates and frees many mid-sized buffers per step;
// keeping them on the heap instead of mmap avoids page-fault churn.
void tune_allocator() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace tides::cli;
  tune_allocator();

  CLI::App app{"TIDES experiments: fading-flash, droprate, verify, bench"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(0, 1);

  std::string config_path, out_dir = "out", manifest_path;
  std::uint64_t seed = 0;
  bool dry_run = false;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::string> overrides;
  auto* seed_opt = app.add_option("--seed", seed, "Root seed; overrides the config file");
  app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--out-dir", out_dir, "Directory for CSV, SVG and manifest files");
  app.add_flag("--dry-run", dry_run, "Print the effective config and exit");
  app.add_option("--from-manifest", manifest_path, "Replay the run recorded in a manifest")
      ->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Extra key=value assignment applied after the config file");
  app.add_option("--jobs", jobs, "Concurrent droprate cells")->check(CLI::PositiveNumber);

  CLI::App* ff = app.add_subcommand("fading-flash", "Train the three toy models and score them over the Delta grid");
  CLI::App* dr = app.add_subcommand("droprate", "Six-variant sweep over test drop rates");
  std::string specs, dataset;
  dr->add_option("--specs", specs, "Comma-separated variant names");
  dr->add_option("--dataset", dataset, "'synthetic' or a CSV path");
  CLI::App* ver = app.add_subcommand("verify", "Run the invariant suite");
  std::string fault, only;
  ver->add_option("--inject-fault", fault, "Negative control: flip-scan-combine")
      ->check(CLI::IsMember({"flip-scan-combine"}));
  ver->add_option("--only", only, "Comma-separated property names");
  CLI::App* be = app.add_subcommand("bench", "Forward+backward wall time against sequence length");
  std::string lengths;
  be->add_option("--lengths", lengths, "Comma-separated sequence lengths");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  Invocation inv;
  try {
    if (!manifest_path.empty()) {
      inv = invocation_from_manifest(manifest_path);
    } else {
      for (CLI::App* sub : {ff, dr, ver, be}) {
        if (sub->parsed()) inv.command = sub->get_name();
      }
      if (inv.command.empty()) throw std::invalid_argument("a subcommand or --from-manifest is required");
      if (!config_path.empty()) inv.config = load_config(config_path);
      if (*seed_opt) inv.config.seed = seed;
      for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        set_config_value(inv.config, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (!specs.empty()) inv.config.dr_specs = split_commas(specs);
      if (!dataset.empty()) inv.config.dr_dataset = dataset;
      if (!lengths.empty()) set_config_value(inv.config, "bench.lengths", lengths);
      inv.verify.flip_scan_combine = fault == "flip-scan-combine";
      if (!only.empty()) inv.verify.only = split_commas(only);
      inv.config.validate();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  inv.out_dir = out_dir;
  inv.dry_run = dry_run;
  inv.jobs = jobs;
  inv.out = &std::cout;
  inv.log = &std::cerr;

  const CommandResult res = run_command(inv);
  for (const Criterion& c : res.criteria) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  }
  if (!res.error.empty()) std::cerr << "error: " << res.error << "\n";
  if (!dry_run) {
    std::cerr << inv.command << ": exit " << res.exit_code << ", " << res.outputs.size() << " files in " << out_dir
              << "\n";
  }
  return res.exit_code;
}
