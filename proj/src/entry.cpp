#include "ssd/entry.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "ssd/commands.hpp"

// Both precisions are linked in; the inline namespace of this translation
// unit is f64, so the 32-bit entry points are declared by hand.
namespace ssd::f32 {
int command_run(const RunConfig& config, std::ostream& out, std::ostream& err);
int command_ablate(const RunConfig& config, std::ostream& out, std::ostream& err);
}  // namespace ssd::f32

namespace ssd {

namespace {

struct ConfigFlags {
  std::vector<std::string> files;
  std::map<std::string, std::string> values;
  bool full_scale = false;
};

void add_config_flags(CLI::App& cmd, ConfigFlags& flags) {
  cmd.add_option("-c,--config", flags.files, "config file(s) of key = value lines, applied in order");
  for (const auto& key : config_keys()) cmd.add_option("--" + key.name, flags.values[key.name], key.help);
  cmd.add_flag("--full-scale", flags.full_scale, "allow long CIFAR-100 runs (same as --full_scale true)");
}

RunConfig resolve(CLI::App& cmd, const ConfigFlags& flags) {
  RunConfig config;
  for (const auto& f : flags.files) config.apply(read_config_file(f));
  ConfigMap overrides;
  for (const auto& [key, value] : flags.values) {
    if (cmd.count("--" + key) > 0) overrides[key] = value;
  }
  if (flags.full_scale) overrides["full_scale"] = "true";
  config.apply(overrides);
  config.check();
  return config;
}

int dispatch_run(const RunConfig& config, bool ablate) {
  if (config.precision == "f64") {
    return ablate ? f64::command_ablate(config, std::cout, std::cerr) : f64::command_run(config, std::cout, std::cerr);
  }
  return ablate ? f32::command_ablate(config, std::cout, std::cerr) : f32::command_run(config, std::cout, std::cerr);
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Online class-incremental learning with summarized replay memory"};
  app.require_subcommand(1);

  ConfigFlags run_flags, ablate_flags;
  auto* run = app.add_subcommand("run", "train the configured seeds and report average end accuracy");
  add_config_flags(*run, run_flags);
  auto* ablate = app.add_subcommand("ablate", "compare none, D, D+S and D+S+P over the configured seeds");
  add_config_flags(*ablate, ablate_flags);

  std::string checkpoint, dump_dir = "memory_dump";
  auto* dump = app.add_subcommand("dump", "write the memory images of a run checkpoint as PPM files");
  dump->add_option("checkpoint", checkpoint, "checkpoint written by a run")->required()->check(CLI::ExistingFile);
  dump->add_option("-o,--out", dump_dir, "output directory");

  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "run the gradient, reservoir and summarization self-checks");
  verify->add_option("--seed", verify_seed, "seed for the random instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run) return dispatch_run(resolve(*run, run_flags), false);
    if (*ablate) return dispatch_run(resolve(*ablate, ablate_flags), true);
    if (*dump) return f64::command_dump(checkpoint, dump_dir, std::cout, std::cerr);
    if (*verify) return f64::command_verify(verify_seed, std::cout, std::cerr);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace ssd
