#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "tdamc/errors.hpp"
#include "tdamc/pipeline.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Top-down mechanism with approximate Monte Carlo error estimates"};
  app.set_version_flag("--version", "tdamc 0.1.0");

  std::string config_path;
  std::string stage = "all";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out;
  app.add_option("--config", config_path, "JSON run config (defaults to <out>/config.resolved.json)");
  app.add_option("--stage", stage, "Stage to run")
      ->check(CLI::IsMember({"all", "cef", "mc", "amc", "tabulate", "intervals", "evaluate"}));
  app.add_option("--seed", seed, "Master seed (overrides the config)");
  app.add_option("--workers", workers, "Maximum concurrent replicates")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "Artifact directory (overrides the config)");

  auto* validate = app.add_subcommand("validate", "Check stored artifacts and print a JSON report");
  std::string validate_dir;
  validate->add_option("dir", validate_dir, "Artifact directory")->required();
  app.require_subcommand(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (*validate) {
    if (!fs::is_directory(validate_dir)) {
      std::cerr << "validate: " << validate_dir << " is not a directory\n";
      return 3;
    }
    const auto report = tdamc::cmd_validate(validate_dir);
    std::cout << report.to_json();
    return report.ok() ? 0 : 4;
  }

  tdamc::RunConfig config;
  try {
    if (config_path.empty()) {
      if (out.empty()) throw tdamc::ConfigError("give --config or --out with a resolved config");
      config_path = (fs::path(out) / "config.resolved.json").string();
    }
    config = tdamc::RunConfig::load(config_path);
  } catch (const tdamc::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  if (seed) config.seed = *seed;
  if (workers) config.workers = *workers;
  if (!out.empty()) config.out = out;
  return tdamc::cmd_pipeline(config, tdamc::stage_from_string(stage), std::cerr, std::cerr);
}
