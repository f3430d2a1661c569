#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tdamc/intervals.hpp"
#include "tdamc/model.hpp"
#include "tdamc/noise.hpp"
#include "tdamc/query.hpp"
#include "tdamc/topdown.hpp"

namespace tdamc {

enum class Stage { all, cef, mc, amc, tabulate, intervals, evaluate };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

/// Everything a pipeline run needs. Input paths are resolved against the
/// directory of the config file.
struct RunConfig {
  std::shared_ptr<const Schema> schema;

  std::vector<std::string> level_names;
  std::vector<std::uint32_t> fanouts;
  std::filesystem::path hierarchy_file;  // used instead of fanouts when set

  SynthConfig synth;
  std::filesystem::path cef_file;  // used instead of synthesis when set

  double total_rho = 1.0;
  std::map<std::string, double> level_shares;
  std::map<std::string, std::map<std::string, double>> group_shares;  // empty: uniform
  std::map<std::string, std::vector<QueryGroup>> strategy;            // empty: default
  Invariants invariants;
  SolverOptions solver;

  WorkloadConfig workload;

  std::size_t m = 100;
  std::size_t s = 100;
  std::size_t ppmf0_index = 0;
  std::vector<std::size_t> subset_sizes{25, 50, 75, 100};
  std::size_t subset_repeats = 5;
  IntervalOptions intervals;

  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::size_t workers = 1;

  // Throws ConfigError.
  static RunConfig from_json(const std::string& text, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
  void validate() const;

  // Reproducible description of the run: every field except out and workers,
  // with input files replaced by their contents' hashes.
  std::string resolved_json() const;

  GeoHierarchy build_hierarchy() const;
  TdaParams tda_params(const GeoHierarchy& hierarchy) const;
};

/// Runs one stage (or all of them) into config.out. Returns 0 on success,
/// 2 for configuration errors and 3 for stage failures; diagnostics are
/// written to `err` tagged with the failing stage.
int cmd_pipeline(const RunConfig& config, Stage stage, std::ostream& log, std::ostream& err);

struct CheckResult {
  std::string name;
  bool passed = true;
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::string detail;  // first failure
};

struct ValidationReport {
  std::vector<CheckResult> checks;

  bool ok() const;
  std::string to_json() const;
};

/// Re-checks stored artifacts: manifest hashes, non-negativity, hierarchical
/// consistency of every replicate, invariant totals and the hash manifest.
ValidationReport cmd_validate(const std::filesystem::path& dir);

// Relative path -> SHA-256 of every artifact except hashes.json.
std::map<std::string, std::string> artifact_hashes(const std::filesystem::path& dir);

}  // namespace tdamc
