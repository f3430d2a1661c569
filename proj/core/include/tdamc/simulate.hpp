#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tdamc/model.hpp"
#include "tdamc/topdown.hpp"

namespace tdamc {

enum class ReplicateKind { mc, amc };

std::string to_string(ReplicateKind k);
ReplicateKind replicate_kind_from_string(const std::string& s);

struct ReplicateRecord {
  std::size_t index = 0;
  std::string file;        // output histogram, relative to the artifact root
  std::string units_file;  // internal-unit table, relative to the artifact root
  std::uint64_t seed = 0;  // key of the replicate's SeedStream
  std::string sha256;
  std::string units_sha256;
};

/// Replicates of the top-down mechanism persisted under one artifact root.
///
/// MC sets are run on the CEF; AMC sets are run on PPMF_0.
struct ReplicateSet {
  ReplicateKind kind = ReplicateKind::mc;
  std::filesystem::path root;
  std::string reference;  // reference histogram, relative to root
  std::string reference_sha256;
  std::uint64_t master_seed = 0;
  std::string params_hash;
  std::vector<ReplicateRecord> replicates;

  std::size_t size() const noexcept { return replicates.size(); }

  std::string manifest_json() const;
  static ReplicateSet from_manifest(const std::filesystem::path& manifest);

  // Throws IntegrityError naming the first missing or altered file.
  void verify(bool include_reference = true) const;
};

struct SimulationOptions {
  std::size_t workers = 1;
  // Called after each replicate finishes, from the worker thread.
  std::function<void(std::size_t)> progress;
};

// Canonical JSON of the mechanism parameters; its SHA-256 is the params hash.
std::string params_json(const TdaParams& params);

// The SeedStream key of replicate `index`.
std::uint64_t replicate_seed(std::uint64_t master_seed, ReplicateKind kind, std::size_t index);

/// m independent runs of the mechanism on the CEF, written to
/// <root>/mc/ppmf_<i>.csv (plus units_<i>.csv and solve_<i>.json).
/// `reference` names cef within root. Throws ParameterError for m < 2.
ReplicateSet run_mc(const Histogram& cef, const std::string& reference, const TdaParams& params,
                    std::size_t m, std::uint64_t master_seed, const std::filesystem::path& root,
                    const SimulationOptions& options = {});

/// s independent runs of the mechanism on PPMF_0, written under <root>/amc/.
ReplicateSet run_amc(const Histogram& ppmf0, const std::string& reference, const TdaParams& params,
                     std::size_t s, std::uint64_t master_seed, const std::filesystem::path& root,
                     const SimulationOptions& options = {});

/// Uniform selection of n replicates without replacement, in original order.
/// Throws ParameterError unless 2 <= n <= rs.size().
ReplicateSet subset(const ReplicateSet& rs, std::size_t n, std::uint64_t seed);
// The positions subset() selects, ascending.
std::vector<std::size_t> subset_positions(std::size_t total, std::size_t n, std::uint64_t seed);

Histogram load_replicate(const ReplicateSet& rs, std::size_t position,
                         std::shared_ptr<const Schema> schema,
                         std::shared_ptr<const GeoHierarchy> hierarchy);

// Runs fn(i) for i in [0, n) on up to `workers` threads; the exception of the
// lowest failing index is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace tdamc
