#include "tdamc/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tdamc/errors.hpp"
#include "tdamc/io.hpp"

namespace tdamc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ReplicateKind k) { return k == ReplicateKind::mc ? "MC" : "AMC"; }

ReplicateKind replicate_kind_from_string(const std::string& s) {
  if (s == "MC") return ReplicateKind::mc;
  if (s == "AMC") return ReplicateKind::amc;
  throw DataError("unknown replicate kind '" + s + "'");
}

std::string ReplicateSet::manifest_json() const {
  json reps = json::array();
  for (const auto& r : replicates) {
    reps.push_back({{"index", r.index},
                    {"file", r.file},
                    {"units_file", r.units_file},
                    {"seed", r.seed},
                    {"sha256", r.sha256},
                    {"units_sha256", r.units_sha256}});
  }
  json j{{"kind", to_string(kind)},
         {"m_or_s", replicates.size()},
         {"master_seed", master_seed},
         {"params_hash", params_hash},
         {"reference", {{"file", reference}, {"sha256", reference_sha256}}},
         {"replicates", reps}};
  return j.dump(2) + "\n";
}

ReplicateSet ReplicateSet::from_manifest(const fs::path& manifest) {
  ReplicateSet rs;
  try {
    const auto j = json::parse(io::read_file(manifest));
    rs.kind = replicate_kind_from_string(j.at("kind").get<std::string>());
    rs.root = manifest.parent_path();
    rs.reference = j.at("reference").at("file").get<std::string>();
    rs.reference_sha256 = j.at("reference").at("sha256").get<std::string>();
    rs.master_seed = j.at("master_seed").get<std::uint64_t>();
    rs.params_hash = j.at("params_hash").get<std::string>();
    for (const auto& r : j.at("replicates")) {
      rs.replicates.push_back({r.at("index").get<std::size_t>(), r.at("file").get<std::string>(),
                               r.at("units_file").get<std::string>(), r.at("seed").get<std::uint64_t>(),
                               r.at("sha256").get<std::string>(), r.at("units_sha256").get<std::string>()});
    }
    if (j.at("m_or_s").get<std::size_t>() != rs.replicates.size()) {
      throw IntegrityError(manifest.string() + ": m_or_s does not match the replicate list");
    }
  } catch (const json::exception& e) {
    throw DataError(manifest.string() + ": " + e.what());
  }
  return rs;
}

namespace {

void check_file(const fs::path& root, const std::string& file, const std::string& sha) {
  const auto path = root / file;
  if (!fs::exists(path)) throw IntegrityError("manifest lists missing file " + path.string());
  if (io::sha256_file(path) != sha) throw IntegrityError("file " + path.string() + " does not match its manifest hash");
}

}  // namespace

void ReplicateSet::verify(bool include_reference) const {
  if (include_reference) check_file(root, reference, reference_sha256);
  for (const auto& r : replicates) {
    check_file(root, r.file, r.sha256);
    check_file(root, r.units_file, r.units_sha256);
  }
}

std::string params_json(const TdaParams& params) {
  json strategy = json::array();
  for (const auto& level : params.strategy) {
    json groups = json::array();
    for (const auto& g : level) groups.push_back({{"name", g.name}, {"marginal", g.marginal}});
    strategy.push_back(groups);
  }
  json j{{"total_rho", params.alloc.total_rho()},
         {"level_shares", params.alloc.level_shares()},
         {"group_shares", params.alloc.group_shares()},
         {"strategy", strategy},
         {"invariants", {{"root_total", params.invariants.root_total},
                         {"level1_totals", params.invariants.level1_totals}}},
         {"solver", {{"ridge", params.solver.ridge},
                     {"kkt_tolerance", params.solver.kkt_tolerance},
                     {"max_iterations", params.solver.max_iterations},
                     {"warm_start_iterations", params.solver.warm_start_iterations}}}};
  return j.dump();
}

std::uint64_t replicate_seed(std::uint64_t master_seed, ReplicateKind kind, std::size_t index) {
  return SeedStream(master_seed).derive(kind == ReplicateKind::mc ? "mc" : "amc").derive(std::uint64_t{index}).key();
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_index = n;
  std::exception_ptr failure;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(work);
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

namespace {

ReplicateSet run_set(ReplicateKind kind, const Histogram& input, const std::string& reference,
                     const TdaParams& params, std::size_t count, std::uint64_t master_seed,
                     const fs::path& root, const SimulationOptions& options) {
  if (count < 2) throw ParameterError("a replicate set needs at least 2 replicates");
  params.alloc.validate(input.hierarchy(), params.strategy);
  params.invariants.validate();

  const std::string sub = kind == ReplicateKind::mc ? "mc" : "amc";
  fs::create_directories(root / sub);

  ReplicateSet rs;
  rs.kind = kind;
  rs.root = root;
  rs.reference = reference;
  rs.reference_sha256 = io::sha256_file(root / reference);
  rs.master_seed = master_seed;
  rs.params_hash = io::sha256_hex(params_json(params));
  rs.replicates.resize(count);

  parallel_for(count, options.workers, [&](std::size_t i) {
    auto& rec = rs.replicates[i];
    rec.index = i;
    rec.seed = replicate_seed(master_seed, kind, i);
    auto result = tda_run(input, params, SeedStream(rec.seed));

    std::ostringstream hist;
    result.output.write_csv(hist);
    std::ostringstream units;
    write_unit_table(units, input.hierarchy(), result.units);

    const std::string stem = sub + "/";
    rec.file = stem + "ppmf_" + std::to_string(i) + ".csv";
    rec.units_file = stem + "units_" + std::to_string(i) + ".csv";
    io::write_file(root / rec.file, hist.str());
    io::write_file(root / rec.units_file, units.str());
    io::write_file(root / (stem + "solve_" + std::to_string(i) + ".json"), result.report.to_json());
    rec.sha256 = io::sha256_hex(hist.str());
    rec.units_sha256 = io::sha256_hex(units.str());
    if (!result.report.ok()) {
      throw InternalError(to_string(kind) + " replicate " + std::to_string(i) + " did not converge");
    }
    if (options.progress) options.progress(i);
  });
  return rs;
}

}  // namespace

ReplicateSet run_mc(const Histogram& cef, const std::string& reference, const TdaParams& params,
                    std::size_t m, std::uint64_t master_seed, const fs::path& root,
                    const SimulationOptions& options) {
  return run_set(ReplicateKind::mc, cef, reference, params, m, master_seed, root, options);
}

ReplicateSet run_amc(const Histogram& ppmf0, const std::string& reference, const TdaParams& params,
                     std::size_t s, std::uint64_t master_seed, const fs::path& root,
                     const SimulationOptions& options) {
  return run_set(ReplicateKind::amc, ppmf0, reference, params, s, master_seed, root, options);
}

std::vector<std::size_t> subset_positions(std::size_t total, std::size_t n, std::uint64_t seed) {
  if (n < 2 || n > total) {
    throw ParameterError("subset size " + std::to_string(n) + " outside [2, " + std::to_string(total) + "]");
  }
  std::vector<std::size_t> pos(total);
  for (std::size_t i = 0; i < total; ++i) pos[i] = i;
  SeedStream stream = SeedStream(seed).derive("subset");
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(stream.uniform_int(total - i));
    std::swap(pos[i], pos[j]);
  }
  pos.resize(n);
  std::sort(pos.begin(), pos.end());
  return pos;
}

ReplicateSet subset(const ReplicateSet& rs, std::size_t n, std::uint64_t seed) {
  ReplicateSet out = rs;
  out.replicates.clear();
  for (auto p : subset_positions(rs.size(), n, seed)) out.replicates.push_back(rs.replicates[p]);
  return out;
}

Histogram load_replicate(const ReplicateSet& rs, std::size_t position, std::shared_ptr<const Schema> schema,
                         std::shared_ptr<const GeoHierarchy> hierarchy) {
  const auto path = rs.root / rs.replicates.at(position).file;
  std::ifstream in(path);
  if (!in) throw IntegrityError("cannot open replicate file " + path.string());
  return Histogram::read_csv(in, std::move(schema), std::move(hierarchy));
}

}  // namespace tdamc
