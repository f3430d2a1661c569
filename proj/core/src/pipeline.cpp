#include "tdamc/pipeline.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "tdamc/errors.hpp"
#include "tdamc/evaluate.hpp"
#include "tdamc/io.hpp"
#include "tdamc/rng.hpp"
#include "tdamc/simulate.hpp"

namespace tdamc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 7> kStageNames{"all", "cef", "mc", "amc", "tabulate", "intervals", "evaluate"};

const char* kSchemaFile = "schema.json";
const char* kHierarchyFile = "hierarchy.csv";
const char* kCefFile = "cef.csv";
const char* kWorkloadFile = "workload.csv";
const char* kConfigFile = "config.resolved.json";
const char* kManifestMc = "manifest_mc.json";
const char* kManifestAmc = "manifest_amc.json";
const char* kManifestTab = "manifest_tabulate.json";
const char* kPpmf0File = "ppmf_0.csv";
const char* kTabCef = "tab_cef.csv";
const char* kTabPpmf0 = "tab_ppmf0.csv";
const char* kTabMc = "tab_mc.csv";
const char* kTabAmc = "tab_amc.csv";
const char* kCiFile = "ci.csv";
const char* kHashesFile = "hashes.json";

}  // namespace

std::string to_string(Stage s) { return std::string(kStageNames[static_cast<std::size_t>(s)]); }

Stage stage_from_string(const std::string& s) {
  for (std::size_t i = 0; i < kStageNames.size(); ++i) {
    if (kStageNames[i] == s) return static_cast<Stage>(i);
  }
  throw ConfigError("unknown stage '" + s + "'");
}

// ---------------------------------------------------------------------------
// Config

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::vector<std::string> default_level_names(std::size_t depth) {
  switch (depth) {
    case 2: return {"root", "block"};
    case 3: return {"root", "state", "block"};
    case 4: return {"root", "state", "county", "block"};
    case 5: return {"root", "state", "county", "tract", "block"};
    default: throw ConfigError("hierarchy.levels is required for " + std::to_string(depth) + " levels");
  }
}

}  // namespace

RunConfig RunConfig::from_json(const std::string& text, const fs::path& base_dir) {
  RunConfig c;
  try {
    const auto j = json::parse(text);
    if (j.contains("schema_path")) {
      c.schema = std::make_shared<const Schema>(
          Schema::from_json(io::read_file(resolve(base_dir, j.at("schema_path").get<std::string>()))));
    } else if (j.contains("schema")) {
      c.schema = std::make_shared<const Schema>(Schema::from_json(j.at("schema").dump()));
    } else {
      throw ConfigError("config needs schema or schema_path");
    }

    const auto& h = j.at("hierarchy");
    if (h.contains("file")) {
      c.hierarchy_file = resolve(base_dir, h.at("file").get<std::string>());
    } else {
      c.fanouts = h.at("fanouts").get<std::vector<std::uint32_t>>();
    }
    if (h.contains("levels")) {
      c.level_names = h.at("levels").get<std::vector<std::string>>();
    } else if (c.hierarchy_file.empty()) {
      c.level_names = default_level_names(c.fanouts.size() + 1);
    }

    if (j.contains("cef_file")) c.cef_file = resolve(base_dir, j.at("cef_file").get<std::string>());
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      maybe(s, "zero_inflation", c.synth.zero_inflation);
      maybe(s, "small_mean", c.synth.small_mean);
      maybe(s, "large_share", c.synth.large_share);
      maybe(s, "large_min", c.synth.large_min);
      maybe(s, "large_alpha", c.synth.large_alpha);
      maybe(s, "max_count", c.synth.max_count);
    }

    const auto& b = j.at("budget");
    c.total_rho = b.at("total_rho").get<double>();
    maybe(b, "level_shares", c.level_shares);
    maybe(b, "group_shares", c.group_shares);
    if (j.contains("strategy")) {
      for (const auto& [level, groups] : j.at("strategy").items()) {
        auto& list = c.strategy[level];
        for (const auto& g : groups) {
          list.push_back({g.at("name").get<std::string>(), g.at("marginal").get<std::vector<std::string>>()});
        }
      }
    }
    if (j.contains("invariants")) {
      maybe(j.at("invariants"), "root_total", c.invariants.root_total);
      maybe(j.at("invariants"), "level1_totals", c.invariants.level1_totals);
    }
    if (j.contains("solver")) {
      const auto& s = j.at("solver");
      maybe(s, "ridge", c.solver.ridge);
      maybe(s, "kkt_tolerance", c.solver.kkt_tolerance);
      maybe(s, "max_iterations", c.solver.max_iterations);
      maybe(s, "warm_start_iterations", c.solver.warm_start_iterations);
    }
    if (j.contains("workload")) {
      const auto& w = j.at("workload");
      maybe(w, "max_order", c.workload.max_order);
      maybe(w, "include_total", c.workload.include_total);
      maybe(w, "strata_edges", c.workload.strata_edges);
      maybe(w, "blocks_per_stratum", c.workload.blocks_per_stratum);
      maybe(w, "block_unions", c.workload.block_unions);
      maybe(w, "union_size", c.workload.union_size);
      maybe(w, "union_label", c.workload.union_label);
    }
    maybe(j, "m", c.m);
    maybe(j, "s", c.s);
    maybe(j, "ppmf0_index", c.ppmf0_index);
    maybe(j, "subset_sizes", c.subset_sizes);
    maybe(j, "subset_repeats", c.subset_repeats);
    maybe(j, "level", c.intervals.level);
    maybe(j, "t_df", c.intervals.t_df);
    if (j.contains("wald_scale")) {
      const auto scale = j.at("wald_scale").get<std::string>();
      if (scale == "mse") {
        c.intervals.scale = WaldScale::mse;
      } else if (scale == "variance") {
        c.intervals.scale = WaldScale::variance;
      } else {
        throw ConfigError("wald_scale must be mse or variance");
      }
    }
    maybe(j, "seed", c.seed);
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    maybe(j, "workers", c.workers);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  if (c.level_shares.empty()) {
    std::vector<std::string> names = c.level_names;
    if (names.empty()) names = c.build_hierarchy().level_names();
    for (const auto& n : names) c.level_shares[n] = 1.0 / static_cast<double>(names.size());
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return from_json(text, path.parent_path());
}

void RunConfig::validate() const {
  if (!schema) throw ConfigError("config has no schema");
  if (m < 2) throw ConfigError("m must be at least 2");
  if (s < 2) throw ConfigError("s must be at least 2");
  if (ppmf0_index >= m) throw ConfigError("ppmf0_index must be below m");
  if (!(intervals.level > 0 && intervals.level < 1)) throw ConfigError("level must lie in (0, 1)");
  if (!(intervals.t_df > 0)) throw ConfigError("t_df must be positive");
  if (!(total_rho > 0)) throw ConfigError("budget.total_rho must be positive");
  for (auto n : subset_sizes) {
    if (n < 2 || n > s) throw ConfigError("subset sizes must lie in [2, s]");
  }
  if (!hierarchy_file.empty() && !fs::exists(hierarchy_file)) {
    throw ConfigError("hierarchy file " + hierarchy_file.string() + " does not exist");
  }
  if (!hierarchy_file.empty() && cef_file.empty()) {
    throw ConfigError("a hierarchy file needs a cef_file; synthesis works from fan-outs only");
  }
  if (!cef_file.empty() && !fs::exists(cef_file)) throw ConfigError("CEF file " + cef_file.string() + " does not exist");
  if (workers == 0) throw ConfigError("workers must be positive");
  invariants.validate();
  try {
    const auto h = build_hierarchy();
    const auto params = tda_params(h);
    params.alloc.validate(h, params.strategy);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

GeoHierarchy RunConfig::build_hierarchy() const {
  if (hierarchy_file.empty()) return GeoHierarchy::from_fanouts(level_names, fanouts);
  std::ifstream in(hierarchy_file);
  if (!in) throw ConfigError("cannot open hierarchy file " + hierarchy_file.string());
  auto h = GeoHierarchy::read_csv(in);
  if (!level_names.empty() && level_names != h.level_names()) {
    throw ConfigError("hierarchy.levels does not match the hierarchy file");
  }
  return h;
}

TdaParams RunConfig::tda_params(const GeoHierarchy& hierarchy) const {
  TdaParams p;
  p.strategy = default_strategy(*schema, hierarchy);
  for (const auto& [level, groups] : strategy) p.strategy.at(hierarchy.level_index(level)) = groups;
  p.alloc = group_shares.empty()
                ? BudgetAllocation::uniform_groups(total_rho, level_shares, hierarchy, p.strategy)
                : BudgetAllocation(total_rho, level_shares, group_shares);
  p.invariants = invariants;
  p.solver = solver;
  return p;
}

std::string RunConfig::resolved_json() const {
  json j;
  j["schema"] = json::parse(schema->to_json());
  j["hierarchy"] = {{"levels", build_hierarchy().level_names()}};
  if (hierarchy_file.empty()) {
    j["hierarchy"]["fanouts"] = fanouts;
  } else {
    j["hierarchy"]["file"] = fs::absolute(hierarchy_file).string();
    j["hierarchy"]["file_sha256"] = io::sha256_file(hierarchy_file);
  }
  if (cef_file.empty()) {
    j["synth"] = {{"zero_inflation", synth.zero_inflation}, {"small_mean", synth.small_mean},
                  {"large_share", synth.large_share},       {"large_min", synth.large_min},
                  {"large_alpha", synth.large_alpha},       {"max_count", synth.max_count}};
  } else {
    j["cef_file"] = fs::absolute(cef_file).string();
    j["cef_file_sha256"] = io::sha256_file(cef_file);
  }
  const auto params = tda_params(build_hierarchy());
  j["budget"] = {{"total_rho", params.alloc.total_rho()},
                 {"level_shares", params.alloc.level_shares()},
                 {"group_shares", params.alloc.group_shares()}};
  const auto h = build_hierarchy();
  json strat;
  for (std::size_t l = 0; l < params.strategy.size(); ++l) {
    json groups = json::array();
    for (const auto& g : params.strategy[l]) groups.push_back({{"name", g.name}, {"marginal", g.marginal}});
    strat[h.level_names()[l]] = groups;
  }
  j["strategy"] = strat;
  j["invariants"] = {{"root_total", invariants.root_total}, {"level1_totals", invariants.level1_totals}};
  j["solver"] = {{"ridge", solver.ridge},
                 {"kkt_tolerance", solver.kkt_tolerance},
                 {"max_iterations", solver.max_iterations},
                 {"warm_start_iterations", solver.warm_start_iterations}};
  j["workload"] = {{"max_order", workload.max_order},
                   {"include_total", workload.include_total},
                   {"strata_edges", workload.strata_edges},
                   {"blocks_per_stratum", workload.blocks_per_stratum},
                   {"block_unions", workload.block_unions},
                   {"union_size", workload.union_size},
                   {"union_label", workload.union_label}};
  j["m"] = m;
  j["s"] = s;
  j["ppmf0_index"] = ppmf0_index;
  j["subset_sizes"] = subset_sizes;
  j["subset_repeats"] = subset_repeats;
  j["level"] = intervals.level;
  j["t_df"] = intervals.t_df;
  j["wald_scale"] = intervals.scale == WaldScale::mse ? "mse" : "variance";
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Stages

namespace {

struct StageFailure : Error {
  using Error::Error;
};

struct Artifacts {
  std::shared_ptr<const Schema> schema;
  std::shared_ptr<const GeoHierarchy> hierarchy;
};

Artifacts load_structure(const fs::path& out) {
  Artifacts a;
  a.schema = std::make_shared<const Schema>(Schema::from_json(io::read_file(out / kSchemaFile)));
  std::ifstream in(out / kHierarchyFile);
  if (!in) throw DataError("missing " + (out / kHierarchyFile).string() + "; run the cef stage first");
  a.hierarchy = std::make_shared<const GeoHierarchy>(GeoHierarchy::read_csv(in));
  return a;
}

Histogram load_histogram(const fs::path& path, const Artifacts& a) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return Histogram::read_csv(in, a.schema, a.hierarchy);
}

std::string histogram_csv(const Histogram& h) {
  std::ostringstream s;
  h.write_csv(s);
  return s.str();
}

std::vector<Query> load_workload(const fs::path& out, const GeoHierarchy& h) {
  std::ifstream in(out / kWorkloadFile);
  if (!in) throw DataError("missing " + (out / kWorkloadFile).string());
  return read_workload(in, h);
}

Tabulation load_tabulation(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing " + path.string());
  return read_tabulation(in);
}

void stage_cef(const RunConfig& c, std::ostream& log) {
  fs::create_directories(c.out);
  auto hierarchy = std::make_shared<const GeoHierarchy>(c.build_hierarchy());
  std::optional<Histogram> cef;
  if (c.cef_file.empty()) {
    SynthConfig synth = c.synth;
    synth.schema = c.schema;
    synth.level_names = hierarchy->level_names();
    synth.fanouts = c.fanouts;
    cef = synth_cef(synth, SeedStream(c.seed).derive("cef").key());
  } else {
    std::ifstream in(c.cef_file);
    cef = Histogram::read_csv(in, c.schema, hierarchy);
  }
  const auto workload = make_workload(*cef, c.workload, SeedStream(c.seed).derive("workload").key());

  std::ostringstream hier_csv, workload_csv;
  hierarchy->write_csv(hier_csv);
  write_workload(workload_csv, workload);
  io::write_file(c.out / kSchemaFile, c.schema->to_json());
  io::write_file(c.out / kHierarchyFile, hier_csv.str());
  io::write_file(c.out / kCefFile, histogram_csv(*cef));
  io::write_file(c.out / kWorkloadFile, workload_csv.str());
  io::write_file(c.out / kConfigFile, c.resolved_json());
  log << "[cef] " << hierarchy->block_count() << " blocks, " << c.schema->cell_count() << " cells, total "
      << cef->total() << ", " << workload.size() << " queries\n";
}

SimulationOptions sim_options(const RunConfig& c, const char* tag, std::size_t n, std::ostream& log) {
  SimulationOptions o;
  o.workers = c.workers;
  auto done = std::make_shared<std::atomic<std::size_t>>(0);
  auto mu = std::make_shared<std::mutex>();
  const std::size_t step = std::max<std::size_t>(1, n / 10);
  o.progress = [done, mu, step, n, tag, &log](std::size_t) {
    const auto k = ++*done;
    if (k % step == 0 || k == n) {
      std::lock_guard lock(*mu);
      log << "[" << tag << "] " << k << "/" << n << " replicates\n";
    }
  };
  return o;
}

void stage_mc(const RunConfig& c, std::ostream& log) {
  const auto a = load_structure(c.out);
  const auto cef = load_histogram(c.out / kCefFile, a);
  const auto params = c.tda_params(*a.hierarchy);
  const auto rs = run_mc(cef, kCefFile, params, c.m, c.seed, c.out, sim_options(c, "mc", c.m, log));
  io::write_file(c.out / kManifestMc, rs.manifest_json());
  fs::copy_file(c.out / rs.replicates.at(c.ppmf0_index).file, c.out / kPpmf0File,
                fs::copy_options::overwrite_existing);
}

void stage_amc(const RunConfig& c, std::ostream& log) {
  const auto a = load_structure(c.out);
  const auto ppmf0 = load_histogram(c.out / kPpmf0File, a);
  const auto params = c.tda_params(*a.hierarchy);
  const auto rs = run_amc(ppmf0, kPpmf0File, params, c.s, c.seed, c.out, sim_options(c, "amc", c.s, log));
  io::write_file(c.out / kManifestAmc, rs.manifest_json());
}

Tabulation tabulate_set(const ReplicateSet& rs, const Tabulator& tab, const Artifacts& a, std::size_t workers) {
  Tabulation t;
  for (const auto& q : tab.queries()) t.query_ids.push_back(q.id);
  t.values.assign(t.query_ids.size(), std::vector<Count>(rs.size()));
  parallel_for(rs.size(), workers, [&](std::size_t r) {
    const auto v = tab.tabulate(load_replicate(rs, r, a.schema, a.hierarchy));
    for (std::size_t q = 0; q < v.size(); ++q) t.values[q][r] = v[q];
  });
  return t;
}

void write_tab(const fs::path& path, const Tabulation& t, const std::vector<std::size_t>& ids) {
  std::ostringstream s;
  write_tabulation(s, t, ids);
  io::write_file(path, s.str());
}

void stage_tabulate(const RunConfig& c, std::ostream& log) {
  const auto a = load_structure(c.out);
  auto workload = load_workload(c.out, *a.hierarchy);
  const Tabulator tab(*a.hierarchy, a.schema->universe(), std::move(workload));
  const auto mc = ReplicateSet::from_manifest(c.out / kManifestMc);
  const auto amc = ReplicateSet::from_manifest(c.out / kManifestAmc);
  mc.verify();
  amc.verify();

  auto single = [&](const Histogram& h) {
    Tabulation t;
    const auto v = tab.tabulate(h);
    for (std::size_t q = 0; q < v.size(); ++q) {
      t.query_ids.push_back(tab.queries()[q].id);
      t.values.push_back({v[q]});
    }
    return t;
  };
  const std::vector<std::size_t> zero{0};
  write_tab(c.out / kTabCef, single(load_histogram(c.out / kCefFile, a)), zero);
  write_tab(c.out / kTabPpmf0, single(load_histogram(c.out / kPpmf0File, a)), zero);

  auto ids = [](const ReplicateSet& rs) {
    std::vector<std::size_t> out;
    for (const auto& r : rs.replicates) out.push_back(r.index);
    return out;
  };
  write_tab(c.out / kTabMc, tabulate_set(mc, tab, a, c.workers), ids(mc));
  write_tab(c.out / kTabAmc, tabulate_set(amc, tab, a, c.workers), ids(amc));

  json manifest;
  for (const char* f : {kTabCef, kTabPpmf0, kTabMc, kTabAmc}) manifest[f] = io::sha256_file(c.out / f);
  manifest["manifest_mc.json"] = io::sha256_file(c.out / kManifestMc);
  manifest["manifest_amc.json"] = io::sha256_file(c.out / kManifestAmc);
  io::write_file(c.out / kManifestTab, manifest.dump(2) + "\n");
  log << "[tabulate] " << tab.queries().size() << " queries x (" << mc.size() << " MC + " << amc.size()
      << " AMC) replicates\n";
}

void stage_intervals(const RunConfig& c, std::ostream& log) {
  const auto ppmf0 = load_tabulation(c.out / kTabPpmf0);
  const auto amc = load_tabulation(c.out / kTabAmc);
  if (ppmf0.query_ids != amc.query_ids) throw DataError("PPMF_0 and AMC tabulations list different queries");
  std::vector<CIRecord> records;
  records.reserve(amc.query_ids.size() * kCiTypes.size());
  std::vector<double> values;
  for (std::size_t q = 0; q < amc.query_ids.size(); ++q) {
    values.assign(amc.values[q].begin(), amc.values[q].end());
    for (auto& r : all_intervals(amc.query_ids[q], ppmf0.values[q].at(0), values, c.intervals)) {
      records.push_back(std::move(r));
    }
  }
  std::ostringstream s;
  write_ci(s, records);
  io::write_file(c.out / kCiFile, s.str());
  log << "[intervals] " << records.size() << " intervals\n";
}

void verify_tabulation_manifest(const fs::path& out) {
  const auto path = out / kManifestTab;
  if (!fs::exists(path)) throw IntegrityError("missing " + path.string() + "; run the tabulate stage first");
  const auto j = json::parse(io::read_file(path));
  for (const auto& [file, sha] : j.items()) {
    const auto p = out / file;
    if (!fs::exists(p)) throw IntegrityError("manifest lists missing file " + p.string());
    if (io::sha256_file(p) != sha.get<std::string>()) {
      throw IntegrityError("file " + p.string() + " does not match its manifest hash");
    }
  }
}

template <typename Rows, typename Writer>
void write_rows(const fs::path& path, const Rows& rows, Writer writer) {
  std::ostringstream s;
  writer(s, rows);
  io::write_file(path, s.str());
}

void stage_evaluate(const RunConfig& c, std::ostream& log) {
  // Integrity first: every replicate and tabulation must match its manifest.
  const auto mc = ReplicateSet::from_manifest(c.out / kManifestMc);
  const auto amc = ReplicateSet::from_manifest(c.out / kManifestAmc);
  mc.verify(false);
  amc.verify();
  verify_tabulation_manifest(c.out);

  const auto a = load_structure(c.out);
  const auto workload = load_workload(c.out, *a.hierarchy);
  const auto tab_cef = load_tabulation(c.out / kTabCef);
  const auto tab_ppmf0 = load_tabulation(c.out / kTabPpmf0);
  const auto tab_mc = load_tabulation(c.out / kTabMc);
  const auto tab_amc = load_tabulation(c.out / kTabAmc);
  const QueryTable queries(workload, tab_cef);

  std::ifstream ci_in(c.out / kCiFile);
  if (!ci_in) throw DataError("missing " + (c.out / kCiFile).string());
  const auto records = read_ci(ci_in);

  const auto coverage = coverage_table(records, queries);
  const auto widths = width_summary(records, queries);
  const auto moments_rows = moment_comparison(queries, tab_cef, tab_ppmf0, tab_mc, tab_amc);
  const auto bias = bias_percentiles(moments_rows, queries);
  const auto sens = iteration_sensitivity(queries, tab_ppmf0, tab_amc, c.subset_sizes, c.subset_repeats,
                                          SeedStream(c.seed).derive("evaluate").key(), c.intervals);

  write_rows(c.out / "coverage.csv", coverage, [](auto& o, const auto& r) { write_coverage(o, r); });
  write_rows(c.out / "widths.csv", widths, [](auto& o, const auto& r) { write_widths(o, r); });
  write_rows(c.out / "moment_comparison.csv", moments_rows,
             [](auto& o, const auto& r) { write_moment_comparison(o, r); });
  write_rows(c.out / "bias_percentiles.csv", bias, [](auto& o, const auto& r) { write_bias_percentiles(o, r); });
  write_rows(c.out / "sensitivity.csv", sens, [](auto& o, const auto& r) { write_sensitivity(o, r); });

  const auto fid = fidelity_summary(moments_rows, queries);
  json summary;
  summary["n_queries"] = queries.size();
  json cov;
  for (auto t : kCiTypes) cov[std::string(to_string(t))] = aggregate_coverage(coverage, t);
  summary["coverage"] = cov;
  json by_group;
  for (auto g : kSizeGroups) {
    const double p = size_group_coverage(coverage, CiType::ct, g);
    if (p == p) by_group[std::string(label(g))] = p;
  }
  summary["ct_coverage_by_size_group"] = by_group;
  json sens_j;
  for (auto n : c.subset_sizes) {
    std::vector<SensitivityRow> rows;
    for (const auto& r : sens) {
      if (r.n_iterations == n) rows.push_back(r);
    }
    std::map<std::size_t, std::vector<CoverageRow>> by_subset;
    for (const auto& r : rows) by_subset[r.subset].push_back(r.coverage);
    json per;
    for (const auto& [k, cr] : by_subset) per.push_back(aggregate_coverage(cr, CiType::ct));
    sens_j[std::to_string(n)] = per;
  }
  summary["ct_coverage_by_iterations"] = sens_j;
  summary["fidelity"] = {{"n_rmse", fid.n_rmse},
                         {"median_rel_rmse_diff", fid.median_rel_rmse_diff},
                         {"median_rel_sd_diff", fid.median_rel_sd_diff},
                         {"n_sign", fid.n_sign},
                         {"sign_agreement", fid.sign_agreement},
                         {"n_zero", fid.n_zero},
                         {"min_bias_mc_zero", fid.min_bias_mc_zero},
                         {"min_bias_amc_zero", fid.min_bias_amc_zero}};
  io::write_file(c.out / "summary.json", summary.dump(2) + "\n");

  io::write_file(c.out / kHashesFile, json(artifact_hashes(c.out)).dump(2) + "\n");
  log << "[evaluate] ct coverage " << aggregate_coverage(coverage, CiType::ct) << ", z coverage "
      << aggregate_coverage(coverage, CiType::z) << ", median relative rmse difference " << fid.median_rel_rmse_diff
      << "\n";
}

}  // namespace

std::map<std::string, std::string> artifact_hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir).generic_string();
    if (rel == kHashesFile || rel.find(".tmp") != std::string::npos) continue;
    out[rel] = io::sha256_file(entry.path());
  }
  return out;
}

int cmd_pipeline(const RunConfig& config, Stage stage, std::ostream& log, std::ostream& err) {
  try {
    config.validate();
    if (config.out.empty()) throw ConfigError("no output directory given");
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }
  const std::vector<std::pair<Stage, void (*)(const RunConfig&, std::ostream&)>> stages{
      {Stage::cef, stage_cef},           {Stage::mc, stage_mc},
      {Stage::amc, stage_amc},           {Stage::tabulate, stage_tabulate},
      {Stage::intervals, stage_intervals}, {Stage::evaluate, stage_evaluate}};
  for (const auto& [s, fn] : stages) {
    if (stage != Stage::all && stage != s) continue;
    try {
      fn(config, log);
    } catch (const IntegrityError& e) {
      err << "[" << to_string(s) << "] manifest integrity error: " << e.what() << "\n";
      return 3;
    } catch (const std::exception& e) {
      err << "[" << to_string(s) << "] " << e.what() << "\n";
      return 3;
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Validation

bool ValidationReport::ok() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::string ValidationReport::to_json() const {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& c : checks) {
    arr.push_back({{"name", c.name},
                   {"passed", c.passed},
                   {"checked", c.checked},
                   {"failures", c.failures},
                   {"detail", c.detail}});
  }
  return nlohmann::ordered_json{{"ok", ok()}, {"checks", arr}}.dump(2) + "\n";
}

namespace {

class Check {
 public:
  explicit Check(std::string name) { r_.name = std::move(name); }
  void pass() { ++r_.checked; }
  void fail(const std::string& detail) {
    ++r_.checked;
    ++r_.failures;
    if (r_.passed) r_.detail = detail;
    r_.passed = false;
  }
  CheckResult result() const { return r_; }

 private:
  CheckResult r_;
};

Count sum(const CellVector& v) { return std::accumulate(v.begin(), v.end(), Count{0}); }

void validate_set(const fs::path& dir, const char* manifest, const Artifacts& a, const Invariants& inv,
                  ValidationReport& report) {
  const std::string tag = std::string(manifest).substr(9, std::string(manifest).find('.') - 9);
  Check integrity(tag + ".manifest_integrity"), nonneg(tag + ".non_negative_integers"),
      consistency(tag + ".hierarchical_consistency"), invariants(tag + ".invariant_totals");

  ReplicateSet rs;
  try {
    rs = ReplicateSet::from_manifest(dir / manifest);
  } catch (const std::exception& e) {
    integrity.fail(e.what());
    report.checks.push_back(integrity.result());
    return;
  }
  const auto& h = *a.hierarchy;
  const std::size_t cells = a.schema->cell_count();

  std::optional<std::vector<CellVector>> ref;
  try {
    ref = load_histogram(dir / rs.reference, a).aggregate_all();
  } catch (const std::exception& e) {
    invariants.fail("reference " + rs.reference + ": " + e.what());
  }

  for (const auto& rec : rs.replicates) {
    for (const auto& [file, sha] : {std::pair{rec.file, rec.sha256}, std::pair{rec.units_file, rec.units_sha256}}) {
      const auto p = dir / file;
      if (!fs::exists(p)) {
        integrity.fail(file + " is missing");
      } else if (io::sha256_file(p) != sha) {
        integrity.fail(file + " does not match its manifest hash");
      } else {
        integrity.pass();
      }
    }

    std::vector<CellVector> units;
    try {
      units = load_histogram(dir / rec.file, a).aggregate_all();
      std::ifstream in(dir / rec.units_file);
      if (!in) throw DataError("cannot open " + rec.units_file);
      const auto internal = read_unit_table(in, h, cells);
      bool ok = true;
      for (std::size_t u = 0; u < h.size() && ok; ++u) {
        if (internal[u].empty()) continue;
        for (std::size_t j = 0; j < cells; ++j) {
          if (internal[u][j] < 0) {
            nonneg.fail(rec.units_file + ": unit " + h.unit(u).id + " cell " + std::to_string(j) + " is negative");
            ok = false;
            break;
          }
        }
      }
      if (ok) nonneg.pass();
      // Internal units come from the unit table; blocks from the histogram.
      for (std::size_t u = 0; u < h.size(); ++u) {
        if (!internal[u].empty()) units[u] = internal[u];
      }
    } catch (const std::exception& e) {
      nonneg.fail(rec.file + ": " + e.what());
      continue;
    }

    bool consistent = true;
    for (std::size_t u = 0; u < h.size() && consistent; ++u) {
      const auto& unit = h.unit(u);
      if (unit.children.empty()) continue;
      for (std::size_t j = 0; j < cells; ++j) {
        Count s = 0;
        for (auto ch : unit.children) s += units[ch][j];
        if (s != units[u][j]) {
          consistency.fail(rec.file + ": unit " + unit.id + " cell " + std::to_string(j) + " has " +
                           std::to_string(units[u][j]) + " but its children sum to " + std::to_string(s));
          consistent = false;
          break;
        }
      }
    }
    if (consistent) consistency.pass();

    if (ref) {
      std::vector<std::size_t> held;
      if (inv.root_total) held.push_back(h.root());
      if (inv.level1_totals && h.depth() > 1) {
        for (auto u : h.units_at_level(1)) held.push_back(u);
      }
      bool ok = true;
      for (auto u : held) {
        if (sum(units[u]) != sum((*ref)[u])) {
          invariants.fail(rec.file + ": unit " + h.unit(u).id + " total " + std::to_string(sum(units[u])) +
                          " differs from the invariant " + std::to_string(sum((*ref)[u])));
          ok = false;
          break;
        }
      }
      if (ok) invariants.pass();
    }
  }
  for (const auto& c : {integrity, nonneg, consistency, invariants}) report.checks.push_back(c.result());
}

}  // namespace

ValidationReport cmd_validate(const fs::path& dir) {
  ValidationReport report;
  Check present("artifacts_present");
  for (const char* f : {kSchemaFile, kHierarchyFile, kConfigFile, kCefFile, kWorkloadFile, kManifestMc, kManifestAmc,
                        kPpmf0File}) {
    if (fs::exists(dir / f)) {
      present.pass();
    } else {
      present.fail(std::string(f) + " is missing");
    }
  }
  report.checks.push_back(present.result());

  Artifacts a;
  Invariants inv;
  try {
    a = load_structure(dir);
    const auto cfg = json::parse(io::read_file(dir / kConfigFile));
    const auto& ij = cfg.at("invariants");
    inv.root_total = ij.at("root_total").get<bool>();
    inv.level1_totals = ij.at("level1_totals").get<bool>();
  } catch (const std::exception& e) {
    Check structure("structure");
    structure.fail(e.what());
    report.checks.push_back(structure.result());
    return report;
  }

  validate_set(dir, kManifestMc, a, inv, report);
  validate_set(dir, kManifestAmc, a, inv, report);

  Check ppmf0("ppmf0_is_mc_replicate");
  try {
    const auto rs = ReplicateSet::from_manifest(dir / kManifestMc);
    const auto cfg = json::parse(io::read_file(dir / kConfigFile));
    const auto idx = cfg.at("ppmf0_index").get<std::size_t>();
    if (io::sha256_file(dir / kPpmf0File) == rs.replicates.at(idx).sha256) {
      ppmf0.pass();
    } else {
      ppmf0.fail("ppmf_0.csv differs from MC replicate " + std::to_string(idx));
    }
  } catch (const std::exception& e) {
    ppmf0.fail(e.what());
  }
  report.checks.push_back(ppmf0.result());

  if (fs::exists(dir / kHashesFile)) {
    Check hashes("artifact_hashes");
    try {
      const auto recorded = json::parse(io::read_file(dir / kHashesFile)).get<std::map<std::string, std::string>>();
      const auto now = artifact_hashes(dir);
      for (const auto& [file, sha] : recorded) {
        const auto it = now.find(file);
        if (it == now.end()) {
          hashes.fail(file + " is missing");
        } else if (it->second != sha) {
          hashes.fail(file + " changed since the run");
        } else {
          hashes.pass();
        }
      }
    } catch (const std::exception& e) {
      hashes.fail(e.what());
    }
    report.checks.push_back(hashes.result());
  }
  return report;
}

}  // namespace tdamc
