#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "tdamc/errors.hpp"
#include "tdamc/io.hpp"
#include "tdamc/query.hpp"
#include "tdamc/simulate.hpp"

using namespace tdamc;
namespace fs = std::filesystem;

namespace {

void write_reference(const Histogram& h, const fs::path& path) {
  std::ofstream out(path);
  h.write_csv(out);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Env {
  fixtures::TempDir dir;
  Histogram cef = fixtures::small_cef({2, 3}, 13);
  TdaParams params = fixtures::params_for(cef, 1.0);
  Env() { write_reference(cef, dir.path() / "cef.csv"); }
};

}  // namespace

TEST(Simulate, KindNames) {
  EXPECT_EQ(to_string(ReplicateKind::mc), "MC");
  EXPECT_EQ(to_string(ReplicateKind::amc), "AMC");
  EXPECT_EQ(replicate_kind_from_string("AMC"), ReplicateKind::amc);
}

TEST(Simulate, ZeroNoiseReplicatesEqualInput) {
  Env s;
  const auto p = fixtures::params_for(s.cef, 1e10);
  const auto rs = run_mc(s.cef, "cef.csv", p, 2, 1, s.dir.path());
  ASSERT_EQ(rs.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(load_replicate(rs, i, s.cef.schema_ptr(), s.cef.hierarchy_ptr()), s.cef);
  }
}

TEST(Simulate, RejectsFewerThanTwoReplicates) {
  Env s;
  EXPECT_THROW(run_mc(s.cef, "cef.csv", s.params, 1, 1, s.dir.path()), ParameterError);
  EXPECT_THROW(run_amc(s.cef, "cef.csv", s.params, 0, 1, s.dir.path()), ParameterError);
}

TEST(Simulate, DeterministicAndWorkerCountInvariant) {
  Env a, b;
  const auto ra = run_mc(a.cef, "cef.csv", a.params, 4, 77, a.dir.path());
  SimulationOptions opts;
  opts.workers = 3;
  std::atomic<int> done{0};
  opts.progress = [&](std::size_t) { ++done; };
  const auto rb = run_mc(b.cef, "cef.csv", b.params, 4, 77, b.dir.path(), opts);
  EXPECT_EQ(done.load(), 4);
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(ra.replicates[i].sha256, rb.replicates[i].sha256);
    EXPECT_EQ(ra.replicates[i].units_sha256, rb.replicates[i].units_sha256);
    EXPECT_EQ(ra.replicates[i].seed, replicate_seed(77, ReplicateKind::mc, i));
    EXPECT_EQ(read_file(a.dir.path() / ra.replicates[i].file), read_file(b.dir.path() / rb.replicates[i].file));
  }
  EXPECT_EQ(ra.manifest_json(), rb.manifest_json());
  // Distinct replicates differ.
  EXPECT_NE(ra.replicates[0].sha256, ra.replicates[1].sha256);
  // MC and AMC streams are distinct for the same master seed.
  EXPECT_NE(replicate_seed(77, ReplicateKind::mc, 0), replicate_seed(77, ReplicateKind::amc, 0));
}

TEST(Simulate, ManifestRoundTripAndVerify) {
  Env s;
  const auto rs = run_amc(s.cef, "cef.csv", s.params, 3, 5, s.dir.path());
  EXPECT_EQ(rs.kind, ReplicateKind::amc);
  EXPECT_EQ(rs.params_hash, io::sha256_hex(params_json(s.params)));
  {
    std::ofstream out(s.dir.path() / "manifest_amc.json");
    out << rs.manifest_json();
  }
  const auto back = ReplicateSet::from_manifest(s.dir.path() / "manifest_amc.json");
  EXPECT_EQ(back.manifest_json(), rs.manifest_json());
  EXPECT_EQ(back.root, s.dir.path());
  EXPECT_NO_THROW(back.verify());

  fs::remove(s.dir.path() / rs.replicates[1].file);
  try {
    back.verify();
    FAIL() << "verify passed after deletion";
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find(rs.replicates[1].file), std::string::npos) << e.what();
  }
}

TEST(Simulate, VerifyDetectsAlteredReference) {
  Env s;
  const auto rs = run_mc(s.cef, "cef.csv", s.params, 2, 5, s.dir.path());
  {
    std::ofstream out(s.dir.path() / "cef.csv", std::ios::app);
    out << "\n";
  }
  EXPECT_THROW(rs.verify(), IntegrityError);
  EXPECT_NO_THROW(rs.verify(false));
}

TEST(Simulate, ParamsHashTracksParameters) {
  Env s;
  auto other = s.params;
  other.invariants.level1_totals = !other.invariants.level1_totals;
  EXPECT_EQ(params_json(s.params), params_json(s.params));
  EXPECT_NE(params_json(s.params), params_json(other));
}

TEST(Subset, FullSizeIsIdentity) {
  const auto pos = subset_positions(10, 10, 3);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(pos[i], i);
  EXPECT_THROW(subset_positions(10, 1, 3), ParameterError);
  EXPECT_THROW(subset_positions(10, 11, 3), ParameterError);
}

TEST(Subset, SelectsRecordsInOriginalOrder) {
  ReplicateSet rs;
  for (std::size_t i = 0; i < 8; ++i) rs.replicates.push_back({i, "f" + std::to_string(i), "", i, "", ""});
  const auto sub = subset(rs, 3, 9);
  const auto pos = subset_positions(8, 3, 9);
  ASSERT_EQ(sub.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(sub.replicates[i].index, pos[i]);
  EXPECT_TRUE(std::is_sorted(pos.begin(), pos.end()));
  EXPECT_EQ(std::set<std::size_t>(pos.begin(), pos.end()).size(), 3u);
  EXPECT_THROW(subset(rs, 9, 1), ParameterError);
}

TEST(Subset, OverlapIsHypergeometric) {
  const std::size_t N = 100, n = 25, trials = 1000;
  double sum = 0;
  std::vector<int> inclusion(N, 0);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto a = subset_positions(N, n, 2 * t);
    const auto b = subset_positions(N, n, 2 * t + 1);
    std::vector<std::size_t> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    sum += static_cast<double>(both.size());
    for (auto p : a) ++inclusion[p];
  }
  const double mean = static_cast<double>(n * n) / N;
  const double var = n * (static_cast<double>(n) / N) * (1 - static_cast<double>(n) / N) * (N - n) / (N - 1.0);
  EXPECT_NEAR(sum / trials, mean, 3 * std::sqrt(var / trials));
  const double p = static_cast<double>(n) / N;
  const double sd = std::sqrt(trials * p * (1 - p));
  for (int c : inclusion) EXPECT_NEAR(c, trials * p, 4.5 * sd);
}

TEST(Simulate, ReplicatesShowNoLag1Autocorrelation) {
  Env s;
  const std::size_t m = 40;
  const auto rs = run_mc(s.cef, "cef.csv", s.params, m, 31, s.dir.path());
  WorkloadConfig wc;
  wc.blocks_per_stratum = 0;
  wc.block_unions = 0;
  const auto w = make_workload(s.cef, wc, 1);
  const Tabulator tab(s.cef.hierarchy(), Universe::person, w);
  std::vector<std::vector<Count>> vals;
  for (std::size_t i = 0; i < m; ++i) {
    vals.push_back(tab.tabulate(load_replicate(rs, i, s.cef.schema_ptr(), s.cef.hierarchy_ptr())));
  }
  double acc = 0;
  int used = 0;
  for (std::size_t q = 0; q < w.size(); ++q) {
    double mean = 0;
    for (std::size_t i = 0; i < m; ++i) mean += static_cast<double>(vals[i][q]) / m;
    double num = 0, den = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = static_cast<double>(vals[i][q]) - mean;
      den += d * d;
      if (i + 1 < m) num += d * (static_cast<double>(vals[i + 1][q]) - mean);
    }
    if (den <= 0) continue;
    acc += num / den;
    ++used;
  }
  ASSERT_GT(used, 10);
  // Independent draws give an average near -1/m.
  EXPECT_NEAR(acc / used, -1.0 / m, 0.15);
}

TEST(ParallelFor, RunsEveryIndexAndRethrowsLowestFailure) {
  std::vector<int> hit(50, 0);
  parallel_for(50, 4, [&](std::size_t i) { hit[i] = 1; });
  for (int h : hit) EXPECT_EQ(h, 1);
  try {
    parallel_for(20, 3, [](std::size_t i) {
      if (i == 7 || i == 13) throw DataError("fail " + std::to_string(i));
    });
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "fail 7");
  }
}
