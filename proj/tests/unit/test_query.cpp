#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "tdamc/errors.hpp"
#include "tdamc/query.hpp"

using namespace tdamc;

namespace {

Histogram desk_cef() { return fixtures::small_cef({3, 3, 6}, 21, fixtures::desk_schema()); }

std::vector<std::uint32_t> all_cells(const Schema& s) {
  std::vector<std::uint32_t> v(s.cell_count());
  for (std::size_t c = 0; c < v.size(); ++c) v[c] = static_cast<std::uint32_t>(c);
  return v;
}

// Flat block-cell sum, independent of the hierarchy aggregation.
Count flat_sum(const Histogram& h, const std::vector<std::string>& blocks, const std::vector<std::uint32_t>& cells) {
  Count s = 0;
  for (const auto& id : blocks) {
    const auto ord = h.hierarchy().block_ordinal(h.hierarchy().index_of(id));
    for (auto c : cells) s += h.count(ord, c);
  }
  return s;
}

std::vector<std::string> descendant_blocks(const GeoHierarchy& h, std::size_t unit) {
  std::vector<std::string> out;
  const auto& u = h.unit(unit);
  for (std::size_t b = u.block_begin; b < u.block_end; ++b) out.push_back(h.unit(h.blocks()[b]).id);
  return out;
}

}  // namespace

TEST(SizeGroup, BoundaryExamples) {
  EXPECT_EQ(label(size_group(0)), "0");
  EXPECT_EQ(label(size_group(1)), "1-4");
  EXPECT_EQ(label(size_group(4)), "1-4");
  EXPECT_EQ(label(size_group(5)), "5-10");
  EXPECT_EQ(label(size_group(10)), "5-10");
  EXPECT_EQ(label(size_group(11)), "11-24");
  EXPECT_EQ(label(size_group(24)), "11-24");
  EXPECT_EQ(label(size_group(25)), "25-99");
  EXPECT_EQ(label(size_group(99)), "25-99");
  EXPECT_EQ(label(size_group(100)), "100-499");
  EXPECT_EQ(label(size_group(499)), "100-499");
  EXPECT_EQ(label(size_group(500)), "500-999");
  EXPECT_EQ(label(size_group(999)), "500-999");
  EXPECT_EQ(label(size_group(1000)), "1000+");
  EXPECT_EQ(label(size_group(123456789)), "1000+");
}

TEST(SizeGroup, PartitionIsOrderedAndComplete) {
  std::set<SizeGroup> seen;
  SizeGroup prev = size_group(0);
  for (Count v = 0; v <= 3000; ++v) {
    const auto g = size_group(v);
    ASSERT_GE(static_cast<int>(g), static_cast<int>(prev));
    prev = g;
    seen.insert(g);
  }
  EXPECT_EQ(seen.size(), kSizeGroups.size());
  for (auto g : kSizeGroups) EXPECT_EQ(size_group_from_label(label(g)), g);
  EXPECT_THROW(size_group_from_label("2-3"), DataError);
}

TEST(Evaluate, GrandTotalAndPointLookup) {
  const auto cef = desk_cef();
  const auto& h = cef.hierarchy();
  Query total{"t", Universe::person, all_cells(cef.schema()), h.unit(h.root()).id, "root"};
  EXPECT_EQ(evaluate(total, cef), cef.total());

  const auto b = h.blocks()[5];
  for (std::uint32_t c = 0; c < cef.schema().cell_count(); ++c) {
    Query point{"p", Universe::person, {c}, h.unit(b).id, "block"};
    EXPECT_EQ(evaluate(point, cef), cef.count(5, c));
  }
}

TEST(Evaluate, UnitQueriesMatchFlatSumOverDescendantBlocks) {
  const auto cef = desk_cef();
  const auto& h = cef.hierarchy();
  const auto sets = marginal_level_sets(cef.schema(), 2, true);
  for (std::size_t u = 0; u < h.size(); u += 3) {
    const auto blocks = descendant_blocks(h, u);
    for (const auto& [name, cells] : sets) {
      Query q{"q", Universe::person, cells, h.unit(u).id, h.level_names()[h.unit(u).level]};
      ASSERT_EQ(evaluate(q, cef), flat_sum(cef, blocks, cells)) << h.unit(u).id << " " << name;
      const auto agg = cef.aggregate(u);
      Count expect = 0;
      for (auto c : cells) expect += agg[c];
      ASSERT_EQ(evaluate(q, cef), expect);
    }
  }
}

TEST(Evaluate, BlockUnionMatchesFlatSum) {
  const auto cef = desk_cef();
  const auto& h = cef.hierarchy();
  SeedStream s(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::set<std::string> ids;
    const auto k = 1 + s.uniform_int(10);
    while (ids.size() < k) ids.insert(h.unit(h.blocks()[s.uniform_int(h.block_count())]).id);
    std::vector<std::string> blocks(ids.begin(), ids.end());
    std::vector<std::uint32_t> cells;
    for (std::uint32_t c = 0; c < cef.schema().cell_count(); ++c) {
      if (s.bernoulli(0.5)) cells.push_back(c);
    }
    if (cells.empty()) cells.push_back(0);
    Query q{"u", Universe::person, cells, blocks, "union"};
    ASSERT_EQ(evaluate(q, cef), flat_sum(cef, blocks, cells));
  }
}

TEST(Evaluate, AdditiveOverDisjointCellSets) {
  const auto cef = desk_cef();
  const auto& h = cef.hierarchy();
  const auto unit = h.unit(h.units_at_level(2)[1]).id;
  Query a{"a", Universe::person, {0, 3, 5}, unit, "county"};
  Query b{"b", Universe::person, {1, 2, 15}, unit, "county"};
  Query ab{"ab", Universe::person, {0, 1, 2, 3, 5, 15}, unit, "county"};
  EXPECT_EQ(evaluate(ab, cef), evaluate(a, cef) + evaluate(b, cef));
}

TEST(Evaluate, RejectsMalformedQueries) {
  const auto cef = desk_cef();
  const auto& h = cef.hierarchy();
  const auto b0 = h.unit(h.blocks()[0]).id;
  Query hh{"h", Universe::household, {0}, b0, "block"};
  EXPECT_THROW(evaluate(hh, cef), QueryError);
  Query empty{"e", Universe::person, {}, b0, "block"};
  EXPECT_THROW(evaluate(empty, cef), QueryError);
  Query no_blocks{"n", Universe::person, {0}, std::vector<std::string>{}, "union"};
  EXPECT_THROW(evaluate(no_blocks, cef), QueryError);
  Query dup{"d", Universe::person, {0}, std::vector<std::string>{b0, b0}, "union"};
  EXPECT_THROW(evaluate(dup, cef), QueryError);
  Query not_block{"nb", Universe::person, {0}, std::vector<std::string>{h.unit(h.root()).id}, "union"};
  EXPECT_THROW(evaluate(not_block, cef), LookupError);
  Query unknown{"x", Universe::person, {0}, std::string("nowhere"), "block"};
  EXPECT_THROW(evaluate(unknown, cef), LookupError);
}

TEST(MarginalLevelSets, CountsAndPartitions) {
  const auto schema = fixtures::desk_schema();
  const auto sets = marginal_level_sets(*schema, 2, true);
  // total + one-way (2+4+2) + two-way (8+4+8)
  EXPECT_EQ(sets.size(), 29u);
  EXPECT_EQ(sets[0].first, "*");
  EXPECT_EQ(sets[0].second.size(), 16u);
  EXPECT_EQ(sets[1].first, "sex=0");
  // Level sets of each attribute subset partition the cells.
  std::map<std::string, std::vector<int>> cover;
  for (std::size_t i = 1; i < sets.size(); ++i) {
    std::string key;
    for (const auto& part : std::vector<std::string>{"sex", "age", "hisp"}) {
      if (sets[i].first.find(part + "=") != std::string::npos) key += part;
    }
    auto& v = cover[key];
    v.resize(16, 0);
    for (auto c : sets[i].second) ++v[c];
  }
  EXPECT_EQ(cover.size(), 6u);
  for (const auto& [key, v] : cover) {
    for (int n : v) EXPECT_EQ(n, 1) << key;
  }
  EXPECT_EQ(marginal_level_sets(*schema, 3, false).size(), 8u + 20u + 16u);
}

TEST(Workload, StructureAndUniqueIds) {
  const auto cef = desk_cef();
  const auto& h = cef.hierarchy();
  WorkloadConfig cfg;
  cfg.blocks_per_stratum = 2;
  cfg.block_unions = 3;
  cfg.union_size = 4;
  const auto w = make_workload(cef, cfg, 5);
  std::set<std::string> ids;
  for (const auto& q : w) EXPECT_TRUE(ids.insert(q.id).second) << q.id;
  const std::size_t per_geo = 29;
  const std::size_t non_block = h.size() - h.block_count();
  std::size_t block_q = 0, union_q = 0;
  std::set<std::string> union_geos;
  for (const auto& q : w) {
    if (q.geolevel == "block") ++block_q;
    if (q.geolevel == "aian-analogue") {
      ++union_q;
      const auto& g = std::get<std::vector<std::string>>(q.geography);
      EXPECT_EQ(g.size(), 4u);
      EXPECT_EQ(std::set<std::string>(g.begin(), g.end()).size(), 4u);
    }
  }
  EXPECT_EQ(union_q, 3 * per_geo);
  EXPECT_EQ(block_q % per_geo, 0u);
  EXPECT_LE(block_q / per_geo, 2 * (cfg.strata_edges.size() + 1));
  EXPECT_EQ(w.size(), non_block * per_geo + block_q + union_q);
  EXPECT_EQ(w[0].id, h.unit(h.root()).id + "|*");

  const auto again = make_workload(cef, cfg, 5);
  ASSERT_EQ(again.size(), w.size());
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(again[i].id, w[i].id);
}

TEST(Workload, ZeroPerStratumTakesEveryBlock) {
  const auto cef = fixtures::small_cef({2, 2});
  WorkloadConfig cfg;
  cfg.blocks_per_stratum = 0;
  cfg.block_unions = 0;
  const auto w = make_workload(cef, cfg, 1);
  const auto per_geo = marginal_level_sets(cef.schema(), cfg.max_order, true).size();
  EXPECT_EQ(w.size(), cef.hierarchy().size() * per_geo);
}

TEST(Workload, CsvRoundTrip) {
  const auto cef = desk_cef();
  WorkloadConfig cfg;
  cfg.blocks_per_stratum = 1;
  const auto w = make_workload(cef, cfg, 2);
  std::stringstream ss;
  write_workload(ss, w);
  const auto back = read_workload(ss, cef.hierarchy());
  ASSERT_EQ(back.size(), w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_EQ(back[i].id, w[i].id);
    EXPECT_EQ(back[i].cells, w[i].cells);
    EXPECT_EQ(back[i].geography, w[i].geography);
    EXPECT_EQ(back[i].geolevel, w[i].geolevel);
    EXPECT_EQ(back[i].universe, w[i].universe);
  }
}

TEST(Workload, DuplicateIdIsDataError) {
  const auto cef = fixtures::small_cef({2, 2});
  std::stringstream ss("query_id,universe,cells,geo_kind,geo_ids\nq,person,0,unit,root\nq,person,1,unit,root\n");
  EXPECT_THROW(read_workload(ss, cef.hierarchy()), DataError);
}

TEST(Tabulator, AgreesWithEvaluate) {
  const auto cef = desk_cef();
  const auto w = make_workload(cef, WorkloadConfig{}, 4);
  const Tabulator tab(cef.hierarchy(), Universe::person, w);
  const auto values = tab.tabulate(cef);
  ASSERT_EQ(values.size(), w.size());
  for (std::size_t i = 0; i < w.size(); ++i) ASSERT_EQ(values[i], evaluate(w[i], cef)) << w[i].id;
}

TEST(Tabulation, CsvRoundTripOrdersReplicates) {
  Tabulation t{{"a", "b"}, {{5, 6, 7}, {0, 1, 2}}};
  const std::vector<std::size_t> ids{2, 0, 1};
  std::stringstream ss;
  write_tabulation(ss, t, ids);
  std::vector<std::size_t> back_ids;
  const auto back = read_tabulation(ss, &back_ids);
  EXPECT_EQ(back_ids, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(back.query_ids, t.query_ids);
  EXPECT_EQ(back.values[0], (std::vector<Count>{6, 7, 5}));
  EXPECT_EQ(back.values[1], (std::vector<Count>{1, 2, 0}));
}

TEST(Tabulation, MissingOrDuplicateCellsAreDataErrors) {
  std::stringstream missing("query_id,replicate,value\na,0,1\na,1,2\nb,0,3\n");
  EXPECT_THROW(read_tabulation(missing), DataError);
  std::stringstream dup("query_id,replicate,value\na,0,1\na,0,2\n");
  EXPECT_THROW(read_tabulation(dup), DataError);
}
