#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "fixtures.hpp"
#include "tdamc/errors.hpp"
#include "tdamc/model.hpp"

using namespace tdamc;

TEST(Schema, RejectsBadAttributes) {
  EXPECT_THROW(Schema(Universe::person, {{"a", 1}}), SchemaError);
  EXPECT_THROW(Schema(Universe::person, {{"a", 2}, {"a", 3}}), SchemaError);
}

TEST(Schema, EncodeDecodeRoundTripFirstAttributeMostSignificant) {
  const auto s = fixtures::desk_schema();
  EXPECT_EQ(s->cell_count(), 16u);
  for (std::size_t c = 0; c < s->cell_count(); ++c) EXPECT_EQ(s->encode(s->decode(c)), c);
  const std::vector<std::uint32_t> v{1, 0, 0};
  EXPECT_EQ(s->encode(v), 8u);
  EXPECT_EQ(s->decode(1), (std::vector<std::uint32_t>{0, 0, 1}));
}

TEST(Schema, MarginalMapAgreesWithDecode) {
  const auto s = fixtures::desk_schema();
  const std::vector<std::size_t> attrs{2, 0};  // any order; result uses schema order (sex, hisp)
  const auto map = s->marginal_map(attrs);
  EXPECT_EQ(s->marginal_size(attrs), 4u);
  for (std::size_t c = 0; c < s->cell_count(); ++c) {
    const auto d = s->decode(c);
    EXPECT_EQ(map[c], d[0] * 2 + d[2]);
  }
  EXPECT_EQ(s->marginal_map({}), std::vector<std::uint32_t>(16, 0));
}

TEST(Schema, JsonRoundTrip) {
  const auto s = fixtures::desk_schema();
  EXPECT_EQ(Schema::from_json(s->to_json()), *s);
  EXPECT_THROW(Schema::from_json("{\"universe\":\"person\"}"), SchemaError);
}

TEST(GeoHierarchy, FromFanoutsShape) {
  const std::vector<std::uint32_t> f{4, 4, 8};
  const auto h = GeoHierarchy::from_fanouts({"root", "state", "county", "block"}, f);
  EXPECT_EQ(h.size(), 1u + 4 + 16 + 128);
  EXPECT_EQ(h.units_at_level(1).size(), 4u);
  EXPECT_EQ(h.block_count(), 128u);
  EXPECT_EQ(h.unit(h.root()).id, "root");
  EXPECT_TRUE(h.contains("s1c1b1"));
  EXPECT_TRUE(h.contains("s4c4b8"));
  EXPECT_THROW(h.index_of("s5"), LookupError);
  for (std::size_t u = 0; u < h.size(); ++u) {
    const auto& unit = h.unit(u);
    if (unit.parent) EXPECT_EQ(h.unit(*unit.parent).level + 1, unit.level);
  }
  const std::vector<std::uint32_t> bad{2, 0};
  EXPECT_THROW(GeoHierarchy::from_fanouts({"r", "s", "b"}, bad), ConfigError);
}

TEST(GeoHierarchy, FromUnitsValidates) {
  using S = GeoHierarchy::UnitSpec;
  const std::vector<S> two_roots{{"r1", "root", ""}, {"r2", "root", ""}};
  EXPECT_THROW(GeoHierarchy::from_units({"root", "block"}, two_roots), ConfigError);
  const std::vector<S> skip{{"r", "root", ""}, {"s", "state", "r"}, {"b", "block", "r"}};
  EXPECT_THROW(GeoHierarchy::from_units({"root", "state", "block"}, skip), ConfigError);
  const std::vector<S> early_leaf{{"r", "root", ""}, {"s1", "state", "r"}, {"s2", "state", "r"}, {"b", "block", "s1"}};
  EXPECT_THROW(GeoHierarchy::from_units({"root", "state", "block"}, early_leaf), ConfigError);
  const std::vector<S> dup{{"r", "root", ""}, {"b", "block", "r"}, {"b", "block", "r"}};
  EXPECT_THROW(GeoHierarchy::from_units({"root", "block"}, dup), ConfigError);
}

TEST(GeoHierarchy, CsvRoundTrip) {
  const std::vector<std::uint32_t> f{3, 2};
  const auto h = GeoHierarchy::from_fanouts({"root", "state", "block"}, f);
  std::stringstream ss;
  h.write_csv(ss);
  EXPECT_EQ(GeoHierarchy::read_csv(ss), h);
}

TEST(Histogram, AggregateMatchesBlockSums) {
  const auto cef = fixtures::small_cef({3, 4}, 11);
  const auto& h = cef.hierarchy();
  const auto all = cef.aggregate_all();
  for (std::size_t u = 0; u < h.size(); ++u) {
    const auto& unit = h.unit(u);
    CellVector flat(cef.schema().cell_count(), 0);
    for (std::size_t b = unit.block_begin; b < unit.block_end; ++b) {
      for (std::size_t c = 0; c < flat.size(); ++c) flat[c] += cef.count(b, c);
    }
    EXPECT_EQ(all[u], flat);
    EXPECT_EQ(cef.aggregate(unit.id), flat);
  }
  EXPECT_EQ(std::accumulate(all[h.root()].begin(), all[h.root()].end(), Count{0}), cef.total());
}

TEST(Histogram, CsvRoundTripAndRejections) {
  const auto cef = fixtures::small_cef({2, 2}, 3);
  std::stringstream ss;
  cef.write_csv(ss);
  EXPECT_EQ(Histogram::read_csv(ss, cef.schema_ptr(), cef.hierarchy_ptr()), cef);

  auto parse = [&](const std::string& text) {
    std::istringstream in(text);
    return Histogram::read_csv(in, cef.schema_ptr(), cef.hierarchy_ptr());
  };
  EXPECT_THROW(parse("block_id,cell_index,count\nl1b1,0,-1\n"), DataError);
  EXPECT_THROW(parse("block_id,cell_index,count\nl1b1,0,1\nl1b1,0,2\n"), DataError);
  EXPECT_THROW(parse("block_id,cell_index,count\nl1b1,9,1\n"), DataError);
  EXPECT_THROW(parse("block_id,cell_index,count\nl1,0,1\n"), Error);
  EXPECT_THROW(parse("block,cell,count\n"), DataError);
  EXPECT_THROW(parse("block_id,cell_index,count\nl1b1,0,1.5\n"), DataError);
}

TEST(Histogram, FromDenseRejectsNegatives) {
  const auto cef = fixtures::small_cef({2, 2}, 3);
  std::vector<CellVector> rows(cef.hierarchy().block_count(), CellVector(4, 0));
  rows[0][0] = -1;
  EXPECT_THROW(Histogram::from_dense(cef.schema_ptr(), cef.hierarchy_ptr(), rows), DataError);
}

TEST(Synth, DeterministicAndSeedSensitive) {
  const auto a = fixtures::small_cef({4, 4, 8}, 5, fixtures::desk_schema());
  const auto b = fixtures::small_cef({4, 4, 8}, 5, fixtures::desk_schema());
  const auto c = fixtures::small_cef({4, 4, 8}, 6, fixtures::desk_schema());
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
}

TEST(Synth, ZeroInflationShare) {
  SynthConfig cfg;
  cfg.schema = fixtures::desk_schema();
  cfg.zero_inflation = 0.6;
  const auto h = synth_cef(cfg, 1);
  std::size_t zeros = 0, cells = 0;
  for (std::size_t b = 0; b < h.hierarchy().block_count(); ++b) {
    for (auto v : h.block_vector(b)) {
      zeros += v == 0;
      ++cells;
    }
  }
  const double p = static_cast<double>(zeros) / static_cast<double>(cells);
  EXPECT_NEAR(p, 0.6, 4 * std::sqrt(0.24 / static_cast<double>(cells)));
}
