#include "tdamc/query.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include "tdamc/errors.hpp"
#include "tdamc/io.hpp"
#include "tdamc/rng.hpp"

namespace tdamc {

SizeGroup size_group(Count v) {
  if (v <= 0) return SizeGroup::g0;
  if (v <= 4) return SizeGroup::g1_4;
  if (v <= 10) return SizeGroup::g5_10;
  if (v <= 24) return SizeGroup::g11_24;
  if (v <= 99) return SizeGroup::g25_99;
  if (v <= 499) return SizeGroup::g100_499;
  if (v <= 999) return SizeGroup::g500_999;
  return SizeGroup::g1000p;
}

std::string_view label(SizeGroup g) {
  static constexpr std::array<std::string_view, 8> kLabels{"0",      "1-4",     "5-10",    "11-24",
                                                           "25-99",  "100-499", "500-999", "1000+"};
  return kLabels[static_cast<std::size_t>(g)];
}

SizeGroup size_group_from_label(std::string_view l) {
  for (auto g : kSizeGroups) {
    if (label(g) == l) return g;
  }
  throw DataError("unknown size group '" + std::string(l) + "'");
}

namespace {

std::vector<std::size_t> resolve_units(const Query& q, const GeoHierarchy& h) {
  if (q.cells.empty()) throw QueryError("query '" + q.id + "' has an empty cell set");
  if (const auto* unit = std::get_if<std::string>(&q.geography)) return {h.index_of(*unit)};
  const auto& ids = std::get<std::vector<std::string>>(q.geography);
  if (ids.empty()) throw QueryError("query '" + q.id + "' has an empty block set");
  std::vector<std::size_t> units;
  for (const auto& id : ids) {
    const auto idx = h.index_of(id);
    h.block_ordinal(idx);  // throws for non-blocks
    units.push_back(idx);
  }
  std::sort(units.begin(), units.end());
  if (std::adjacent_find(units.begin(), units.end()) != units.end()) {
    throw QueryError("query '" + q.id + "' lists a block twice");
  }
  return units;
}

}  // namespace

Count evaluate(const Query& q, const Histogram& h) {
  if (q.universe != h.schema().universe()) {
    throw QueryError("query '" + q.id + "' is over the " + to_string(q.universe) + " universe but the histogram is " +
                     to_string(h.schema().universe()));
  }
  Count sum = 0;
  for (auto unit : resolve_units(q, h.hierarchy())) {
    const auto v = h.aggregate(unit);
    for (auto c : q.cells) sum += v.at(c);
  }
  return sum;
}

Tabulator::Tabulator(const GeoHierarchy& hierarchy, Universe universe, std::vector<Query> queries)
    : universe_(universe), queries_(std::move(queries)) {
  resolved_.reserve(queries_.size());
  for (const auto& q : queries_) {
    if (q.universe != universe_) throw QueryError("query '" + q.id + "' is over the wrong universe");
    resolved_.push_back({resolve_units(q, hierarchy)});
  }
}

std::vector<Count> Tabulator::tabulate(const Histogram& h) const {
  if (h.schema().universe() != universe_) throw QueryError("histogram universe does not match the workload");
  const auto agg = h.aggregate_all();
  std::vector<Count> out(queries_.size(), 0);
  for (std::size_t i = 0; i < queries_.size(); ++i) {
    Count sum = 0;
    for (auto u : resolved_[i].units) {
      const auto& v = agg[u];
      for (auto c : queries_[i].cells) sum += v.at(c);
    }
    out[i] = sum;
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<std::uint32_t>>> marginal_level_sets(const Schema& schema,
                                                                                    std::size_t max_order,
                                                                                    bool include_total) {
  const auto& attrs = schema.attributes();
  const std::size_t a = attrs.size();
  std::vector<std::pair<std::string, std::vector<std::uint32_t>>> out;
  if (include_total) {
    std::vector<std::uint32_t> all(schema.cell_count());
    for (std::size_t c = 0; c < all.size(); ++c) all[c] = static_cast<std::uint32_t>(c);
    out.emplace_back("*", std::move(all));
  }
  for (std::size_t order = 1; order <= std::min(max_order, a); ++order) {
    // Attribute subsets of this size in lexicographic order.
    std::vector<std::size_t> subset(order);
    for (std::size_t i = 0; i < order; ++i) subset[i] = i;
    while (true) {
      std::size_t combos = 1;
      for (auto s : subset) combos *= attrs[s].cardinality;
      for (std::size_t v = 0; v < combos; ++v) {
        std::vector<std::uint32_t> values(order);
        std::size_t rest = v;
        for (std::size_t i = order; i-- > 0;) {
          values[i] = static_cast<std::uint32_t>(rest % attrs[subset[i]].cardinality);
          rest /= attrs[subset[i]].cardinality;
        }
        std::string name;
        for (std::size_t i = 0; i < order; ++i) {
          if (i) name += '&';
          name += attrs[subset[i]].name + '=' + std::to_string(values[i]);
        }
        std::vector<std::uint32_t> cells;
        for (std::size_t c = 0; c < schema.cell_count(); ++c) {
          const auto dv = schema.decode(c);
          bool match = true;
          for (std::size_t i = 0; i < order && match; ++i) match = dv[subset[i]] == values[i];
          if (match) cells.push_back(static_cast<std::uint32_t>(c));
        }
        out.emplace_back(std::move(name), std::move(cells));
      }
      // Next combination.
      std::size_t i = order;
      while (i-- > 0 && subset[i] == a - order + i) {
      }
      if (i == static_cast<std::size_t>(-1)) break;
      ++subset[i];
      for (std::size_t j = i + 1; j < order; ++j) subset[j] = subset[j - 1] + 1;
    }
  }
  return out;
}

std::vector<Query> make_workload(const Histogram& cef, const WorkloadConfig& config, std::uint64_t seed) {
  const auto& hier = cef.hierarchy();
  const auto universe = cef.schema().universe();
  const auto sets = marginal_level_sets(cef.schema(), config.max_order, config.include_total);
  SeedStream stream = SeedStream(seed).derive("workload");

  std::vector<Query> out;
  auto add_unit = [&](std::size_t unit) {
    const auto& u = hier.unit(unit);
    for (const auto& [name, cells] : sets) {
      out.push_back({u.id + "|" + name, universe, cells, u.id, hier.level_names()[u.level]});
    }
  };
  for (std::size_t l = 0; l + 1 < hier.depth(); ++l) {
    for (auto unit : hier.units_at_level(l)) add_unit(unit);
  }

  // Stratified block sample.
  const auto& blocks = hier.blocks();
  if (config.blocks_per_stratum == 0) {
    for (auto b : blocks) add_unit(b);
  } else {
    std::vector<std::vector<std::size_t>> strata(config.strata_edges.size() + 1);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto v = cef.block_vector(b);
      Count total = 0;
      for (auto x : v) total += x;
      const auto s = static_cast<std::size_t>(
          std::upper_bound(config.strata_edges.begin(), config.strata_edges.end(), total) -
          config.strata_edges.begin());
      strata[s].push_back(blocks[b]);
    }
    std::vector<std::size_t> chosen;
    for (auto& stratum : strata) {
      const auto take = std::min(config.blocks_per_stratum, stratum.size());
      for (std::size_t i = 0; i < take; ++i) {
        const auto j = i + static_cast<std::size_t>(stream.uniform_int(stratum.size() - i));
        std::swap(stratum[i], stratum[j]);
        chosen.push_back(stratum[i]);
      }
    }
    std::sort(chosen.begin(), chosen.end());
    for (auto b : chosen) add_unit(b);
  }

  // Off-spine block unions.
  const auto union_size = std::min(config.union_size, blocks.size());
  for (std::size_t g = 0; g < config.block_unions && union_size > 0; ++g) {
    std::vector<std::size_t> pool(blocks.begin(), blocks.end());
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < union_size; ++i) {
      const auto j = i + static_cast<std::size_t>(stream.uniform_int(pool.size() - i));
      std::swap(pool[i], pool[j]);
      ids.push_back(hier.unit(pool[i]).id);
    }
    std::sort(ids.begin(), ids.end());
    const std::string geo = config.union_label + std::to_string(g + 1);
    for (const auto& [name, cells] : sets) {
      out.push_back({geo + "|" + name, universe, cells, ids, config.union_label});
    }
  }
  return out;
}

void write_workload(std::ostream& out, const std::vector<Query>& queries) {
  out << "query_id,universe,cells,geo_kind,geo_ids\n";
  for (const auto& q : queries) {
    out << q.id << ',' << to_string(q.universe) << ',';
    for (std::size_t i = 0; i < q.cells.size(); ++i) out << (i ? ";" : "") << q.cells[i];
    if (const auto* unit = std::get_if<std::string>(&q.geography)) {
      out << ",unit," << *unit << '\n';
    } else {
      out << ',' << q.geolevel << ',';
      const auto& ids = std::get<std::vector<std::string>>(q.geography);
      for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? ";" : "") << ids[i];
      out << '\n';
    }
  }
}

std::vector<Query> read_workload(std::istream& in, const GeoHierarchy& hierarchy) {
  std::vector<Query> out;
  std::set<std::string> seen;
  io::read_csv(in, "query_id,universe,cells,geo_kind,geo_ids", [&](auto f, std::size_t line) {
    Query q;
    q.id = std::string(f[0]);
    if (!seen.insert(q.id).second) throw DataError("line " + std::to_string(line) + ": duplicate query id");
    q.universe = universe_from_string(std::string(f[1]));
    for (auto c : io::split(f[2], ';')) q.cells.push_back(static_cast<std::uint32_t>(io::parse_uint(c)));
    std::sort(q.cells.begin(), q.cells.end());
    q.cells.erase(std::unique(q.cells.begin(), q.cells.end()), q.cells.end());
    if (f[3] == "unit") {
      const std::string unit(f[4]);
      q.geolevel = hierarchy.level_names()[hierarchy.unit(hierarchy.index_of(unit)).level];
      q.geography = unit;
    } else {
      q.geolevel = std::string(f[3]);
      std::vector<std::string> ids;
      for (auto id : io::split(f[4], ';')) ids.emplace_back(id);
      q.geography = std::move(ids);
    }
    resolve_units(q, hierarchy);
    out.push_back(std::move(q));
  });
  return out;
}

void write_tabulation(std::ostream& out, const Tabulation& t, std::span<const std::size_t> replicate_ids) {
  out << "query_id,replicate,value\n";
  for (std::size_t q = 0; q < t.query_ids.size(); ++q) {
    if (t.values[q].size() != replicate_ids.size()) throw InternalError("tabulation width mismatch");
    for (std::size_t r = 0; r < replicate_ids.size(); ++r) {
      out << t.query_ids[q] << ',' << replicate_ids[r] << ',' << t.values[q][r] << '\n';
    }
  }
}

Tabulation read_tabulation(std::istream& in, std::vector<std::size_t>* replicate_ids) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::map<std::size_t, Count>> rows;
  std::set<std::size_t> reps;
  io::read_csv(in, "query_id,replicate,value", [&](auto f, std::size_t line) {
    std::string id(f[0]);
    auto [it, inserted] = rows.try_emplace(id);
    if (inserted) order.push_back(id);
    const auto r = static_cast<std::size_t>(io::parse_uint(f[1]));
    if (!it->second.emplace(r, io::parse_int(f[2])).second) {
      throw DataError("line " + std::to_string(line) + ": duplicate (query, replicate)");
    }
    reps.insert(r);
  });
  Tabulation t;
  t.query_ids = order;
  for (const auto& id : order) {
    const auto& m = rows[id];
    if (m.size() != reps.size()) throw DataError("query '" + id + "' is missing replicates");
    std::vector<Count> v;
    v.reserve(m.size());
    for (const auto& [r, value] : m) v.push_back(value);
    t.values.push_back(std::move(v));
  }
  if (replicate_ids) replicate_ids->assign(reps.begin(), reps.end());
  return t;
}

}  // namespace tdamc
