#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tdamc/model.hpp"

namespace tdamc {

/// A univariate count query: the number of records in `cells` summed over a
/// geography that is either a geounit on the hierarchy or an explicit block union.
struct Query {
  std::string id;
  Universe universe = Universe::person;
  std::vector<std::uint32_t> cells;  // sorted, unique
  std::variant<std::string, std::vector<std::string>> geography;
  // Evaluation label: the unit's level name, or the label of a block union.
  std::string geolevel;
};

enum class SizeGroup : std::uint8_t { g0, g1_4, g5_10, g11_24, g25_99, g100_499, g500_999, g1000p };

inline constexpr std::array<SizeGroup, 8> kSizeGroups{
    SizeGroup::g0,     SizeGroup::g1_4,     SizeGroup::g5_10,    SizeGroup::g11_24,
    SizeGroup::g25_99, SizeGroup::g100_499, SizeGroup::g500_999, SizeGroup::g1000p};

SizeGroup size_group(Count cef_value);
std::string_view label(SizeGroup g);
SizeGroup size_group_from_label(std::string_view label);

// Throws QueryError on universe mismatch and LookupError for unknown geographies.
Count evaluate(const Query& q, const Histogram& h);

/// Queries resolved against one hierarchy, for tabulating many histograms.
class Tabulator {
 public:
  Tabulator(const GeoHierarchy& hierarchy, Universe universe, std::vector<Query> queries);

  const std::vector<Query>& queries() const noexcept { return queries_; }
  std::vector<Count> tabulate(const Histogram& h) const;

 private:
  struct Resolved {
    std::vector<std::size_t> units;  // geounit indices summed over
  };
  Universe universe_;
  std::vector<Query> queries_;
  std::vector<Resolved> resolved_;
};

struct WorkloadConfig {
  // Marginal orders to include (0 = total).
  std::size_t max_order = 2;
  bool include_total = true;
  // Blocks enter the workload through a sample stratified by CEF total
  // population; 0 blocks per stratum means every block.
  std::vector<Count> strata_edges{1, 10, 30};  // lower edges of strata 2..; stratum 1 is < edges[0]
  std::size_t blocks_per_stratum = 10;
  // Off-spine geographies: random block unions labelled `union_label`.
  std::size_t block_unions = 8;
  std::size_t union_size = 6;
  std::string union_label = "aian-analogue";
};

// All marginal level-sets of order <= max_order for every non-block unit,
// the stratified block sample and the block unions.
std::vector<Query> make_workload(const Histogram& cef, const WorkloadConfig& config, std::uint64_t seed);

// Every marginal level-set (attribute subset, value tuple) up to max_order as
// (name suffix, cell set) pairs.
std::vector<std::pair<std::string, std::vector<std::uint32_t>>> marginal_level_sets(const Schema& schema,
                                                                                    std::size_t max_order,
                                                                                    bool include_total);

// CSV `query_id,universe,cells,geo_kind,geo_ids`; geo_kind is "unit" or the block-union label.
void write_workload(std::ostream& out, const std::vector<Query>& queries);
std::vector<Query> read_workload(std::istream& in, const GeoHierarchy& hierarchy);

/// Replicate-indexed query values: values[q][r].
struct Tabulation {
  std::vector<std::string> query_ids;
  std::vector<std::vector<Count>> values;
};

// CSV `query_id,replicate,value`, replicate-major within each query.
void write_tabulation(std::ostream& out, const Tabulation& t, std::span<const std::size_t> replicate_ids);
// Reads a tabulation; columns are ordered by replicate id ascending.
Tabulation read_tabulation(std::istream& in, std::vector<std::size_t>* replicate_ids = nullptr);

}  // namespace tdamc
