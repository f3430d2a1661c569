#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace tdamc {

using Count = std::int64_t;
using CellVector = std::vector<Count>;

enum class Universe { person, household };

std::string to_string(Universe u);
Universe universe_from_string(const std::string& s);

struct Attribute {
  std::string name;
  std::uint32_t cardinality = 0;
};

/// Attribute schema of a fully saturated contingency table.
///
/// Cells are numbered row-major with the first attribute most significant.
class Schema {
 public:
  Schema(Universe universe, std::vector<Attribute> attributes);

  Universe universe() const noexcept { return universe_; }
  const std::vector<Attribute>& attributes() const noexcept { return attributes_; }
  std::size_t cell_count() const noexcept { return cell_count_; }

  std::size_t attribute_index(const std::string& name) const;
  std::vector<std::uint32_t> decode(std::size_t cell) const;
  std::size_t encode(std::span<const std::uint32_t> values) const;

  // Maps each detailed cell to its cell in the marginal over `attrs`
  // (attribute indices, any order; the marginal keeps schema order).
  std::vector<std::uint32_t> marginal_map(std::span<const std::size_t> attrs) const;
  std::size_t marginal_size(std::span<const std::size_t> attrs) const;

  std::string to_json() const;
  static Schema from_json(const std::string& text);

  bool operator==(const Schema& other) const;

 private:
  Universe universe_;
  std::vector<Attribute> attributes_;
  std::size_t cell_count_ = 1;
};

struct GeoUnit {
  std::string id;
  std::size_t level = 0;
  std::optional<std::size_t> parent;
  std::vector<std::size_t> children;  // sorted by id
  // Range of this unit's descendant blocks in GeoHierarchy::blocks().
  std::size_t block_begin = 0;
  std::size_t block_end = 0;
};

/// Rooted geographic tree. The last level is the block level.
class GeoHierarchy {
 public:
  struct UnitSpec {
    std::string id;
    std::string level;
    std::string parent;  // empty for the root
  };

  // Builds a regular tree: fanouts[i] children per unit at level i.
  static GeoHierarchy from_fanouts(std::vector<std::string> level_names,
                                   std::span<const std::uint32_t> fanouts);
  static GeoHierarchy from_units(std::vector<std::string> level_names,
                                 std::span<const UnitSpec> units);

  const std::vector<std::string>& level_names() const noexcept { return level_names_; }
  std::size_t depth() const noexcept { return level_names_.size(); }
  std::size_t block_level() const noexcept { return level_names_.size() - 1; }
  std::size_t level_index(const std::string& name) const;

  std::size_t size() const noexcept { return units_.size(); }
  const GeoUnit& unit(std::size_t index) const { return units_.at(index); }
  const std::vector<GeoUnit>& units() const noexcept { return units_; }
  std::size_t root() const noexcept { return 0; }

  // Throws LookupError for unknown ids.
  std::size_t index_of(const std::string& id) const;
  bool contains(const std::string& id) const;

  // Unit indices at a level, in id order.
  const std::vector<std::size_t>& units_at_level(std::size_t level) const {
    return by_level_.at(level);
  }
  // Block unit indices in depth-first (and therefore id) order.
  const std::vector<std::size_t>& blocks() const noexcept { return blocks_; }
  std::size_t block_count() const noexcept { return blocks_.size(); }
  // Position of a block unit within blocks(); throws for non-blocks.
  std::size_t block_ordinal(std::size_t unit_index) const;

  std::vector<UnitSpec> to_specs() const;
  void write_csv(std::ostream& out) const;
  static GeoHierarchy read_csv(std::istream& in);

  bool operator==(const GeoHierarchy& other) const;

 private:
  GeoHierarchy() = default;
  void finalize();

  std::vector<std::string> level_names_;
  std::vector<GeoUnit> units_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> by_level_;
  std::vector<std::size_t> blocks_;
  std::vector<std::size_t> block_ordinal_;
};

/// Block-by-cell table of non-negative integer counts, stored sparsely.
///
/// Counts at internal geounits are never stored; aggregate() derives them
/// from the descendant blocks.
class Histogram {
 public:
  using Entry = std::pair<std::uint32_t, Count>;  // (cell, count), count > 0

  Histogram(std::shared_ptr<const Schema> schema,
            std::shared_ptr<const GeoHierarchy> hierarchy);

  // rows[b] is the dense cell vector of the b-th block (blocks() order).
  static Histogram from_dense(std::shared_ptr<const Schema> schema,
                              std::shared_ptr<const GeoHierarchy> hierarchy,
                              const std::vector<CellVector>& rows);

  const Schema& schema() const noexcept { return *schema_; }
  const GeoHierarchy& hierarchy() const noexcept { return *hierarchy_; }
  const std::shared_ptr<const Schema>& schema_ptr() const noexcept { return schema_; }
  const std::shared_ptr<const GeoHierarchy>& hierarchy_ptr() const noexcept {
    return hierarchy_;
  }

  Count count(std::size_t block_ordinal, std::size_t cell) const;
  const std::vector<Entry>& block_entries(std::size_t block_ordinal) const {
    return rows_.at(block_ordinal);
  }
  CellVector block_vector(std::size_t block_ordinal) const;

  CellVector aggregate(std::size_t unit_index) const;
  CellVector aggregate(const std::string& unit_id) const;
  // Dense vectors for every unit, indexed like hierarchy().units().
  std::vector<CellVector> aggregate_all() const;

  Count total() const;

  // CSV `block_id,cell_index,count`; zero counts are omitted.
  void write_csv(std::ostream& out) const;
  static Histogram read_csv(std::istream& in, std::shared_ptr<const Schema> schema,
                            std::shared_ptr<const GeoHierarchy> hierarchy);

  bool operator==(const Histogram& other) const;

 private:
  std::shared_ptr<const Schema> schema_;
  std::shared_ptr<const GeoHierarchy> hierarchy_;
  std::vector<std::vector<Entry>> rows_;
};

/// Count-generating distribution for the synthetic confidential table.
///
/// Each block cell is zero with probability `zero_inflation`; otherwise it is
/// a small count 1 + Geometric(mean small_mean - 1) with probability
/// 1 - large_share, or a heavy-tailed discrete Pareto count
/// floor(large_min * U^(-1/large_alpha)) with probability large_share.
struct SynthConfig {
  std::shared_ptr<const Schema> schema;
  std::vector<std::string> level_names{"root", "state", "county", "block"};
  std::vector<std::uint32_t> fanouts{4, 4, 8};
  double zero_inflation = 0.6;
  double small_mean = 3.0;
  double large_share = 0.05;
  double large_min = 20.0;
  double large_alpha = 1.5;
  Count max_count = 100000;
};

Histogram synth_cef(const SynthConfig& config, std::uint64_t seed);

}  // namespace tdamc
