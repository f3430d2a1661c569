#include "tdamc/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <tuple>

#include <json.hpp>

#include "tdamc/errors.hpp"
#include "tdamc/io.hpp"
#include "tdamc/rng.hpp"

namespace tdamc {

std::string to_string(Universe u) { return u == Universe::person ? "person" : "household"; }

Universe universe_from_string(const std::string& s) {
  if (s == "person") return Universe::person;
  if (s == "household") return Universe::household;
  throw SchemaError("unknown universe '" + s + "'");
}

// ---------------------------------------------------------------- Schema

Schema::Schema(Universe universe, std::vector<Attribute> attributes)
    : universe_(universe), attributes_(std::move(attributes)) {
  if (attributes_.empty()) throw SchemaError("schema needs at least one attribute");
  std::set<std::string> names;
  for (const auto& a : attributes_) {
    if (a.name.empty()) throw SchemaError("attribute name must be non-empty");
    if (a.cardinality < 2) {
      throw SchemaError("attribute '" + a.name + "' has cardinality " +
                        std::to_string(a.cardinality) + " (< 2)");
    }
    if (!names.insert(a.name).second) throw SchemaError("duplicate attribute '" + a.name + "'");
    cell_count_ *= a.cardinality;
  }
}

std::size_t Schema::attribute_index(const std::string& name) const {
  for (std::size_t i = 0; i < attributes_.size(); ++i) {
    if (attributes_[i].name == name) return i;
  }
  throw SchemaError("unknown attribute '" + name + "'");
}

std::vector<std::uint32_t> Schema::decode(std::size_t cell) const {
  if (cell >= cell_count_) throw SchemaError("cell index out of range");
  std::vector<std::uint32_t> values(attributes_.size());
  for (std::size_t i = attributes_.size(); i-- > 0;) {
    values[i] = static_cast<std::uint32_t>(cell % attributes_[i].cardinality);
    cell /= attributes_[i].cardinality;
  }
  return values;
}

std::size_t Schema::encode(std::span<const std::uint32_t> values) const {
  if (values.size() != attributes_.size()) throw SchemaError("wrong number of attribute values");
  std::size_t cell = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] >= attributes_[i].cardinality) throw SchemaError("attribute value out of range");
    cell = cell * attributes_[i].cardinality + values[i];
  }
  return cell;
}

std::vector<std::uint32_t> Schema::marginal_map(std::span<const std::size_t> attrs) const {
  std::vector<std::size_t> sorted(attrs.begin(), attrs.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw SchemaError("marginal repeats an attribute");
  }
  for (auto a : sorted) {
    if (a >= attributes_.size()) throw SchemaError("marginal attribute out of range");
  }
  std::vector<std::uint32_t> map(cell_count_);
  for (std::size_t cell = 0; cell < cell_count_; ++cell) {
    const auto values = decode(cell);
    std::uint32_t m = 0;
    for (auto a : sorted) m = m * attributes_[a].cardinality + values[a];
    map[cell] = m;
  }
  return map;
}

std::size_t Schema::marginal_size(std::span<const std::size_t> attrs) const {
  std::size_t n = 1;
  for (auto a : attrs) n *= attributes_.at(a).cardinality;
  return n;
}

std::string Schema::to_json() const {
  nlohmann::ordered_json j;
  j["universe"] = to_string(universe_);
  j["attributes"] = nlohmann::ordered_json::array();
  for (const auto& a : attributes_) {
    j["attributes"].push_back({{"name", a.name}, {"cardinality", a.cardinality}});
  }
  return j.dump(2) + "\n";
}

Schema Schema::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    std::vector<Attribute> attrs;
    for (const auto& a : j.at("attributes")) {
      const auto card = a.at("cardinality").get<std::int64_t>();
      if (card < 0) throw SchemaError("negative cardinality");
      attrs.push_back({a.at("name").get<std::string>(), static_cast<std::uint32_t>(card)});
    }
    return Schema(universe_from_string(j.at("universe").get<std::string>()), std::move(attrs));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad schema JSON: ") + e.what());
  }
}

bool Schema::operator==(const Schema& other) const {
  if (universe_ != other.universe_ || attributes_.size() != other.attributes_.size()) return false;
  for (std::size_t i = 0; i < attributes_.size(); ++i) {
    if (attributes_[i].name != other.attributes_[i].name ||
        attributes_[i].cardinality != other.attributes_[i].cardinality) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- GeoHierarchy

namespace {

std::string pad_index(std::size_t i, std::size_t n) {
  std::string s = std::to_string(i);
  const auto width = std::to_string(n).size();
  return std::string(width - std::min(width, s.size()), '0') + s;
}

}  // namespace

GeoHierarchy GeoHierarchy::from_fanouts(std::vector<std::string> level_names,
                                        std::span<const std::uint32_t> fanouts) {
  if (level_names.size() != fanouts.size() + 1) {
    throw ConfigError("need exactly one more level name than fan-outs");
  }
  for (auto f : fanouts) {
    if (f == 0) throw ConfigError("fan-outs must be positive");
  }
  std::vector<UnitSpec> specs;
  specs.push_back({level_names[0], level_names[0], ""});
  std::vector<std::string> frontier{level_names[0]};
  for (std::size_t l = 0; l < fanouts.size(); ++l) {
    std::vector<std::string> next;
    const char prefix = level_names[l + 1].empty() ? 'u' : level_names[l + 1][0];
    for (const auto& parent : frontier) {
      for (std::uint32_t c = 1; c <= fanouts[l]; ++c) {
        const std::string base = l == 0 ? std::string{} : parent;
        std::string id = base + prefix + pad_index(c, fanouts[l]);
        specs.push_back({id, level_names[l + 1], parent});
        next.push_back(std::move(id));
      }
    }
    frontier = std::move(next);
  }
  return from_units(std::move(level_names), specs);
}

GeoHierarchy GeoHierarchy::from_units(std::vector<std::string> level_names,
                                      std::span<const UnitSpec> units) {
  if (level_names.empty()) throw ConfigError("hierarchy needs at least one level");
  {
    std::set<std::string> seen(level_names.begin(), level_names.end());
    if (seen.size() != level_names.size()) throw ConfigError("duplicate level names");
  }
  GeoHierarchy h;
  h.level_names_ = std::move(level_names);

  std::vector<UnitSpec> sorted(units.begin(), units.end());
  std::vector<std::size_t> levels(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) levels[i] = h.level_index(sorted[i].level);
  std::vector<std::size_t> order(sorted.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(levels[a], sorted[a].id) < std::tie(levels[b], sorted[b].id);
  });

  std::size_t roots = 0;
  for (auto i : order) {
    const auto& spec = sorted[i];
    if (spec.id.empty()) throw ConfigError("empty unit id");
    if (!h.index_.emplace(spec.id, h.units_.size()).second) {
      throw ConfigError("duplicate unit id '" + spec.id + "'");
    }
    GeoUnit u;
    u.id = spec.id;
    u.level = levels[i];
    if (spec.parent.empty()) {
      if (u.level != 0) throw ConfigError("unit '" + spec.id + "' has no parent but is not at the root level");
      ++roots;
    } else {
      const auto it = h.index_.find(spec.parent);
      if (it == h.index_.end()) {
        throw ConfigError("unit '" + spec.id + "' has unknown parent '" + spec.parent + "'");
      }
      if (h.units_[it->second].level + 1 != u.level) {
        throw ConfigError("unit '" + spec.id + "' is not one level below its parent");
      }
      u.parent = it->second;
    }
    h.units_.push_back(std::move(u));
  }
  if (roots != 1) throw ConfigError("hierarchy must have exactly one root, found " + std::to_string(roots));
  h.finalize();
  return h;
}

void GeoHierarchy::finalize() {
  by_level_.assign(level_names_.size(), {});
  for (std::size_t i = 0; i < units_.size(); ++i) {
    by_level_[units_[i].level].push_back(i);
    if (units_[i].parent) units_[*units_[i].parent].children.push_back(i);
  }
  // Units are sorted by (level, id), so children lists are already id-sorted.
  for (const auto& u : units_) {
    if (u.level == block_level() && !u.children.empty()) {
      throw ConfigError("block '" + u.id + "' has children");
    }
    if (u.level != block_level() && u.children.empty()) {
      throw ConfigError("leaf '" + u.id + "' is not at the block level");
    }
  }
  blocks_.clear();
  block_ordinal_.assign(units_.size(), static_cast<std::size_t>(-1));
  std::function<void(std::size_t)> visit = [&](std::size_t i) {
    auto& u = units_[i];
    u.block_begin = blocks_.size();
    if (u.children.empty()) {
      block_ordinal_[i] = blocks_.size();
      blocks_.push_back(i);
    }
    for (auto c : u.children) visit(c);
    units_[i].block_end = blocks_.size();
  };
  visit(0);
}

std::size_t GeoHierarchy::level_index(const std::string& name) const {
  for (std::size_t i = 0; i < level_names_.size(); ++i) {
    if (level_names_[i] == name) return i;
  }
  throw LookupError("unknown level '" + name + "'");
}

std::size_t GeoHierarchy::index_of(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw LookupError("unknown geounit '" + id + "'");
  return it->second;
}

bool GeoHierarchy::contains(const std::string& id) const { return index_.count(id) != 0; }

std::size_t GeoHierarchy::block_ordinal(std::size_t unit_index) const {
  const auto ord = block_ordinal_.at(unit_index);
  if (ord == static_cast<std::size_t>(-1)) {
    throw LookupError("geounit '" + units_[unit_index].id + "' is not a block");
  }
  return ord;
}

std::vector<GeoHierarchy::UnitSpec> GeoHierarchy::to_specs() const {
  std::vector<UnitSpec> specs;
  specs.reserve(units_.size());
  for (const auto& u : units_) {
    specs.push_back({u.id, level_names_[u.level], u.parent ? units_[*u.parent].id : std::string{}});
  }
  return specs;
}

void GeoHierarchy::write_csv(std::ostream& out) const {
  out << "unit_id,level,parent_id\n";
  for (const auto& s : to_specs()) out << s.id << ',' << s.level << ',' << s.parent << '\n';
}

GeoHierarchy GeoHierarchy::read_csv(std::istream& in) {
  std::vector<UnitSpec> specs;
  std::vector<std::string> levels;
  io::read_csv(in, "unit_id,level,parent_id", [&](auto fields, std::size_t) {
    specs.push_back({std::string(fields[0]), std::string(fields[1]), std::string(fields[2])});
  });
  // Level order is recovered from the parent chain: the root's level first.
  std::unordered_map<std::string, const UnitSpec*> by_id;
  for (const auto& s : specs) by_id[s.id] = &s;
  std::unordered_map<std::string, std::size_t> depth_of_level;
  for (const auto& s : specs) {
    std::size_t d = 0;
    const UnitSpec* cur = &s;
    while (!cur->parent.empty()) {
      const auto it = by_id.find(cur->parent);
      if (it == by_id.end()) throw ConfigError("unit '" + cur->id + "' has unknown parent '" + cur->parent + "'");
      cur = it->second;
      if (++d > specs.size()) throw ConfigError("cycle in hierarchy");
    }
    const auto [it, inserted] = depth_of_level.emplace(s.level, d);
    if (!inserted && it->second != d) throw ConfigError("level '" + s.level + "' appears at two depths");
  }
  levels.resize(depth_of_level.size());
  for (const auto& [name, d] : depth_of_level) {
    if (d >= levels.size()) throw ConfigError("hierarchy levels are not contiguous");
    levels[d] = name;
  }
  return from_units(std::move(levels), specs);
}

bool GeoHierarchy::operator==(const GeoHierarchy& other) const {
  if (level_names_ != other.level_names_ || units_.size() != other.units_.size()) return false;
  const auto a = to_specs();
  const auto b = other.to_specs();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].id != b[i].id || a[i].level != b[i].level || a[i].parent != b[i].parent) return false;
  }
  return true;
}

// ---------------------------------------------------------------- Histogram

Histogram::Histogram(std::shared_ptr<const Schema> schema,
                     std::shared_ptr<const GeoHierarchy> hierarchy)
    : schema_(std::move(schema)), hierarchy_(std::move(hierarchy)) {
  if (!schema_ || !hierarchy_) throw InternalError("histogram needs a schema and a hierarchy");
  rows_.resize(hierarchy_->block_count());
}

Histogram Histogram::from_dense(std::shared_ptr<const Schema> schema,
                                std::shared_ptr<const GeoHierarchy> hierarchy,
                                const std::vector<CellVector>& rows) {
  Histogram h(std::move(schema), std::move(hierarchy));
  if (rows.size() != h.rows_.size()) throw DataError("dense histogram has wrong number of blocks");
  const auto cells = h.schema_->cell_count();
  for (std::size_t b = 0; b < rows.size(); ++b) {
    if (rows[b].size() != cells) throw DataError("dense histogram row has wrong number of cells");
    for (std::size_t c = 0; c < cells; ++c) {
      if (rows[b][c] < 0) throw DataError("negative count");
      if (rows[b][c] > 0) h.rows_[b].emplace_back(static_cast<std::uint32_t>(c), rows[b][c]);
    }
  }
  return h;
}

Count Histogram::count(std::size_t block_ordinal, std::size_t cell) const {
  const auto& row = rows_.at(block_ordinal);
  const auto it = std::lower_bound(row.begin(), row.end(), cell,
                                   [](const Entry& e, std::size_t c) { return e.first < c; });
  return it != row.end() && it->first == cell ? it->second : 0;
}

CellVector Histogram::block_vector(std::size_t block_ordinal) const {
  CellVector v(schema_->cell_count(), 0);
  for (const auto& [cell, n] : rows_.at(block_ordinal)) v[cell] = n;
  return v;
}

CellVector Histogram::aggregate(std::size_t unit_index) const {
  const auto& u = hierarchy_->unit(unit_index);
  CellVector v(schema_->cell_count(), 0);
  for (std::size_t b = u.block_begin; b < u.block_end; ++b) {
    for (const auto& [cell, n] : rows_[b]) v[cell] += n;
  }
  return v;
}

CellVector Histogram::aggregate(const std::string& unit_id) const {
  return aggregate(hierarchy_->index_of(unit_id));
}

std::vector<CellVector> Histogram::aggregate_all() const {
  const auto& h = *hierarchy_;
  std::vector<CellVector> out(h.size(), CellVector(schema_->cell_count(), 0));
  for (std::size_t i = h.size(); i-- > 0;) {
    const auto& u = h.unit(i);
    if (u.children.empty()) {
      for (const auto& [cell, n] : rows_[h.block_ordinal(i)]) out[i][cell] = n;
    } else {
      for (auto c : u.children) {
        for (std::size_t k = 0; k < out[i].size(); ++k) out[i][k] += out[c][k];
      }
    }
  }
  return out;
}

Count Histogram::total() const {
  Count t = 0;
  for (const auto& row : rows_) {
    for (const auto& e : row) t += e.second;
  }
  return t;
}

void Histogram::write_csv(std::ostream& out) const {
  out << "block_id,cell_index,count\n";
  const auto& blocks = hierarchy_->blocks();
  for (std::size_t b = 0; b < rows_.size(); ++b) {
    const auto& id = hierarchy_->unit(blocks[b]).id;
    for (const auto& [cell, n] : rows_[b]) out << id << ',' << cell << ',' << n << '\n';
  }
}

Histogram Histogram::read_csv(std::istream& in, std::shared_ptr<const Schema> schema,
                              std::shared_ptr<const GeoHierarchy> hierarchy) {
  Histogram h(std::move(schema), std::move(hierarchy));
  const auto cells = h.schema_->cell_count();
  io::read_csv(in, "block_id,cell_index,count", [&](auto fields, std::size_t line) {
    const auto unit = h.hierarchy_->index_of(std::string(fields[0]));
    const auto b = h.hierarchy_->block_ordinal(unit);
    const auto cell = io::parse_uint(fields[1]);
    const auto n = io::parse_int(fields[2]);
    if (cell >= cells) throw DataError("line " + std::to_string(line) + ": cell index out of range");
    if (n < 0) throw DataError("line " + std::to_string(line) + ": negative count");
    if (n > 0) h.rows_[b].emplace_back(static_cast<std::uint32_t>(cell), n);
  });
  for (auto& row : h.rows_) {
    std::sort(row.begin(), row.end());
    for (std::size_t i = 1; i < row.size(); ++i) {
      if (row[i].first == row[i - 1].first) throw DataError("duplicate (block, cell) entry");
    }
  }
  return h;
}

bool Histogram::operator==(const Histogram& other) const {
  return *schema_ == *other.schema_ && *hierarchy_ == *other.hierarchy_ && rows_ == other.rows_;
}

// ---------------------------------------------------------------- synth_cef

Histogram synth_cef(const SynthConfig& config, std::uint64_t seed) {
  if (!config.schema) throw ConfigError("synthetic config needs a schema");
  if (config.zero_inflation < 0 || config.zero_inflation > 1) {
    throw ConfigError("zero_inflation must lie in [0, 1]");
  }
  if (config.large_share < 0 || config.large_share > 1) throw ConfigError("large_share must lie in [0, 1]");
  if (config.small_mean < 1) throw ConfigError("small_mean must be at least 1");
  if (config.large_min < 1 || config.large_alpha <= 0) throw ConfigError("bad heavy-tail parameters");

  auto hierarchy = std::make_shared<const GeoHierarchy>(
      GeoHierarchy::from_fanouts(config.level_names, config.fanouts));
  const auto cells = config.schema->cell_count();
  SeedStream stream = SeedStream(seed).derive("cef");

  const double geo_p = 1.0 / config.small_mean;  // success probability of 1 + Geometric
  std::vector<CellVector> rows(hierarchy->block_count(), CellVector(cells, 0));
  for (auto& row : rows) {
    for (auto& n : row) {
      if (stream.uniform() < config.zero_inflation) continue;
      const double u = 1.0 - stream.uniform();  // (0, 1]
      if (stream.uniform() < config.large_share) {
        const double v = std::floor(config.large_min * std::pow(u, -1.0 / config.large_alpha));
        n = std::min<Count>(config.max_count, static_cast<Count>(v));
      } else if (geo_p >= 1.0) {
        n = 1;
      } else {
        n = 1 + static_cast<Count>(std::floor(std::log(u) / std::log1p(-geo_p)));
        n = std::min<Count>(config.max_count, n);
      }
    }
  }
  return Histogram::from_dense(config.schema, std::move(hierarchy), rows);
}

}  // namespace tdamc
