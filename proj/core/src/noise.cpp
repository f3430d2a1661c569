#include "tdamc/noise.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "tdamc/errors.hpp"
#include "tdamc/io.hpp"

namespace tdamc {

namespace {

constexpr double kShareTolerance = 1e-12;

void check_shares(const std::map<std::string, double>& shares, const std::string& what) {
  double sum = 0;
  for (const auto& [name, f] : shares) {
    if (!(f >= 0) || !std::isfinite(f)) throw ConfigError(what + " share for '" + name + "' must be >= 0");
    sum += f;
  }
  if (std::abs(sum - 1.0) > kShareTolerance) {
    throw ConfigError(what + " shares sum to " + io::format_double(sum) + ", not 1");
  }
}

}  // namespace

Strategy default_strategy(const Schema& schema, const GeoHierarchy& hierarchy) {
  std::vector<QueryGroup> groups;
  groups.push_back({"total", {}});
  std::vector<std::string> all;
  for (const auto& a : schema.attributes()) {
    groups.push_back({a.name, {a.name}});
    all.push_back(a.name);
  }
  if (all.size() > 1) groups.push_back({"detailed", all});
  return Strategy(hierarchy.depth(), groups);
}

BudgetAllocation::BudgetAllocation(double total_rho, std::map<std::string, double> level_shares,
                                   std::map<std::string, std::map<std::string, double>> group_shares)
    : total_rho_(total_rho),
      level_shares_(std::move(level_shares)),
      group_shares_(std::move(group_shares)) {
  if (!(total_rho_ > 0)) throw ConfigError("total_rho must be positive");
  check_shares(level_shares_, "level");
  for (const auto& [level, shares] : group_shares_) check_shares(shares, "group (" + level + ")");
}

BudgetAllocation BudgetAllocation::uniform_groups(double total_rho,
                                                  std::map<std::string, double> level_shares,
                                                  const GeoHierarchy& hierarchy,
                                                  const Strategy& strategy) {
  if (strategy.size() != hierarchy.depth()) throw ConfigError("strategy must list groups for every level");
  std::map<std::string, std::map<std::string, double>> groups;
  for (std::size_t l = 0; l < hierarchy.depth(); ++l) {
    auto& m = groups[hierarchy.level_names()[l]];
    for (const auto& g : strategy[l]) m[g.name] = 1.0 / static_cast<double>(strategy[l].size());
  }
  return BudgetAllocation(total_rho, std::move(level_shares), std::move(groups));
}

void BudgetAllocation::validate(const GeoHierarchy& hierarchy, const Strategy& strategy) const {
  if (strategy.size() != hierarchy.depth()) throw ConfigError("strategy must list groups for every level");
  for (std::size_t l = 0; l < hierarchy.depth(); ++l) {
    const auto& level = hierarchy.level_names()[l];
    if (!level_shares_.count(level)) throw ConfigError("no budget share for level '" + level + "'");
    const auto it = group_shares_.find(level);
    if (it == group_shares_.end()) throw ConfigError("no group shares for level '" + level + "'");
    for (const auto& g : strategy[l]) {
      if (!it->second.count(g.name)) {
        throw ConfigError("no budget share for group '" + g.name + "' at level '" + level + "'");
      }
    }
  }
}

double BudgetAllocation::rho(const std::string& level, const std::string& group) const {
  const auto l = level_shares_.find(level);
  const auto g = group_shares_.find(level);
  if (l == level_shares_.end() || g == group_shares_.end()) {
    throw ConfigError("no budget for level '" + level + "'");
  }
  const auto gg = g->second.find(group);
  if (gg == g->second.end()) throw ConfigError("no budget for group '" + group + "' at '" + level + "'");
  return total_rho_ * l->second * gg->second;
}

double BudgetAllocation::variance(const std::string& level, const std::string& group) const {
  const double r = rho(level, group);
  return r > 0 ? 1.0 / (2.0 * r) : std::numeric_limits<double>::infinity();
}

std::int64_t sample_discrete_gaussian(double sigma2, SeedStream& stream) {
  if (!(sigma2 > 0) || !std::isfinite(sigma2)) throw ParameterError("sigma2 must be positive and finite");
  const double sigma = std::sqrt(sigma2);
  const auto t = static_cast<std::uint64_t>(std::floor(sigma)) + 1;
  const double td = static_cast<double>(t);
  const double exp_minus_one = std::exp(-1.0);
  while (true) {
    // Discrete Laplace with scale t: U + t*V with U uniform on [0, t) accepted
    // with probability exp(-U/t) and V geometric with ratio e^-1.
    const auto u = stream.uniform_int(t);
    if (!stream.bernoulli(std::exp(-static_cast<double>(u) / td))) continue;
    std::uint64_t v = 0;
    while (stream.bernoulli(exp_minus_one)) ++v;
    const auto magnitude = static_cast<std::int64_t>(u + t * v);
    const bool negative = stream.bernoulli(0.5);
    if (negative && magnitude == 0) continue;
    const std::int64_t y = negative ? -magnitude : magnitude;
    const double d = std::abs(static_cast<double>(y)) - sigma2 / td;
    if (stream.bernoulli(std::exp(-d * d / (2.0 * sigma2)))) return y;
  }
}

std::vector<std::size_t> marginal_attributes(const Schema& schema, const QueryGroup& group) {
  std::vector<std::size_t> attrs;
  for (const auto& name : group.marginal) attrs.push_back(schema.attribute_index(name));
  return attrs;
}

std::vector<NoisyMeasurement> take_measurements(const Histogram& h, const BudgetAllocation& alloc,
                                                const Strategy& strategy, const SeedStream& stream) {
  const auto& hier = h.hierarchy();
  const auto& schema = h.schema();
  alloc.validate(hier, strategy);

  std::vector<std::vector<std::vector<std::uint32_t>>> maps(strategy.size());
  for (std::size_t l = 0; l < strategy.size(); ++l) {
    for (const auto& g : strategy[l]) {
      const auto attrs = marginal_attributes(schema, g);
      maps[l].push_back(schema.marginal_map(attrs));
    }
  }

  const auto aggregates = h.aggregate_all();
  std::vector<NoisyMeasurement> out;
  for (std::size_t l = 0; l < strategy.size(); ++l) {
    const auto& level = hier.level_names()[l];
    for (auto unit : hier.units_at_level(l)) {
      const auto& id = hier.unit(unit).id;
      const SeedStream unit_stream = stream.derive(id);
      for (std::size_t gi = 0; gi < strategy[l].size(); ++gi) {
        const auto& group = strategy[l][gi];
        const double var = alloc.variance(level, group.name);
        if (!std::isfinite(var)) continue;
        const auto& map = maps[l][gi];
        std::size_t msize = 0;
        for (auto m : map) msize = std::max<std::size_t>(msize, m + 1);
        NoisyMeasurement nm{id, l, group.name, std::vector<double>(msize, 0.0), var};
        for (std::size_t c = 0; c < map.size(); ++c) nm.answers[map[c]] += static_cast<double>(aggregates[unit][c]);
        SeedStream noise = unit_stream.derive(group.name);
        for (auto& a : nm.answers) a += static_cast<double>(sample_discrete_gaussian(var, noise));
        out.push_back(std::move(nm));
      }
    }
  }
  return out;
}

void write_nmf(std::ostream& out, std::size_t replicate, const GeoHierarchy& hierarchy,
               const std::vector<NoisyMeasurement>& measurements, bool header) {
  if (header) out << "replicate,level,unit_id,group,cell_index,noisy_value,variance\n";
  for (const auto& m : measurements) {
    const auto& level = hierarchy.level_names().at(m.level);
    for (std::size_t i = 0; i < m.answers.size(); ++i) {
      out << replicate << ',' << level << ',' << m.unit << ',' << m.group << ',' << i << ','
          << io::format_double(m.answers[i]) << ',' << io::format_double(m.variance) << '\n';
    }
  }
}

}  // namespace tdamc
