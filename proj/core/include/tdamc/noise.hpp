#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "tdamc/model.hpp"
#include "tdamc/rng.hpp"

namespace tdamc {

/// A measured marginal. An empty attribute list is the total; the full list
/// is the detailed query.
struct QueryGroup {
  std::string name;
  std::vector<std::string> marginal;
};

// Query groups measured at each level, indexed by hierarchy level.
using Strategy = std::vector<std::vector<QueryGroup>>;

// Total, every one-way marginal and the detailed query at every level.
Strategy default_strategy(const Schema& schema, const GeoHierarchy& hierarchy);

/// zCDP-style privacy-loss budget split across geolevels and query groups.
class BudgetAllocation {
 public:
  BudgetAllocation() = default;
  BudgetAllocation(double total_rho, std::map<std::string, double> level_shares,
                   std::map<std::string, std::map<std::string, double>> group_shares);

  // Uniform group shares within each level.
  static BudgetAllocation uniform_groups(double total_rho,
                                         std::map<std::string, double> level_shares,
                                         const GeoHierarchy& hierarchy, const Strategy& strategy);

  double total_rho() const noexcept { return total_rho_; }
  const std::map<std::string, double>& level_shares() const noexcept { return level_shares_; }
  const std::map<std::string, std::map<std::string, double>>& group_shares() const noexcept {
    return group_shares_;
  }

  // Throws ConfigError unless every (level, group) pair of the strategy is covered.
  void validate(const GeoHierarchy& hierarchy, const Strategy& strategy) const;

  double rho(const std::string& level, const std::string& group) const;
  // Per-coordinate noise variance 1 / (2 rho); infinite when rho is zero.
  double variance(const std::string& level, const std::string& group) const;

 private:
  double total_rho_ = 0;
  std::map<std::string, double> level_shares_;
  std::map<std::string, std::map<std::string, double>> group_shares_;
};

struct NoisyMeasurement {
  std::string unit;
  std::size_t level = 0;
  std::string group;
  std::vector<double> answers;  // one per marginal cell
  double variance = 0;
};

/// Exact sampler for the discrete Gaussian N_Z(0, sigma2) by rejection from a
/// discrete Laplace proposal. Throws ParameterError for sigma2 <= 0.
std::int64_t sample_discrete_gaussian(double sigma2, SeedStream& stream);

/// Noisy answers for every unit at every level and every group measured
/// there. The noise for (unit, group) comes from stream.derive(unit).derive(group).
/// Groups with zero allocated budget are not measured.
std::vector<NoisyMeasurement> take_measurements(const Histogram& h, const BudgetAllocation& alloc,
                                                const Strategy& strategy, const SeedStream& stream);

// CSV `replicate,level,unit_id,group,cell_index,noisy_value,variance`.
void write_nmf(std::ostream& out, std::size_t replicate, const GeoHierarchy& hierarchy,
               const std::vector<NoisyMeasurement>& measurements, bool header = true);

// Attribute indices of a group's marginal; throws SchemaError for unknown names.
std::vector<std::size_t> marginal_attributes(const Schema& schema, const QueryGroup& group);

}  // namespace tdamc
