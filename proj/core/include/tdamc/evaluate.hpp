#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tdamc/intervals.hpp"
#include "tdamc/query.hpp"

namespace tdamc {

struct QueryInfo {
  std::string geolevel;
  Count cef = 0;
  SizeGroup size_group = SizeGroup::g0;
};

/// Per-query grouping keys joined from the workload and the CEF tabulation.
class QueryTable {
 public:
  QueryTable() = default;
  // Throws DataError when a workload query has no single CEF value.
  QueryTable(const std::vector<Query>& workload, const Tabulation& cef);

  void add(const std::string& query_id, std::string geolevel, Count cef);
  // Throws DataError for unknown ids.
  const QueryInfo& at(const std::string& query_id) const;
  // Geolevels in order of first appearance.
  const std::vector<std::string>& geolevels() const noexcept { return geolevels_; }
  std::size_t size() const noexcept { return info_.size(); }

 private:
  std::vector<std::string> geolevels_;
  std::unordered_map<std::string, QueryInfo> info_;
};

struct CoverageRow {
  std::string geolevel;
  SizeGroup size_group = SizeGroup::g0;
  CiType ci_type = CiType::z;
  std::size_t n_queries = 0;
  double proportion_containing_cef = 0;
  double group_share = 0;
};

struct WidthRow {
  std::string geolevel;
  SizeGroup size_group = SizeGroup::g0;
  CiType ci_type = CiType::z;
  std::size_t n = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
};

struct MomentComparisonRow {
  std::string query_id;
  std::string geolevel;
  SizeGroup size_group = SizeGroup::g0;
  double rmse_mc = 0, rmse_amc = 0;
  double bias_mc = 0, bias_amc = 0;
  double sd_mc = 0, sd_amc = 0;
};

struct BiasPercentileRow {
  std::string geolevel;
  SizeGroup size_group = SizeGroup::g0;
  double p01 = 0, p50 = 0, p99 = 0;
};

struct SensitivityRow {
  std::size_t n_iterations = 0;
  std::size_t subset = 0;  // which random subset of that size
  CoverageRow coverage;
};

// Rows are ordered by geolevel, size group and interval type, so the table
// does not depend on record order. Closed intervals: lower <= cef <= upper.
std::vector<CoverageRow> coverage_table(std::span<const CIRecord> records, const QueryTable& queries);

// Query-weighted proportion over all rows of one interval type (NaN if none).
double aggregate_coverage(std::span<const CoverageRow> rows, CiType type);
// Query-weighted proportion of one interval type and size group over all geolevels.
double size_group_coverage(std::span<const CoverageRow> rows, CiType type, SizeGroup group);

std::vector<WidthRow> width_summary(std::span<const CIRecord> records, const QueryTable& queries);

/// Moments of every query under MC (reference CEF) and AMC (reference PPMF_0).
/// Tabulations must list the same queries in the same order.
std::vector<MomentComparisonRow> moment_comparison(const QueryTable& queries, const Tabulation& cef,
                                                   const Tabulation& ppmf0, const Tabulation& mc,
                                                   const Tabulation& amc);

// Nearest-rank percentiles of bias_amc; empty groups are omitted.
std::vector<BiasPercentileRow> bias_percentiles(std::span<const MomentComparisonRow> rows,
                                                const QueryTable& queries);

struct FidelitySummary {
  std::size_t n_rmse = 0;              // queries with CEF >= 25
  double median_rel_rmse_diff = 0;     // median |rmse_amc - rmse_mc| / rmse_mc
  double median_rel_sd_diff = 0;       // median |sd_amc - sd_mc| / max(sd_mc, eps)
  std::size_t n_sign = 0;              // CEF >= 100 and |bias_mc| > 0.5 sd_mc
  double sign_agreement = 0;
  std::size_t n_zero = 0;              // CEF == 0
  double min_bias_mc_zero = 0;
  double min_bias_amc_zero = 0;
};

FidelitySummary fidelity_summary(std::span<const MomentComparisonRow> rows, const QueryTable& queries);

/// ct coverage of random replicate subsets of each size, `repeats` subsets per
/// size. A size equal to the replicate count uses all replicates once.
std::vector<SensitivityRow> iteration_sensitivity(const QueryTable& queries, const Tabulation& ppmf0,
                                                  const Tabulation& amc, std::span<const std::size_t> sizes,
                                                  std::size_t repeats, std::uint64_t seed,
                                                  const IntervalOptions& options = {});

// CSV writers with headers matching the row fields.
void write_coverage(std::ostream& out, std::span<const CoverageRow> rows);
void write_widths(std::ostream& out, std::span<const WidthRow> rows);
void write_moment_comparison(std::ostream& out, std::span<const MomentComparisonRow> rows);
void write_bias_percentiles(std::ostream& out, std::span<const BiasPercentileRow> rows);
void write_sensitivity(std::ostream& out, std::span<const SensitivityRow> rows);

std::vector<CoverageRow> read_coverage(std::istream& in);
std::vector<MomentComparisonRow> read_moment_comparison(std::istream& in);

}  // namespace tdamc
