#include "tdamc/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <tuple>

#include "tdamc/errors.hpp"
#include "tdamc/io.hpp"
#include "tdamc/rng.hpp"
#include "tdamc/simulate.hpp"

namespace tdamc {

QueryTable::QueryTable(const std::vector<Query>& workload, const Tabulation& cef) {
  std::unordered_map<std::string, Count> values;
  for (std::size_t q = 0; q < cef.query_ids.size(); ++q) {
    if (cef.values[q].size() != 1) throw DataError("CEF tabulation must hold exactly one value per query");
    values.emplace(cef.query_ids[q], cef.values[q][0]);
  }
  for (const auto& q : workload) {
    const auto it = values.find(q.id);
    if (it == values.end()) throw DataError("query '" + q.id + "' has no CEF value");
    add(q.id, q.geolevel, it->second);
  }
}

void QueryTable::add(const std::string& query_id, std::string geolevel, Count cef) {
  if (std::find(geolevels_.begin(), geolevels_.end(), geolevel) == geolevels_.end()) geolevels_.push_back(geolevel);
  info_[query_id] = {std::move(geolevel), cef, size_group(cef)};
}

const QueryInfo& QueryTable::at(const std::string& query_id) const {
  const auto it = info_.find(query_id);
  if (it == info_.end()) throw DataError("query '" + query_id + "' does not join to a CEF answer");
  return it->second;
}

namespace {

using GroupKey = std::tuple<std::size_t, SizeGroup, CiType>;

std::size_t geolevel_rank(const QueryTable& queries, const std::string& geolevel) {
  const auto& g = queries.geolevels();
  return static_cast<std::size_t>(std::find(g.begin(), g.end(), geolevel) - g.begin());
}

double percentile(std::vector<double>& v, double p) {
  std::sort(v.begin(), v.end());
  return nearest_rank(v, p);
}

}  // namespace

std::vector<CoverageRow> coverage_table(std::span<const CIRecord> records, const QueryTable& queries) {
  struct Acc {
    std::size_t n = 0, hit = 0;
  };
  std::map<GroupKey, Acc> groups;
  std::map<std::pair<std::size_t, CiType>, std::size_t> level_totals;
  for (const auto& r : records) {
    const auto& info = queries.at(r.query_id);
    const auto g = geolevel_rank(queries, info.geolevel);
    auto& acc = groups[{g, info.size_group, r.type}];
    ++acc.n;
    if (r.lower <= info.cef && info.cef <= r.upper) ++acc.hit;
    ++level_totals[{g, r.type}];
  }
  std::vector<CoverageRow> out;
  for (const auto& [key, acc] : groups) {
    const auto& [g, sg, type] = key;
    out.push_back({queries.geolevels()[g], sg, type, acc.n, static_cast<double>(acc.hit) / static_cast<double>(acc.n),
                   static_cast<double>(acc.n) / static_cast<double>(level_totals.at({g, type}))});
  }
  return out;
}

double aggregate_coverage(std::span<const CoverageRow> rows, CiType type) {
  double hit = 0, n = 0;
  for (const auto& r : rows) {
    if (r.ci_type != type) continue;
    hit += r.proportion_containing_cef * static_cast<double>(r.n_queries);
    n += static_cast<double>(r.n_queries);
  }
  return n > 0 ? hit / n : std::numeric_limits<double>::quiet_NaN();
}

double size_group_coverage(std::span<const CoverageRow> rows, CiType type, SizeGroup group) {
  double hit = 0, n = 0;
  for (const auto& r : rows) {
    if (r.ci_type != type || r.size_group != group) continue;
    hit += r.proportion_containing_cef * static_cast<double>(r.n_queries);
    n += static_cast<double>(r.n_queries);
  }
  return n > 0 ? hit / n : std::numeric_limits<double>::quiet_NaN();
}

std::vector<WidthRow> width_summary(std::span<const CIRecord> records, const QueryTable& queries) {
  std::map<GroupKey, std::vector<double>> groups;
  for (const auto& r : records) {
    const auto& info = queries.at(r.query_id);
    groups[{geolevel_rank(queries, info.geolevel), info.size_group, r.type}].push_back(
        static_cast<double>(r.upper - r.lower));
  }
  std::vector<WidthRow> out;
  for (auto& [key, w] : groups) {
    const auto& [g, sg, type] = key;
    std::sort(w.begin(), w.end());
    double sum = 0;
    for (auto x : w) sum += x;
    out.push_back({queries.geolevels()[g], sg, type, w.size(), w.front(), nearest_rank(w, 0.25),
                   nearest_rank(w, 0.5), nearest_rank(w, 0.75), w.back(), sum / static_cast<double>(w.size())});
  }
  return out;
}

namespace {

void check_aligned(const Tabulation& a, const Tabulation& b, const char* what) {
  if (a.query_ids != b.query_ids) throw DataError(std::string(what) + " tabulation lists different queries");
}

std::vector<double> as_doubles(const std::vector<Count>& v) { return {v.begin(), v.end()}; }

}  // namespace

std::vector<MomentComparisonRow> moment_comparison(const QueryTable& queries, const Tabulation& cef,
                                                   const Tabulation& ppmf0, const Tabulation& mc,
                                                   const Tabulation& amc) {
  check_aligned(cef, ppmf0, "PPMF_0");
  check_aligned(cef, mc, "MC");
  check_aligned(cef, amc, "AMC");
  std::vector<MomentComparisonRow> out;
  out.reserve(cef.query_ids.size());
  for (std::size_t q = 0; q < cef.query_ids.size(); ++q) {
    const auto& id = cef.query_ids[q];
    const auto& info = queries.at(id);
    const auto m = moments(as_doubles(mc.values[q]), static_cast<double>(cef.values[q].at(0)));
    const auto a = moments(as_doubles(amc.values[q]), static_cast<double>(ppmf0.values[q].at(0)));
    out.push_back({id, info.geolevel, info.size_group, std::sqrt(m.mse), std::sqrt(a.mse), m.bias, a.bias, m.sd,
                   a.sd});
  }
  return out;
}

std::vector<BiasPercentileRow> bias_percentiles(std::span<const MomentComparisonRow> rows,
                                                const QueryTable& queries) {
  std::map<std::pair<std::size_t, SizeGroup>, std::vector<double>> groups;
  for (const auto& r : rows) groups[{geolevel_rank(queries, r.geolevel), r.size_group}].push_back(r.bias_amc);
  std::vector<BiasPercentileRow> out;
  for (auto& [key, b] : groups) {
    std::sort(b.begin(), b.end());
    out.push_back({queries.geolevels()[key.first], key.second, nearest_rank(b, 0.01), nearest_rank(b, 0.5),
                   nearest_rank(b, 0.99)});
  }
  return out;
}

FidelitySummary fidelity_summary(std::span<const MomentComparisonRow> rows, const QueryTable& queries) {
  constexpr double eps = 1e-9;
  FidelitySummary s;
  std::vector<double> rel_rmse, rel_sd;
  std::size_t agree = 0;
  s.min_bias_mc_zero = std::numeric_limits<double>::infinity();
  s.min_bias_amc_zero = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    const auto cef = queries.at(r.query_id).cef;
    if (cef >= 25) {
      rel_rmse.push_back(std::abs(r.rmse_amc - r.rmse_mc) / std::max(r.rmse_mc, eps));
      rel_sd.push_back(std::abs(r.sd_amc - r.sd_mc) / std::max(r.sd_mc, eps));
    }
    if (cef >= 100 && std::abs(r.bias_mc) > 0.5 * r.sd_mc) {
      ++s.n_sign;
      if ((r.bias_mc > 0) == (r.bias_amc > 0) && r.bias_amc != 0) ++agree;
    }
    if (cef == 0) {
      ++s.n_zero;
      s.min_bias_mc_zero = std::min(s.min_bias_mc_zero, r.bias_mc);
      s.min_bias_amc_zero = std::min(s.min_bias_amc_zero, r.bias_amc);
    }
  }
  s.n_rmse = rel_rmse.size();
  if (!rel_rmse.empty()) {
    s.median_rel_rmse_diff = percentile(rel_rmse, 0.5);
    s.median_rel_sd_diff = percentile(rel_sd, 0.5);
  }
  s.sign_agreement = s.n_sign ? static_cast<double>(agree) / static_cast<double>(s.n_sign) : 1.0;
  if (s.n_zero == 0) s.min_bias_mc_zero = s.min_bias_amc_zero = 0;
  return s;
}

std::vector<SensitivityRow> iteration_sensitivity(const QueryTable& queries, const Tabulation& ppmf0,
                                                  const Tabulation& amc, std::span<const std::size_t> sizes,
                                                  std::size_t repeats, std::uint64_t seed,
                                                  const IntervalOptions& options) {
  check_aligned(ppmf0, amc, "AMC");
  const std::size_t total = amc.values.empty() ? 0 : amc.values.front().size();
  std::vector<SensitivityRow> out;
  for (auto size : sizes) {
    if (size > total) {
      throw ParameterError("subset size " + std::to_string(size) + " exceeds " + std::to_string(total) +
                           " replicates");
    }
    const std::size_t reps = size == total ? 1 : std::max<std::size_t>(1, repeats);
    for (std::size_t r = 0; r < reps; ++r) {
      std::vector<std::size_t> pos;
      if (size == total) {
        for (std::size_t i = 0; i < total; ++i) pos.push_back(i);
      } else {
        pos = subset_positions(total, size, SeedStream(seed).derive("sensitivity").derive(std::uint64_t{size}).derive(std::uint64_t{r}).key());
      }
      std::vector<CIRecord> records;
      records.reserve(amc.query_ids.size());
      std::vector<double> vals(pos.size());
      for (std::size_t q = 0; q < amc.query_ids.size(); ++q) {
        for (std::size_t i = 0; i < pos.size(); ++i) vals[i] = static_cast<double>(amc.values[q][pos[i]]);
        const Count point = ppmf0.values[q].at(0);
        const auto m = moments(vals, static_cast<double>(point));
        const auto iv = ci_wald(point, m, CriticalDist::t, options.level, conditional_correct(point, m),
                                options.t_df, options.scale);
        records.push_back({amc.query_ids[q], CiType::ct, options.level, point, iv.lower, iv.upper, m});
      }
      for (auto& row : coverage_table(records, queries)) out.push_back({size, r, std::move(row)});
    }
  }
  return out;
}

void write_coverage(std::ostream& out, std::span<const CoverageRow> rows) {
  out << "geolevel,size_group,ci_type,n_queries,proportion_containing_cef,group_share\n";
  for (const auto& r : rows) {
    out << r.geolevel << ',' << label(r.size_group) << ',' << to_string(r.ci_type) << ',' << r.n_queries << ','
        << io::format_double(r.proportion_containing_cef) << ',' << io::format_double(r.group_share) << '\n';
  }
}

void write_widths(std::ostream& out, std::span<const WidthRow> rows) {
  out << "geolevel,size_group,ci_type,n,min,q1,median,q3,max,mean\n";
  for (const auto& r : rows) {
    out << r.geolevel << ',' << label(r.size_group) << ',' << to_string(r.ci_type) << ',' << r.n << ','
        << io::format_double(r.min) << ',' << io::format_double(r.q1) << ',' << io::format_double(r.median) << ','
        << io::format_double(r.q3) << ',' << io::format_double(r.max) << ',' << io::format_double(r.mean) << '\n';
  }
}

void write_moment_comparison(std::ostream& out, std::span<const MomentComparisonRow> rows) {
  out << "query_id,geolevel,size_group,rmse_mc,rmse_amc,bias_mc,bias_amc,sd_mc,sd_amc\n";
  for (const auto& r : rows) {
    out << r.query_id << ',' << r.geolevel << ',' << label(r.size_group) << ',' << io::format_double(r.rmse_mc)
        << ',' << io::format_double(r.rmse_amc) << ',' << io::format_double(r.bias_mc) << ','
        << io::format_double(r.bias_amc) << ',' << io::format_double(r.sd_mc) << ','
        << io::format_double(r.sd_amc) << '\n';
  }
}

void write_bias_percentiles(std::ostream& out, std::span<const BiasPercentileRow> rows) {
  out << "geolevel,size_group,p01,p50,p99\n";
  for (const auto& r : rows) {
    out << r.geolevel << ',' << label(r.size_group) << ',' << io::format_double(r.p01) << ','
        << io::format_double(r.p50) << ',' << io::format_double(r.p99) << '\n';
  }
}

void write_sensitivity(std::ostream& out, std::span<const SensitivityRow> rows) {
  out << "n_iterations,subset,geolevel,size_group,ci_type,n_queries,proportion_containing_cef,group_share\n";
  for (const auto& s : rows) {
    const auto& r = s.coverage;
    out << s.n_iterations << ',' << s.subset << ',' << r.geolevel << ',' << label(r.size_group) << ','
        << to_string(r.ci_type) << ',' << r.n_queries << ',' << io::format_double(r.proportion_containing_cef) << ','
        << io::format_double(r.group_share) << '\n';
  }
}

std::vector<CoverageRow> read_coverage(std::istream& in) {
  std::vector<CoverageRow> out;
  io::read_csv(in, "geolevel,size_group,ci_type,n_queries,proportion_containing_cef,group_share",
               [&](auto f, std::size_t) {
                 out.push_back({std::string(f[0]), size_group_from_label(f[1]), ci_type_from_string(f[2]),
                                static_cast<std::size_t>(io::parse_uint(f[3])), io::parse_double(f[4]),
                                io::parse_double(f[5])});
               });
  return out;
}

std::vector<MomentComparisonRow> read_moment_comparison(std::istream& in) {
  std::vector<MomentComparisonRow> out;
  io::read_csv(in, "query_id,geolevel,size_group,rmse_mc,rmse_amc,bias_mc,bias_amc,sd_mc,sd_amc",
               [&](auto f, std::size_t) {
                 out.push_back({std::string(f[0]), std::string(f[1]), size_group_from_label(f[2]),
                                io::parse_double(f[3]), io::parse_double(f[4]), io::parse_double(f[5]),
                                io::parse_double(f[6]), io::parse_double(f[7]), io::parse_double(f[8])});
               });
  return out;
}

}  // namespace tdamc
