#include "tdamc/intervals.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "tdamc/errors.hpp"
#include "tdamc/io.hpp"

namespace tdamc {

MomentEstimates moments(std::span<const double> values, double reference) {
  const auto n = values.size();
  if (n < 2) throw InsufficientReplicates("moments need at least 2 replicates, got " + std::to_string(n));
  double sum = 0;
  for (auto v : values) sum += v;
  const double mean = sum / static_cast<double>(n);
  double ss = 0, sr = 0;
  for (auto v : values) {
    ss += (v - mean) * (v - mean);
    sr += (v - reference) * (v - reference);
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());

  MomentEstimates m;
  m.n = n;
  m.bias = mean - reference;
  m.variance = ss / static_cast<double>(n - 1);
  m.mse = sr / static_cast<double>(n);
  m.median_bias = nearest_rank(sorted, 0.5) - reference;
  m.sd = std::sqrt(m.variance);
  return m;
}

double nearest_rank(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw ParameterError("quantile of an empty sample");
  const double n = static_cast<double>(sorted.size());
  auto k = static_cast<std::size_t>(std::ceil(n * p - 1e-9));
  k = std::clamp<std::size_t>(k, 1, sorted.size());
  return sorted[k - 1];
}

double critical_value(CriticalDist dist, double level, double df) {
  if (!(level > 0 && level < 1)) throw ParameterError("confidence level must lie in (0, 1)");
  const double p = 1 - (1 - level) / 2;
  if (dist == CriticalDist::gauss) return boost::math::quantile(boost::math::normal_distribution<double>(), p);
  if (!(df > 0)) throw ParameterError("t degrees of freedom must be positive");
  return boost::math::quantile(boost::math::students_t_distribution<double>(df), p);
}

namespace {
constexpr std::array<std::string_view, 8> kCiNames{"np", "BCnp", "z", "t", "BCz", "BCt", "cz", "ct"};
}

std::string_view to_string(CiType t) { return kCiNames[static_cast<std::size_t>(t)]; }

CiType ci_type_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kCiNames.size(); ++i) {
    if (kCiNames[i] == s) return static_cast<CiType>(i);
  }
  throw DataError("unknown interval type '" + std::string(s) + "'");
}

Interval snap(double lower, double upper) {
  Interval out;
  out.lower = std::max<Count>(0, static_cast<Count>(std::floor(lower)));
  out.upper = std::max<Count>(0, static_cast<Count>(std::ceil(upper)));
  return out;
}

Interval ci_wald(Count point, const MomentEstimates& m, CriticalDist dist, double level, bool bias_correct,
                 double df, WaldScale scale) {
  if (m.n < 2) throw InsufficientReplicates("interval needs moments from at least 2 replicates");
  const double c = critical_value(dist, level, df);
  const double half = c * std::sqrt(scale == WaldScale::mse ? m.mse : m.variance);
  const double pivot = static_cast<double>(point) - (bias_correct ? m.bias : 0.0);
  auto out = snap(pivot - half, pivot + half);
  out.bias_corrected = bias_correct;
  return out;
}

Interval ci_quantile(std::span<const double> values, double reference, double level, bool bias_correct) {
  if (values.size() < 2) throw InsufficientReplicates("interval needs at least 2 replicates");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double alpha = 1 - level;
  double lo = nearest_rank(sorted, alpha / 2);
  double hi = nearest_rank(sorted, 1 - alpha / 2);
  if (bias_correct) {
    const double mb = nearest_rank(sorted, 0.5) - reference;
    lo -= mb;
    hi -= mb;
  }
  auto out = snap(lo, hi);
  out.bias_corrected = bias_correct;
  return out;
}

bool conditional_correct(Count point, const MomentEstimates& m) {
  if (point <= 5) return false;
  if (!(m.sd > 0)) return false;
  if (std::abs(m.bias) / m.sd < 0.5) return false;
  return m.bias < 0 || point >= 25;
}

Interval ci_conditional(Count point, const MomentEstimates& m, CriticalDist dist, double level, double df) {
  return ci_wald(point, m, dist, level, conditional_correct(point, m), df);
}

std::vector<CIRecord> all_intervals(const std::string& query_id, Count point, std::span<const double> values,
                                    const IntervalOptions& options) {
  const auto m = moments(values, static_cast<double>(point));
  const double level = options.level;
  const double df = options.t_df;
  std::vector<CIRecord> out;
  out.reserve(kCiTypes.size());
  for (auto type : kCiTypes) {
    Interval iv;
    switch (type) {
      case CiType::np: iv = ci_quantile(values, static_cast<double>(point), level, false); break;
      case CiType::BCnp: iv = ci_quantile(values, static_cast<double>(point), level, true); break;
      case CiType::z: iv = ci_wald(point, m, CriticalDist::gauss, level, false, df, options.scale); break;
      case CiType::t: iv = ci_wald(point, m, CriticalDist::t, level, false, df, options.scale); break;
      case CiType::BCz: iv = ci_wald(point, m, CriticalDist::gauss, level, true, df, options.scale); break;
      case CiType::BCt: iv = ci_wald(point, m, CriticalDist::t, level, true, df, options.scale); break;
      case CiType::cz:
        iv = ci_wald(point, m, CriticalDist::gauss, level, conditional_correct(point, m), df, options.scale);
        break;
      case CiType::ct:
        iv = ci_wald(point, m, CriticalDist::t, level, conditional_correct(point, m), df, options.scale);
        break;
    }
    out.push_back({query_id, type, level, point, iv.lower, iv.upper, m});
  }
  return out;
}

void write_ci(std::ostream& out, const std::vector<CIRecord>& records) {
  out << "query_id,ci_type,level,point,lower,upper,bias,sd,mse,n\n";
  for (const auto& r : records) {
    out << r.query_id << ',' << to_string(r.type) << ',' << io::format_double(r.level) << ',' << r.point << ','
        << r.lower << ',' << r.upper << ',' << io::format_double(r.moments.bias) << ','
        << io::format_double(r.moments.sd) << ',' << io::format_double(r.moments.mse) << ',' << r.moments.n << '\n';
  }
}

std::vector<CIRecord> read_ci(std::istream& in) {
  std::vector<CIRecord> out;
  io::read_csv(in, "query_id,ci_type,level,point,lower,upper,bias,sd,mse,n", [&](auto f, std::size_t line) {
    CIRecord r;
    r.query_id = std::string(f[0]);
    r.type = ci_type_from_string(f[1]);
    r.level = io::parse_double(f[2]);
    r.point = io::parse_int(f[3]);
    r.lower = io::parse_int(f[4]);
    r.upper = io::parse_int(f[5]);
    r.moments.bias = io::parse_double(f[6]);
    r.moments.sd = io::parse_double(f[7]);
    r.moments.variance = r.moments.sd * r.moments.sd;
    r.moments.mse = io::parse_double(f[8]);
    r.moments.n = static_cast<std::size_t>(io::parse_uint(f[9]));
    if (r.lower < 0 || r.upper < r.lower) {
      throw DataError("line " + std::to_string(line) + ": interval endpoints out of order");
    }
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace tdamc
