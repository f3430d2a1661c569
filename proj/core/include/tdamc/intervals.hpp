#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tdamc/model.hpp"

namespace tdamc {

/// Replicate moments of one query against a reference answer (the CEF for
/// MC, PPMF_0 for AMC).
struct MomentEstimates {
  double bias = 0;
  double variance = 0;  // n - 1 divisor
  double mse = 0;       // n divisor, deviations from the reference
  double median_bias = 0;
  double sd = 0;
  std::size_t n = 0;
};

// Throws InsufficientReplicates for fewer than two values.
MomentEstimates moments(std::span<const double> values, double reference);

// Nearest-rank empirical quantile: the ceil(n p)-th order statistic of `sorted`.
double nearest_rank(std::span<const double> sorted, double p);

enum class CriticalDist { gauss, t };

// Two-sided critical value at nominal coverage `level` (t with `df` degrees of freedom).
double critical_value(CriticalDist dist, double level, double df = 5);

enum class CiType { np, BCnp, z, t, BCz, BCt, cz, ct };

inline constexpr std::array<CiType, 8> kCiTypes{CiType::np, CiType::BCnp, CiType::z,  CiType::t,
                                                CiType::BCz, CiType::BCt, CiType::cz, CiType::ct};

std::string_view to_string(CiType t);
CiType ci_type_from_string(std::string_view s);

// Scale of Wald intervals. The eight standard types use root-MSE.
enum class WaldScale { mse, variance };

struct Interval {
  Count lower = 0;
  Count upper = 0;
  bool bias_corrected = false;
};

// Snaps a raw interval outward to integers and truncates at zero.
Interval snap(double lower, double upper);

Interval ci_wald(Count point, const MomentEstimates& m, CriticalDist dist, double level, bool bias_correct,
                 double df = 5, WaldScale scale = WaldScale::mse);

// Empirical (level) interval of the replicate values; BCnp subtracts the median bias.
Interval ci_quantile(std::span<const double> values, double reference, double level, bool bias_correct);

// The three criteria for applying bias correction.
bool conditional_correct(Count point, const MomentEstimates& m);

Interval ci_conditional(Count point, const MomentEstimates& m, CriticalDist dist, double level, double df = 5);

struct IntervalOptions {
  double level = 0.90;
  double t_df = 5;
  WaldScale scale = WaldScale::mse;
};

struct CIRecord {
  std::string query_id;
  CiType type = CiType::z;
  double level = 0.90;
  Count point = 0;
  Count lower = 0;
  Count upper = 0;
  MomentEstimates moments;
};

// All eight interval types for one query; `point` is also the reference.
std::vector<CIRecord> all_intervals(const std::string& query_id, Count point, std::span<const double> values,
                                    const IntervalOptions& options = {});

// CSV `query_id,ci_type,level,point,lower,upper,bias,sd,mse,n`.
void write_ci(std::ostream& out, const std::vector<CIRecord>& records);
std::vector<CIRecord> read_ci(std::istream& in);

}  // namespace tdamc
