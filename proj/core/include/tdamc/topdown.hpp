#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tdamc/model.hpp"
#include "tdamc/noise.hpp"
#include "tdamc/rng.hpp"
#include "tdamc/solver.hpp"

namespace tdamc {

/// Totals held exactly equal to the input's totals.
struct Invariants {
  bool root_total = true;
  bool level1_totals = false;

  // level1_totals requires root_total.
  void validate() const;
};

struct TdaParams {
  BudgetAllocation alloc;
  Strategy strategy;
  Invariants invariants;
  SolverOptions solver;
};

struct LevelReport {
  std::string level;
  std::size_t subproblems = 0;
  std::size_t iterations = 0;
  double residual_norm = 0;  // worst scaled KKT residual over the level
  bool infeasible = false;
  double wall_ms = 0;
};

struct SolveReport {
  std::vector<LevelReport> levels;

  bool ok() const;
  std::string to_json() const;
};

struct TdaResult {
  Histogram output;
  // Integer solution for every geounit, indexed like hierarchy().units().
  std::vector<CellVector> units;
  SolveReport report;
};

/// One run of the top-down mechanism: fresh discrete Gaussian measurements of
/// `input`, then level-by-level weighted NNLS and controlled rounding from the
/// root down. The output is non-negative, integral and hierarchically
/// consistent, and holds the configured invariant totals of `input` exactly.
TdaResult tda_run(const Histogram& input, const TdaParams& params, const SeedStream& stream);

/// Rounds each child's real cell vector to floor or ceil so that every cell
/// sums to `parent` across children exactly. With `child_totals`, each child's
/// cell sum is also held exactly (controlled rounding via min-cost flow).
/// Larger fractional parts round up first; ties go to a seeded draw and then
/// to child order. Throws InternalError when the inputs do not sum to the
/// parent within 1e-6.
std::vector<CellVector> integerize(const std::vector<std::vector<double>>& real,
                                   std::span<const Count> parent, const SeedStream& stream,
                                   std::optional<std::span<const Count>> child_totals = std::nullopt);

// Rounds a single vector to floor/ceil entries summing to `total`.
CellVector round_to_total(std::span<const double> real, Count total, const SeedStream& stream);

// CSV `unit_id,cell_index,count` of the non-block units of a TDA solution.
void write_unit_table(std::ostream& out, const GeoHierarchy& hierarchy,
                      const std::vector<CellVector>& units);
// Returns vectors for every non-block unit (block entries are left empty).
std::vector<CellVector> read_unit_table(std::istream& in, const GeoHierarchy& hierarchy,
                                        std::size_t cells);

}  // namespace tdamc
