#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace tdamc {

/// One weighted least-squares term ||A x_child - answers||^2 / variance,
/// where A sums detailed cells into marginal cells via `map`.
struct LevelTerm {
  std::size_t child = 0;
  std::shared_ptr<const std::vector<std::uint32_t>> map;
  std::vector<double> answers;
  double variance = 1.0;
};

/// The continuous subproblem for the children of one geounit:
///
///   minimize  sum_terms ||A x_c - y||^2 / var + ridge * ||x||^2
///   s.t.      x >= 0,
///             sum_c x_c = parent            (per cell, when `parent` is set)
///             sum_j x_cj = child_totals[c]  (per child, when set)
struct LevelProblem {
  std::size_t n_children = 0;
  std::size_t n_cells = 0;
  std::vector<LevelTerm> terms;
  std::optional<std::vector<double>> parent;
  std::optional<std::vector<double>> child_totals;
};

struct SolverOptions {
  double ridge = 1e-9;
  double kkt_tolerance = 1e-8;
  std::size_t max_iterations = 10000;
  // Projected-gradient iterations used to guess the active set.
  std::size_t warm_start_iterations = 400;
};

struct LevelSolution {
  std::vector<std::vector<double>> x;  // [child][cell], non-negative
  std::size_t iterations = 0;
  // Scaled KKT residual: max of stationarity, dual and primal violations
  // divided by max(1, |linear term|_inf).
  double kkt_residual = 0;
  bool converged = false;
};

/// Solves a LevelProblem to KKT tolerance. Throws InternalError when the
/// constraint data is inconsistent (negative or mismatched totals).
LevelSolution solve_level(const LevelProblem& problem, const SolverOptions& options = {});

// Euclidean projection of v onto {x >= 0, sum x = total}; total >= 0.
void project_simplex(std::span<double> v, double total);

}  // namespace tdamc
