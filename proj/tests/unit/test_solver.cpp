#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qp_oracle.hpp"
#include "tdamc/errors.hpp"
#include "tdamc/solver.hpp"

using namespace tdamc;

namespace {

std::shared_ptr<const std::vector<std::uint32_t>> identity_map(std::size_t n) {
  auto m = std::make_shared<std::vector<std::uint32_t>>(n);
  std::iota(m->begin(), m->end(), 0u);
  return m;
}

}  // namespace

TEST(SolveLevel, SingleChildReturnsParent) {
  LevelProblem p;
  p.n_children = 1;
  p.n_cells = 3;
  p.terms.push_back({0, identity_map(3), {10.0, -4.0, 2.5}, 1.0});
  p.parent = std::vector<double>{1, 2, 3};
  const auto sol = solve_level(p);
  EXPECT_TRUE(sol.converged);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(sol.x[0][j], (*p.parent)[j], 1e-9);
}

TEST(SolveLevel, TwoChildrenHandExampleMatchesGridSearch) {
  LevelProblem p;
  p.n_children = 2;
  p.n_cells = 1;
  p.terms.push_back({0, identity_map(1), {3.2}, 1.0});
  p.terms.push_back({1, identity_map(1), {-1.0}, 1.0});
  p.parent = std::vector<double>{2.0};
  const auto sol = solve_level(p);
  // Grid search over x1 in [0, 2] with x2 = 2 - x1.
  double best = 1e300, arg = 0;
  for (int i = 0; i <= 20000; ++i) {
    const double x1 = i * 1e-4, x2 = 2 - x1;
    const double f = (x1 - 3.2) * (x1 - 3.2) + (x2 + 1.0) * (x2 + 1.0);
    if (f < best) {
      best = f;
      arg = x1;
    }
  }
  EXPECT_NEAR(sol.x[0][0], arg, 1e-4);
  EXPECT_NEAR(sol.x[0][0], 2.0, 1e-6);
  EXPECT_NEAR(sol.x[1][0], 0.0, 1e-6);
}

TEST(SolveLevel, WeightsFollowInverseVariance) {
  auto solve_with = [](double v2) {
    LevelProblem p;
    p.n_children = 1;
    p.n_cells = 1;
    p.terms.push_back({0, identity_map(1), {2.0}, 1.0});
    p.terms.push_back({0, identity_map(1), {10.0}, v2});
    return solve_level(p).x[0][0];
  };
  const double closed = (2.0 / 1.0 + 10.0 / 2.0) / (1.0 + 1.0 / 2.0);
  EXPECT_NEAR(solve_with(2.0), closed, 1e-6);
  EXPECT_GT(solve_with(1.0), solve_with(2.0));  // halving the variance pulls toward 10
  EXPECT_NEAR(solve_with(1.0), 6.0, 1e-6);
}

TEST(SolveLevel, MatchesExhaustiveActiveSetOracle) {
  SeedStream s(2024);
  for (int trial = 0; trial < 150; ++trial) {
    const auto p = oracle::random_problem(s);
    const auto sol = solve_level(p);
    const auto ref = oracle::solve(p);
    ASSERT_TRUE(sol.converged) << "trial " << trial;
    for (std::size_t c = 0; c < p.n_children; ++c) {
      for (std::size_t j = 0; j < p.n_cells; ++j) {
        EXPECT_NEAR(sol.x[c][j], ref[c][j], 1e-6) << "trial " << trial << " child " << c << " cell " << j;
      }
    }
  }
}

TEST(SolveLevel, SolutionIsFeasible) {
  SeedStream s(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = oracle::random_problem(s, 6, 6);
    const auto sol = solve_level(p);
    ASSERT_TRUE(sol.converged);
    EXPECT_LE(sol.kkt_residual, 1e-8);
    for (std::size_t j = 0; j < p.n_cells; ++j) {
      double col = 0;
      for (std::size_t c = 0; c < p.n_children; ++c) {
        EXPECT_GE(sol.x[c][j], 0.0);
        col += sol.x[c][j];
      }
      if (p.parent) EXPECT_NEAR(col, (*p.parent)[j], 1e-7);
    }
    if (p.child_totals) {
      for (std::size_t c = 0; c < p.n_children; ++c) {
        EXPECT_NEAR(std::accumulate(sol.x[c].begin(), sol.x[c].end(), 0.0), (*p.child_totals)[c], 1e-7);
      }
    }
  }
}

TEST(SolveLevel, InconsistentTotalsAreInternalError) {
  LevelProblem p;
  p.n_children = 2;
  p.n_cells = 1;
  p.terms.push_back({0, identity_map(1), {1.0}, 1.0});
  p.terms.push_back({1, identity_map(1), {1.0}, 1.0});
  p.parent = std::vector<double>{2.0};
  p.child_totals = std::vector<double>{1.0, 5.0};
  EXPECT_THROW(solve_level(p), InternalError);
}

TEST(ProjectSimplex, SumNonNegativityAndOptimality) {
  SeedStream s(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 1 + static_cast<std::size_t>(s.uniform_int(8));
    std::vector<double> v(n), x;
    for (auto& e : v) e = 10 * s.uniform() - 5;
    const double total = 6 * s.uniform();
    x = v;
    project_simplex(x, total);
    EXPECT_NEAR(std::accumulate(x.begin(), x.end(), 0.0), total, 1e-9);
    // Optimality: positive coordinates share a common shift tau = v - x, and
    // zero coordinates have v <= tau.
    std::optional<double> tau;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_GE(x[i], 0.0);
      if (x[i] > 1e-12) {
        if (tau) EXPECT_NEAR(v[i] - x[i], *tau, 1e-9);
        tau = v[i] - x[i];
      }
    }
    if (tau) {
      for (std::size_t i = 0; i < n; ++i) {
        if (x[i] <= 1e-12) EXPECT_LE(v[i], *tau + 1e-9);
      }
    }
  }
}
