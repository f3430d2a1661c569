#pragma once

// Exhaustive active-set oracle for small level problems: tries every set of
// variables fixed at zero, solves the equality-constrained QP on the rest by a
// dense KKT system, and keeps the best feasible candidate.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "tdamc/rng.hpp"
#include "tdamc/noise.hpp"
#include "tdamc/solver.hpp"

namespace oracle {

struct Dense {
  Eigen::MatrixXd Q;  // 0.5 x'Qx + q'x
  Eigen::VectorXd q;
  Eigen::MatrixXd E;  // E x = d
  Eigen::VectorXd d;
};

inline Dense densify(const tdamc::LevelProblem& p, double ridge) {
  const auto nc = p.n_children, nj = p.n_cells, n = nc * nj;
  Dense D;
  D.Q = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) * (2 * ridge);
  D.q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (const auto& t : p.terms) {
    const auto m = t.answers.size();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < nj; ++j) A((*t.map)[j], static_cast<Eigen::Index>(t.child * nj + j)) = 1;
    Eigen::VectorXd y(static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i) y(static_cast<Eigen::Index>(i)) = t.answers[i];
    const double w = 1.0 / t.variance;
    D.Q += 2 * w * A.transpose() * A;
    D.q -= 2 * w * A.transpose() * y;
  }
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> rhs;
  if (p.parent) {
    for (std::size_t j = 0; j < nj; ++j) {
      Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
      for (std::size_t c = 0; c < nc; ++c) r(static_cast<Eigen::Index>(c * nj + j)) = 1;
      rows.push_back(r);
      rhs.push_back((*p.parent)[j]);
    }
  }
  if (p.child_totals) {
    for (std::size_t c = 0; c < nc; ++c) {
      Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
      for (std::size_t j = 0; j < nj; ++j) r(static_cast<Eigen::Index>(c * nj + j)) = 1;
      rows.push_back(r);
      rhs.push_back((*p.child_totals)[c]);
    }
  }
  D.E = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n));
  D.d = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    D.E.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    D.d(static_cast<Eigen::Index>(i)) = rhs[i];
  }
  return D;
}

// Returns x[child][cell].
inline std::vector<std::vector<double>> solve(const tdamc::LevelProblem& p, double ridge = 1e-9) {
  const auto D = densify(p, ridge);
  const auto n = D.Q.rows();
  const auto k = D.E.rows();
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_x;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {  // bit set = variable fixed at zero
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(mask >> i & 1u)) free.push_back(i);
    }
    const auto f = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(f + k, f + k);
    Eigen::VectorXd rhs(f + k);
    for (Eigen::Index a = 0; a < f; ++a) {
      for (Eigen::Index b = 0; b < f; ++b) K(a, b) = D.Q(free[a], free[b]);
      for (Eigen::Index r = 0; r < k; ++r) {
        K(f + r, a) = D.E(r, free[a]);
        K(a, f + r) = D.E(r, free[a]);
      }
      rhs(a) = -D.q(free[a]);
    }
    for (Eigen::Index r = 0; r < k; ++r) rhs(f + r) = D.d(r);
    const Eigen::VectorXd z = f + k > 0 ? Eigen::VectorXd(K.completeOrthogonalDecomposition().solve(rhs)) : Eigen::VectorXd();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (Eigen::Index a = 0; a < f; ++a) x(free[a]) = z(a);
    if (k > 0 && (D.E * x - D.d).cwiseAbs().maxCoeff() > 1e-7 * std::max(1.0, D.d.cwiseAbs().maxCoeff())) continue;
    if (n > 0 && x.minCoeff() < -1e-10) continue;
    const double obj = 0.5 * x.dot(D.Q * x) + D.q.dot(x);
    if (obj < best) {
      best = obj;
      best_x = x;
    }
  }
  std::vector<std::vector<double>> out(p.n_children, std::vector<double>(p.n_cells));
  for (std::size_t c = 0; c < p.n_children; ++c) {
    for (std::size_t j = 0; j < p.n_cells; ++j) out[c][j] = std::max(0.0, best_x(static_cast<Eigen::Index>(c * p.n_cells + j)));
  }
  return out;
}

// A random feasible level problem: every child has a detailed measurement and
// possibly marginal or total measurements; constraints drawn among none,
// parent, totals and both.
inline tdamc::LevelProblem random_problem(tdamc::SeedStream& s, std::size_t max_children = 3,
                                          std::size_t max_cells = 4) {
  tdamc::LevelProblem p;
  p.n_children = 1 + static_cast<std::size_t>(s.uniform_int(max_children));
  p.n_cells = 1 + static_cast<std::size_t>(s.uniform_int(max_cells));
  const auto nc = p.n_children, nj = p.n_cells;
  std::vector<std::vector<double>> truth(nc, std::vector<double>(nj));
  for (auto& row : truth) {
    for (auto& v : row) v = s.uniform() < 0.4 ? 0.0 : static_cast<double>(s.uniform_int(8));
  }
  auto detailed = std::make_shared<std::vector<std::uint32_t>>(nj);
  for (std::size_t j = 0; j < nj; ++j) (*detailed)[j] = static_cast<std::uint32_t>(j);
  auto total = std::make_shared<std::vector<std::uint32_t>>(nj, 0);
  auto halves = std::make_shared<std::vector<std::uint32_t>>(nj);
  for (std::size_t j = 0; j < nj; ++j) (*halves)[j] = j < (nj + 1) / 2 ? 0 : 1;
  const double sigma2 = 0.5 + 4 * s.uniform();
  for (std::size_t c = 0; c < nc; ++c) {
    auto add = [&](std::shared_ptr<std::vector<std::uint32_t>> map, double var) {
      std::size_t m = 0;
      for (auto v : *map) m = std::max<std::size_t>(m, v + 1);
      std::vector<double> y(m, 0);
      for (std::size_t j = 0; j < nj; ++j) y[(*map)[j]] += truth[c][j];
      for (auto& v : y) v += static_cast<double>(tdamc::sample_discrete_gaussian(var, s));
      p.terms.push_back({c, map, y, var});
    };
    add(detailed, sigma2);
    if (s.uniform() < 0.5) add(total, sigma2 * (0.5 + s.uniform()));
    if (nj > 1 && s.uniform() < 0.5) add(halves, sigma2 * (0.5 + s.uniform()));
  }
  const auto mode = s.uniform_int(4);
  if (mode & 1u) {
    std::vector<double> parent(nj, 0);
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t j = 0; j < nj; ++j) parent[j] += truth[c][j];
    }
    p.parent = parent;
  }
  if (mode & 2u) {
    std::vector<double> totals(nc, 0);
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t j = 0; j < nj; ++j) totals[c] += truth[c][j];
    }
    p.child_totals = totals;
  }
  return p;
}

}  // namespace oracle
