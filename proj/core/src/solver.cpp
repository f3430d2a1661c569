#include "tdamc/solver.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tdamc/errors.hpp"

namespace tdamc {

void project_simplex(std::span<double> v, double total) {
  if (v.empty()) return;
  if (total <= 0) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0;
  double theta = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cumsum += u[i];
    const double candidate = (cumsum - total) / static_cast<double>(i + 1);
    if (u[i] - candidate > 0) theta = candidate;
  }
  for (auto& x : v) x = std::max(0.0, x - theta);
}

namespace {

constexpr double kZero = 1e-12;

enum class Mode { none, parent, totals, both };

struct Setup {
  std::size_t k = 0;
  std::size_t n = 0;
  Mode mode = Mode::none;
  std::vector<Eigen::MatrixXd> H;
  std::vector<Eigen::VectorXd> b;
  std::vector<char> fixed;  // [c * n + j]: pinned at zero by a zero total
  std::vector<double> parent;
  std::vector<double> totals;
  std::vector<int> col_con;  // constraint index per cell, -1 if none
  std::vector<int> row_con;  // constraint index per child, -1 if none
  std::vector<double> rhs;
  double scale = 1;
  double lipschitz = 1;
};

Setup build(const LevelProblem& p, const SolverOptions& opt) {
  Setup s;
  s.k = p.n_children;
  s.n = p.n_cells;
  if (s.k == 0 || s.n == 0) throw InternalError("empty level problem");
  s.H.assign(s.k, Eigen::MatrixXd::Identity(s.n, s.n) * opt.ridge);
  s.b.assign(s.k, Eigen::VectorXd::Zero(s.n));

  for (const auto& t : p.terms) {
    if (t.child >= s.k || !t.map || t.map->size() != s.n) throw InternalError("malformed level term");
    if (!(t.variance > 0) || !std::isfinite(t.variance)) throw InternalError("term variance must be positive");
    const double w = 1.0 / t.variance;
    const auto& map = *t.map;
    auto& H = s.H[t.child];
    auto& b = s.b[t.child];
    for (std::size_t i = 0; i < s.n; ++i) {
      if (map[i] >= t.answers.size()) throw InternalError("marginal map exceeds answer vector");
      b[static_cast<Eigen::Index>(i)] += w * t.answers[map[i]];
      for (std::size_t j = 0; j < s.n; ++j) {
        if (map[i] == map[j]) H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += w;
      }
    }
  }

  const bool has_parent = p.parent.has_value();
  const bool has_totals = p.child_totals.has_value();
  s.mode = has_parent ? (has_totals ? Mode::both : Mode::parent) : (has_totals ? Mode::totals : Mode::none);
  s.fixed.assign(s.k * s.n, 0);
  s.col_con.assign(s.n, -1);
  s.row_con.assign(s.k, -1);

  if (has_parent) {
    s.parent = *p.parent;
    if (s.parent.size() != s.n) throw InternalError("parent vector has wrong size");
    for (std::size_t j = 0; j < s.n; ++j) {
      if (!(s.parent[j] >= -1e-9) || !std::isfinite(s.parent[j])) throw InternalError("negative parent value");
      if (s.parent[j] <= kZero) {
        s.parent[j] = 0;
        for (std::size_t c = 0; c < s.k; ++c) s.fixed[c * s.n + j] = 1;
      } else {
        s.col_con[j] = static_cast<int>(s.rhs.size());
        s.rhs.push_back(s.parent[j]);
      }
    }
  }
  if (has_totals) {
    s.totals = *p.child_totals;
    if (s.totals.size() != s.k) throw InternalError("child totals have wrong size");
    for (std::size_t c = 0; c < s.k; ++c) {
      if (!(s.totals[c] >= -1e-9) || !std::isfinite(s.totals[c])) throw InternalError("negative child total");
      if (s.totals[c] <= kZero) {
        s.totals[c] = 0;
        for (std::size_t j = 0; j < s.n; ++j) s.fixed[c * s.n + j] = 1;
      } else {
        s.row_con[c] = static_cast<int>(s.rhs.size());
        s.rhs.push_back(s.totals[c]);
      }
    }
  }
  if (has_parent && has_totals) {
    const double a = std::accumulate(s.parent.begin(), s.parent.end(), 0.0);
    const double t = std::accumulate(s.totals.begin(), s.totals.end(), 0.0);
    if (std::abs(a - t) > 1e-6 * std::max(1.0, a)) {
      throw InternalError("infeasible level: parent total differs from the sum of child totals");
    }
  }

  double bmax = 0;
  double lip = opt.ridge;
  for (std::size_t c = 0; c < s.k; ++c) {
    bmax = std::max(bmax, s.b[c].cwiseAbs().maxCoeff());
    lip = std::max(lip, s.H[c].cwiseAbs().rowwise().sum().maxCoeff());
  }
  s.scale = std::max(1.0, bmax);
  s.lipschitz = lip;
  return s;
}

void project(const Setup& s, std::vector<double>& x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (s.fixed[i]) x[i] = 0;
  }
  std::vector<double> buf;
  std::vector<std::size_t> idx;
  switch (s.mode) {
    case Mode::none:
      for (auto& v : x) v = std::max(0.0, v);
      break;
    case Mode::parent:
      for (std::size_t j = 0; j < s.n; ++j) {
        idx.clear();
        buf.clear();
        for (std::size_t c = 0; c < s.k; ++c) {
          if (!s.fixed[c * s.n + j]) {
            idx.push_back(c * s.n + j);
            buf.push_back(x[c * s.n + j]);
          }
        }
        project_simplex(buf, s.parent[j]);
        for (std::size_t i = 0; i < idx.size(); ++i) x[idx[i]] = buf[i];
      }
      break;
    case Mode::totals:
      for (std::size_t c = 0; c < s.k; ++c) {
        std::span<double> row(x.data() + c * s.n, s.n);
        if (s.totals[c] <= 0) {
          std::fill(row.begin(), row.end(), 0.0);
        } else {
          project_simplex(row, s.totals[c]);
        }
      }
      break;
    case Mode::both:
      throw InternalError("no closed-form projection with both constraint families");
  }
}

std::vector<double> initial_point(const Setup& s) {
  std::vector<double> x(s.k * s.n, 0.0);
  switch (s.mode) {
    case Mode::none:
      for (std::size_t c = 0; c < s.k; ++c) {
        for (std::size_t j = 0; j < s.n; ++j) {
          const double d = s.H[c](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
          x[c * s.n + j] = std::max(0.0, s.b[c][static_cast<Eigen::Index>(j)] / d);
        }
      }
      break;
    case Mode::parent:
      for (std::size_t c = 0; c < s.k; ++c) {
        for (std::size_t j = 0; j < s.n; ++j) x[c * s.n + j] = s.parent[j] / static_cast<double>(s.k);
      }
      break;
    case Mode::totals:
      for (std::size_t c = 0; c < s.k; ++c) {
        for (std::size_t j = 0; j < s.n; ++j) x[c * s.n + j] = s.totals[c] / static_cast<double>(s.n);
      }
      break;
    case Mode::both: {
      const double total = std::accumulate(s.parent.begin(), s.parent.end(), 0.0);
      if (total > 0) {
        for (std::size_t c = 0; c < s.k; ++c) {
          for (std::size_t j = 0; j < s.n; ++j) x[c * s.n + j] = s.totals[c] * s.parent[j] / total;
        }
      }
      break;
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (s.fixed[i]) x[i] = 0;
  }
  return x;
}

void gradient(const Setup& s, const std::vector<double>& x, std::vector<double>& g) {
  g.resize(x.size());
  for (std::size_t c = 0; c < s.k; ++c) {
    Eigen::Map<const Eigen::VectorXd> xc(x.data() + c * s.n, static_cast<Eigen::Index>(s.n));
    Eigen::Map<Eigen::VectorXd> gc(g.data() + c * s.n, static_cast<Eigen::Index>(s.n));
    gc.noalias() = s.H[c] * xc - s.b[c];
  }
}

// Accelerated projected gradient with adaptive restart. Returns iterations used.
std::size_t warm_start(const Setup& s, std::vector<double>& x, std::size_t max_iter) {
  std::vector<double> y = x, x_new(x.size()), g;
  double t = 1;
  const double step = 1.0 / s.lipschitz;
  std::size_t it = 0;
  for (; it < max_iter; ++it) {
    gradient(s, y, g);
    for (std::size_t i = 0; i < x.size(); ++i) x_new[i] = y[i] - step * g[i];
    project(s, x_new);
    double restart = 0;
    double delta = 0;
    double xmax = 1;
    for (std::size_t i = 0; i < x.size(); ++i) {
      restart += (y[i] - x_new[i]) * (x_new[i] - x[i]);
      delta = std::max(delta, std::abs(x_new[i] - x[i]));
      xmax = std::max(xmax, std::abs(x_new[i]));
    }
    if (restart > 0) {
      t = 1;
      y = x_new;
    } else {
      const double t_next = 0.5 * (1 + std::sqrt(1 + 4 * t * t));
      const double beta = (t - 1) / t_next;
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x_new[i] + beta * (x_new[i] - x[i]);
      t = t_next;
    }
    x.swap(x_new);
    if (delta <= 1e-13 * xmax) {
      ++it;
      break;
    }
  }
  return it;
}

// Equality-constrained QP with the variables in `active` held at zero.
// Block elimination: each child's free block is factored separately and the
// coupling constraints are resolved through their Schur complement.
void solve_eqp(const Setup& s, const std::vector<char>& active, std::vector<double>& xhat,
               Eigen::VectorXd& nu) {
  const auto m = static_cast<Eigen::Index>(s.rhs.size());
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(m);
  struct Block {
    std::vector<Eigen::Index> free;
    Eigen::MatrixXd Y;
    Eigen::VectorXd z;
  };
  std::vector<Block> blocks(s.k);
  for (std::size_t c = 0; c < s.k; ++c) {
    auto& blk = blocks[c];
    for (std::size_t j = 0; j < s.n; ++j) {
      if (!active[c * s.n + j]) blk.free.push_back(static_cast<Eigen::Index>(j));
    }
    const auto f = static_cast<Eigen::Index>(blk.free.size());
    if (f == 0) continue;
    Eigen::MatrixXd HF(f, f);
    Eigen::VectorXd bF(f);
    Eigen::MatrixXd Et = Eigen::MatrixXd::Zero(f, m);
    for (Eigen::Index a = 0; a < f; ++a) {
      const auto ja = blk.free[static_cast<std::size_t>(a)];
      bF[a] = s.b[c][ja];
      for (Eigen::Index q = 0; q < f; ++q) HF(a, q) = s.H[c](ja, blk.free[static_cast<std::size_t>(q)]);
      if (s.col_con[static_cast<std::size_t>(ja)] >= 0) Et(a, s.col_con[static_cast<std::size_t>(ja)]) = 1;
      if (s.row_con[c] >= 0) Et(a, s.row_con[c]) = 1;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(HF);
    if (llt.info() == Eigen::Success) {
      blk.Y = llt.solve(Et);
      blk.z = llt.solve(bF);
    } else {
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(HF);
      blk.Y = cod.solve(Et);
      blk.z = cod.solve(bF);
    }
    if (m > 0) {
      S.noalias() += Et.transpose() * blk.Y;
      r.noalias() += Et.transpose() * blk.z;
    }
  }
  nu = Eigen::VectorXd::Zero(m);
  if (m > 0) {
    for (Eigen::Index i = 0; i < m; ++i) r[i] -= s.rhs[static_cast<std::size_t>(i)];
    nu = S.completeOrthogonalDecomposition().solve(r);
  }
  xhat.assign(s.k * s.n, 0.0);
  for (std::size_t c = 0; c < s.k; ++c) {
    const auto& blk = blocks[c];
    if (blk.free.empty()) continue;
    Eigen::VectorXd xf = blk.z;
    if (m > 0) xf.noalias() -= blk.Y * nu;
    for (std::size_t a = 0; a < blk.free.size(); ++a) {
      xhat[c * s.n + static_cast<std::size_t>(blk.free[a])] = xf[static_cast<Eigen::Index>(a)];
    }
  }
}

// Reduced gradient H x - b + E^T nu, i.e. the bound multipliers.
std::vector<double> reduced_gradient(const Setup& s, const std::vector<double>& x, const Eigen::VectorXd& nu) {
  std::vector<double> g;
  gradient(s, x, g);
  for (std::size_t c = 0; c < s.k; ++c) {
    for (std::size_t j = 0; j < s.n; ++j) {
      auto& v = g[c * s.n + j];
      if (s.col_con[j] >= 0) v += nu[s.col_con[j]];
      if (s.row_con[c] >= 0) v += nu[s.row_con[c]];
    }
  }
  return g;
}

double kkt_residual(const Setup& s, const std::vector<double>& x, const std::vector<char>& active,
                    const Eigen::VectorXd& nu) {
  const auto lambda = reduced_gradient(s, x, nu);
  double res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (s.fixed[i]) continue;
    res = std::max(res, std::max(0.0, -x[i]));
    res = std::max(res, active[i] ? std::max(0.0, -lambda[i]) : std::abs(lambda[i]));
  }
  for (std::size_t j = 0; j < s.n; ++j) {
    if (s.col_con[j] < 0) continue;
    double sum = 0;
    for (std::size_t c = 0; c < s.k; ++c) sum += x[c * s.n + j];
    res = std::max(res, std::abs(sum - s.parent[j]));
  }
  for (std::size_t c = 0; c < s.k; ++c) {
    if (s.row_con[c] < 0) continue;
    double sum = 0;
    for (std::size_t j = 0; j < s.n; ++j) sum += x[c * s.n + j];
    res = std::max(res, std::abs(sum - s.totals[c]));
  }
  return res / s.scale;
}

}  // namespace

LevelSolution solve_level(const LevelProblem& problem, const SolverOptions& options) {
  const Setup s = build(problem, options);
  std::vector<double> x = initial_point(s);
  LevelSolution out;
  if (s.mode != Mode::both) out.iterations += warm_start(s, x, options.warm_start_iterations);

  std::vector<char> active(x.size(), 0);
  for (std::size_t i = 0; i < x.size(); ++i) active[i] = s.fixed[i] || x[i] <= 0.0;

  // Primal active-set iterations from the feasible warm start.
  std::vector<double> xhat;
  Eigen::VectorXd nu;
  const double dual_tol = options.kkt_tolerance * s.scale * 0.1;
  std::size_t it = 0;
  for (; it < options.max_iterations; ++it) {
    solve_eqp(s, active, xhat, nu);
    double step = 0;
    double xmax = 1;
    for (std::size_t i = 0; i < x.size(); ++i) {
      step = std::max(step, std::abs(xhat[i] - x[i]));
      xmax = std::max(xmax, std::abs(x[i]));
    }
    if (step <= 1e-11 * xmax) {
      x = xhat;
      const auto lambda = reduced_gradient(s, x, nu);
      std::size_t worst = x.size();
      double worst_value = -dual_tol;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (active[i] && !s.fixed[i] && lambda[i] < worst_value) {
          worst_value = lambda[i];
          worst = i;
        }
      }
      if (worst == x.size()) {
        out.converged = true;
        ++it;
        break;
      }
      active[worst] = 0;
      continue;
    }
    double alpha = 1;
    std::size_t blocking = x.size();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (active[i]) continue;
      const double p = xhat[i] - x[i];
      if (p < 0) {
        const double ratio = std::max(0.0, x[i]) / -p;
        if (ratio < alpha) {
          alpha = ratio;
          blocking = i;
        }
      }
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!active[i]) x[i] += alpha * (xhat[i] - x[i]);
    }
    if (blocking != x.size()) {
      x[blocking] = 0;
      active[blocking] = 1;
    }
  }
  out.iterations += it;
  out.kkt_residual = kkt_residual(s, x, active, nu);
  out.converged = out.converged && out.kkt_residual <= options.kkt_tolerance;

  out.x.assign(s.k, std::vector<double>(s.n, 0.0));
  for (std::size_t c = 0; c < s.k; ++c) {
    for (std::size_t j = 0; j < s.n; ++j) out.x[c][j] = std::max(0.0, x[c * s.n + j]);
  }
  return out;
}

}  // namespace tdamc
