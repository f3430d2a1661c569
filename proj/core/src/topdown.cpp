#include "tdamc/topdown.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "tdamc/errors.hpp"
#include "tdamc/io.hpp"

namespace tdamc {

void Invariants::validate() const {
  if (level1_totals && !root_total) throw ConfigError("level1_totals invariant requires root_total");
}

bool SolveReport::ok() const {
  return std::none_of(levels.begin(), levels.end(), [](const LevelReport& l) {
    return l.infeasible || !std::isfinite(l.residual_norm);
  });
}

std::string SolveReport::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& l : levels) {
    j.push_back({{"level", l.level},
                 {"subproblems", l.subproblems},
                 {"iterations", l.iterations},
                 {"residual_norm", l.residual_norm},
                 {"infeasible", l.infeasible}});
  }
  return nlohmann::ordered_json{{"levels", j}}.dump(2) + "\n";
}

namespace {

constexpr double kSnap = 1e-7;
constexpr double kSumTolerance = 1e-6;

struct Split {
  Count floor = 0;
  double frac = 0;
};

Split split(double v) {
  const double r = std::round(v);
  if (std::abs(v - r) <= kSnap) v = r;
  const double f = std::floor(v);
  return {static_cast<Count>(f), v - f};
}

// Larger fractional part first, then the larger seeded draw.
std::int64_t priority(double frac, const SeedStream& stream, std::size_t cell, std::size_t child) {
  const auto q = static_cast<std::int64_t>(std::llround(frac * 1e9));
  SeedStream draw = stream.derive(cell).derive(child);
  return (q << 24) | static_cast<std::int64_t>(draw.next_u64() >> 40);
}

void check_sum(double sum, Count target, const char* what) {
  if (std::abs(sum - static_cast<double>(target)) > kSumTolerance * std::max(1.0, std::abs(sum))) {
    throw InternalError(std::string("integerize precondition violated: ") + what + " sums to " +
                        io::format_double(sum) + ", expected " + std::to_string(target));
  }
}

// Successive-shortest-path min-cost flow; small graphs only.
class MinCostFlow {
 public:
  explicit MinCostFlow(std::size_t nodes) : graph_(nodes) {}

  void add_edge(std::size_t from, std::size_t to, Count cap, std::int64_t cost) {
    graph_[from].push_back(edges_.size());
    edges_.push_back({to, cap, cost});
    graph_[to].push_back(edges_.size());
    edges_.push_back({from, 0, -cost});
  }

  Count run(std::size_t source, std::size_t sink) {
    Count flow = 0;
    const auto n = graph_.size();
    constexpr auto kInf = std::numeric_limits<std::int64_t>::max();
    while (true) {
      std::vector<std::int64_t> dist(n, kInf);
      std::vector<std::size_t> via(n, edges_.size());
      dist[source] = 0;
      for (std::size_t round = 0; round < n; ++round) {
        bool changed = false;
        for (std::size_t u = 0; u < n; ++u) {
          if (dist[u] == kInf) continue;
          for (auto e : graph_[u]) {
            const auto& edge = edges_[e];
            if (edge.cap > 0 && dist[u] + edge.cost < dist[edge.to]) {
              dist[edge.to] = dist[u] + edge.cost;
              via[edge.to] = e;
              changed = true;
            }
          }
        }
        if (!changed) break;
      }
      if (dist[sink] == kInf) return flow;
      Count push = std::numeric_limits<Count>::max();
      for (auto v = sink; v != source; v = edges_[via[v] ^ 1].to) push = std::min(push, edges_[via[v]].cap);
      for (auto v = sink; v != source; v = edges_[via[v] ^ 1].to) {
        edges_[via[v]].cap -= push;
        edges_[via[v] ^ 1].cap += push;
      }
      flow += push;
    }
  }

  Count flow_on(std::size_t edge_index) const { return edges_[edge_index ^ 1].cap; }
  std::size_t edge_count() const { return edges_.size(); }

 private:
  struct Edge {
    std::size_t to;
    Count cap;
    std::int64_t cost;
  };
  std::vector<std::vector<std::size_t>> graph_;
  std::vector<Edge> edges_;
};

}  // namespace

CellVector round_to_total(std::span<const double> real, Count total, const SeedStream& stream) {
  const double sum = std::accumulate(real.begin(), real.end(), 0.0);
  check_sum(sum, total, "vector");
  CellVector out(real.size());
  std::vector<std::pair<std::int64_t, std::size_t>> candidates;
  Count floors = 0;
  for (std::size_t j = 0; j < real.size(); ++j) {
    if (real[j] < -kSnap) throw InternalError("integerize precondition violated: negative input");
    const auto s = split(std::max(0.0, real[j]));
    out[j] = s.floor;
    floors += s.floor;
    if (s.frac > 0) candidates.emplace_back(priority(s.frac, stream, j, 0), j);
  }
  const Count need = total - floors;
  if (need < 0 || need > static_cast<Count>(candidates.size())) {
    throw InternalError("integerize: cannot reach total within floor/ceil brackets");
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  for (Count i = 0; i < need; ++i) ++out[candidates[static_cast<std::size_t>(i)].second];
  return out;
}

std::vector<CellVector> integerize(const std::vector<std::vector<double>>& real,
                                   std::span<const Count> parent, const SeedStream& stream,
                                   std::optional<std::span<const Count>> child_totals) {
  const std::size_t k = real.size();
  const std::size_t n = parent.size();
  if (k == 0) throw InternalError("integerize needs at least one child");
  for (const auto& row : real) {
    if (row.size() != n) throw InternalError("integerize: child vector has wrong size");
    for (double v : row) {
      if (v < -kSnap || !std::isfinite(v)) throw InternalError("integerize precondition violated: negative input");
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    double sum = 0;
    for (std::size_t c = 0; c < k; ++c) sum += real[c][j];
    check_sum(sum, parent[j], "cell");
  }
  if (child_totals) {
    if (child_totals->size() != k) throw InternalError("integerize: child totals have wrong size");
    for (std::size_t c = 0; c < k; ++c) {
      check_sum(std::accumulate(real[c].begin(), real[c].end(), 0.0), (*child_totals)[c], "child");
    }
  }

  std::vector<CellVector> out(k, CellVector(n, 0));
  std::vector<std::vector<double>> frac(k, std::vector<double>(n, 0.0));
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto s = split(std::max(0.0, real[c][j]));
      out[c][j] = s.floor;
      frac[c][j] = s.frac;
    }
  }
  std::vector<Count> col_need(n);
  for (std::size_t j = 0; j < n; ++j) {
    Count floors = 0;
    for (std::size_t c = 0; c < k; ++c) floors += out[c][j];
    col_need[j] = parent[j] - floors;
  }

  if (!child_totals) {
    std::vector<std::pair<std::int64_t, std::size_t>> candidates;
    for (std::size_t j = 0; j < n; ++j) {
      candidates.clear();
      for (std::size_t c = 0; c < k; ++c) {
        if (frac[c][j] > 0) candidates.emplace_back(priority(frac[c][j], stream, j, c), c);
      }
      if (col_need[j] < 0 || col_need[j] > static_cast<Count>(candidates.size())) {
        throw InternalError("integerize: cell " + std::to_string(j) + " cannot be rounded within brackets");
      }
      std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      for (Count i = 0; i < col_need[j]; ++i) ++out[candidates[static_cast<std::size_t>(i)].second][j];
    }
    return out;
  }

  // Controlled rounding of a two-way table: choose which fractional entries
  // round up so that row and column targets both hold, preferring large
  // fractional parts.
  const std::size_t source = 0;
  const std::size_t sink = k + n + 1;
  MinCostFlow flow(k + n + 2);
  Count need_total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    Count floors = std::accumulate(out[c].begin(), out[c].end(), Count{0});
    const Count row_need = (*child_totals)[c] - floors;
    if (row_need < 0) throw InternalError("integerize: child total below the sum of floors");
    flow.add_edge(source, 1 + c, row_need, 0);
    need_total += row_need;
  }
  std::vector<std::pair<std::size_t, std::size_t>> cell_edges;  // edge index -> (c, j)
  std::vector<std::size_t> edge_ids;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < n; ++j) {
      if (frac[c][j] <= 0) continue;
      edge_ids.push_back(flow.edge_count());
      cell_edges.emplace_back(c, j);
      flow.add_edge(1 + c, 1 + k + j, 1, -priority(frac[c][j], stream, j, c));
    }
  }
  Count col_total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (col_need[j] < 0) throw InternalError("integerize: cell total below the sum of floors");
    flow.add_edge(1 + k + j, sink, col_need[j], 0);
    col_total += col_need[j];
  }
  if (col_total != need_total) throw InternalError("integerize: row and column targets disagree");
  if (flow.run(source, sink) != need_total) throw InternalError("integerize: no controlled rounding exists");
  for (std::size_t e = 0; e < edge_ids.size(); ++e) {
    if (flow.flow_on(edge_ids[e]) > 0) ++out[cell_edges[e].first][cell_edges[e].second];
  }
  return out;
}

TdaResult tda_run(const Histogram& input, const TdaParams& params, const SeedStream& stream) {
  params.invariants.validate();
  const auto& hier = input.hierarchy();
  const auto& schema = input.schema();
  const std::size_t cells = schema.cell_count();

  const auto measurements = take_measurements(input, params.alloc, params.strategy, stream.derive("measure"));
  // Invariant totals are the only direct reads of the input beyond the noisy measurements.
  const auto truth = input.aggregate_all();
  auto total_of = [&](std::size_t unit) {
    return std::accumulate(truth[unit].begin(), truth[unit].end(), Count{0});
  };

  std::map<std::pair<std::size_t, std::string>, std::shared_ptr<const std::vector<std::uint32_t>>> maps;
  for (std::size_t l = 0; l < params.strategy.size(); ++l) {
    for (const auto& g : params.strategy[l]) {
      maps[{l, g.name}] = std::make_shared<const std::vector<std::uint32_t>>(
          schema.marginal_map(marginal_attributes(schema, g)));
    }
  }
  std::vector<std::vector<const NoisyMeasurement*>> by_unit(hier.size());
  for (const auto& m : measurements) by_unit[hier.index_of(m.unit)].push_back(&m);

  auto terms_for = [&](std::size_t unit, std::size_t child_slot, std::vector<LevelTerm>& terms) {
    for (const auto* m : by_unit[unit]) {
      terms.push_back({child_slot, maps.at({m->level, m->group}), m->answers, m->variance});
    }
  };

  const SeedStream round_stream = stream.derive("round");
  TdaResult result{Histogram(input.schema_ptr(), input.hierarchy_ptr()),
                   std::vector<CellVector>(hier.size()), {}};
  using Clock = std::chrono::steady_clock;

  // Root.
  {
    const auto start = Clock::now();
    LevelProblem problem;
    problem.n_children = 1;
    problem.n_cells = cells;
    terms_for(hier.root(), 0, problem.terms);
    const Count root_total = total_of(hier.root());
    if (params.invariants.root_total) problem.child_totals = std::vector<double>{static_cast<double>(root_total)};
    const auto sol = solve_level(problem, params.solver);
    const Count target = params.invariants.root_total
                             ? root_total
                             : std::llround(std::accumulate(sol.x[0].begin(), sol.x[0].end(), 0.0));
    result.units[hier.root()] = round_to_total(sol.x[0], target, round_stream.derive(hier.unit(hier.root()).id));
    result.report.levels.push_back({hier.level_names()[0], 1, sol.iterations, sol.kkt_residual, !sol.converged,
                                    std::chrono::duration<double, std::milli>(Clock::now() - start).count()});
  }

  for (std::size_t l = 1; l < hier.depth(); ++l) {
    const auto start = Clock::now();
    LevelReport rep{hier.level_names()[l], 0, 0, 0.0, false, 0.0};
    const bool hold_totals = l == 1 && params.invariants.level1_totals;
    for (auto parent : hier.units_at_level(l - 1)) {
      const auto& children = hier.unit(parent).children;
      LevelProblem problem;
      problem.n_children = children.size();
      problem.n_cells = cells;
      for (std::size_t c = 0; c < children.size(); ++c) terms_for(children[c], c, problem.terms);
      const auto& parent_vec = result.units[parent];
      problem.parent = std::vector<double>(parent_vec.begin(), parent_vec.end());
      std::vector<Count> totals;
      if (hold_totals) {
        for (auto c : children) totals.push_back(total_of(c));
        problem.child_totals = std::vector<double>(totals.begin(), totals.end());
      }
      const auto sol = solve_level(problem, params.solver);
      auto ints = hold_totals
                      ? integerize(sol.x, parent_vec, round_stream.derive(hier.unit(parent).id),
                                   std::span<const Count>(totals))
                      : integerize(sol.x, parent_vec, round_stream.derive(hier.unit(parent).id));
      for (std::size_t c = 0; c < children.size(); ++c) result.units[children[c]] = std::move(ints[c]);
      ++rep.subproblems;
      rep.iterations += sol.iterations;
      rep.residual_norm = std::max(rep.residual_norm, sol.kkt_residual);
      rep.infeasible = rep.infeasible || !sol.converged;
    }
    rep.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    result.report.levels.push_back(rep);
  }

  std::vector<CellVector> rows;
  rows.reserve(hier.block_count());
  for (auto b : hier.blocks()) rows.push_back(result.units[b]);
  result.output = Histogram::from_dense(input.schema_ptr(), input.hierarchy_ptr(), rows);
  return result;
}

void write_unit_table(std::ostream& out, const GeoHierarchy& hierarchy, const std::vector<CellVector>& units) {
  out << "unit_id,cell_index,count\n";
  for (std::size_t i = 0; i < hierarchy.size(); ++i) {
    const auto& u = hierarchy.unit(i);
    if (u.children.empty()) continue;
    for (std::size_t j = 0; j < units.at(i).size(); ++j) {
      if (units[i][j] != 0) out << u.id << ',' << j << ',' << units[i][j] << '\n';
    }
  }
}

std::vector<CellVector> read_unit_table(std::istream& in, const GeoHierarchy& hierarchy, std::size_t cells) {
  std::vector<CellVector> units(hierarchy.size());
  for (std::size_t i = 0; i < hierarchy.size(); ++i) {
    if (!hierarchy.unit(i).children.empty()) units[i].assign(cells, 0);
  }
  io::read_csv(in, "unit_id,cell_index,count", [&](auto fields, std::size_t line) {
    const auto idx = hierarchy.index_of(std::string(fields[0]));
    if (hierarchy.unit(idx).children.empty()) {
      throw DataError("line " + std::to_string(line) + ": unit table lists block '" + std::string(fields[0]) + "'");
    }
    const auto cell = io::parse_uint(fields[1]);
    if (cell >= cells) throw DataError("line " + std::to_string(line) + ": cell index out of range");
    units[idx][cell] = io::parse_int(fields[2]);
  });
  return units;
}

}  // namespace tdamc
