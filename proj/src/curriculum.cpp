#include "d2c/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace d2c::curr {

namespace {
constexpr double kPathEpsilon = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

MinCostFlow::MinCostFlow(int nodes) : nodes_(nodes), out_(static_cast<std::size_t>(nodes)) {}

int MinCostFlow::add_edge(int from, int to, int capacity, double cost) {
  if (from < 0 || to < 0 || from >= nodes_ || to >= nodes_) throw std::invalid_argument("MinCostFlow: bad node");
  if (!std::isfinite(cost)) throw std::invalid_argument("MinCostFlow: non-finite cost");
  const int id = static_cast<int>(edges_.size());
  edges_.push_back({to, capacity, cost});
  edges_.push_back({from, 0, -cost});
  out_[static_cast<std::size_t>(from)].push_back(id);
  out_[static_cast<std::size_t>(to)].push_back(id + 1);
  original_capacity_.push_back(capacity);
  original_capacity_.push_back(0);
  return id;
}

int MinCostFlow::flow_on(int edge) const {
  return original_capacity_[static_cast<std::size_t>(edge)] - edges_[static_cast<std::size_t>(edge)].capacity;
}

MinCostFlow::Result MinCostFlow::solve(int source, int sink, int max_flow) {
  Result result;
  std::vector<double> dist(static_cast<std::size_t>(nodes_));
  std::vector<int> via(static_cast<std::size_t>(nodes_));
  while (result.flow < max_flow) {
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(via.begin(), via.end(), -1);
    dist[static_cast<std::size_t>(source)] = 0.0;
    // Bellman-Ford: residual graphs carry negative reverse costs.
    for (int round = 0; round < nodes_; ++round) {
      bool changed = false;
      for (int u = 0; u < nodes_; ++u) {
        const double du = dist[static_cast<std::size_t>(u)];
        if (du == kInf) continue;
        for (int e : out_[static_cast<std::size_t>(u)]) {
          const Edge& edge = edges_[static_cast<std::size_t>(e)];
          if (edge.capacity <= 0) continue;
          const double nd = du + edge.cost;
          if (nd < dist[static_cast<std::size_t>(edge.to)] - kPathEpsilon) {
            dist[static_cast<std::size_t>(edge.to)] = nd;
            via[static_cast<std::size_t>(edge.to)] = e;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    if (dist[static_cast<std::size_t>(sink)] == kInf) break;
    int push = max_flow - result.flow;
    for (int v = sink; v != source;) {
      const int e = via[static_cast<std::size_t>(v)];
      push = std::min(push, edges_[static_cast<std::size_t>(e)].capacity);
      v = edges_[static_cast<std::size_t>(e ^ 1)].to;
    }
    for (int v = sink; v != source;) {
      const int e = via[static_cast<std::size_t>(v)];
      edges_[static_cast<std::size_t>(e)].capacity -= push;
      edges_[static_cast<std::size_t>(e ^ 1)].capacity += push;
      result.cost += push * edges_[static_cast<std::size_t>(e)].cost;
      v = edges_[static_cast<std::size_t>(e ^ 1)].to;
    }
    result.flow += push;
  }
  return result;
}

void MatchProblem::validate() const {
  const auto m = candidates.size();
  const auto k = desired.size();
  if (k < 1) throw std::invalid_argument("match problem: no desired examples");
  if (m < k) {
    throw std::invalid_argument("match problem infeasible: " + std::to_string(m) + " candidates for " +
                                std::to_string(k) + " desired examples");
  }
  if (costs.rows() != static_cast<Eigen::Index>(m) || costs.cols() != static_cast<Eigen::Index>(k)) {
    throw std::invalid_argument("match problem: cost matrix shape mismatch");
  }
  if (!costs.allFinite()) throw std::invalid_argument("match problem: non-finite cost");
}

double soft_cross_entropy(double p, double y, double p_min) {
  p = std::clamp(p, p_min, 1.0 - p_min);
  y = std::clamp(y, p_min, 1.0 - p_min);
  return -(y * std::log(p) + (1.0 - y) * std::log1p(-p));
}

double pair_cost(const div::EnsembleParams& params, Point s, Point desired) {
  const double p = div::pseudo_probability(params, s, desired);
  const double y = div::pseudo_probability(params, desired, desired);
  return soft_cross_entropy(p, y, params.p_min);
}

double value_biased_cost(const div::EnsembleParams& params, const ValueFn& value, Point s, Point desired,
                         const env::EnvState& start) {
  return pair_cost(params, s, desired) - value(start, s);
}

MatchProblem build_problem(const div::EnsembleParams& params, const PointSource& buffer, std::span<const Point> desired,
                           int candidates, Rng& rng, const CostOptions& options) {
  if (desired.empty()) throw std::invalid_argument("build_problem: empty desired set");
  if (buffer.size < desired.size()) {
    throw std::invalid_argument("build_problem: replay buffer holds " + std::to_string(buffer.size) +
                                " states, fewer than the " + std::to_string(desired.size()) +
                                " desired examples to match");
  }
  const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(std::max(candidates, 0)), buffer.size);
  if (m < desired.size()) throw std::invalid_argument("build_problem: candidate count below desired count");

  // Floyd's sampling without replacement, kept in draw order.
  MatchProblem problem;
  std::unordered_set<std::size_t> chosen;
  std::vector<std::size_t> picks;
  for (std::size_t j = buffer.size - m; j < buffer.size; ++j) {
    const std::size_t t = static_cast<std::size_t>(rng.index(j + 1));
    const std::size_t pick = chosen.contains(t) ? j : t;
    chosen.insert(pick);
    picks.push_back(pick);
  }
  for (std::size_t idx : picks) problem.candidates.push_back(buffer.at(idx));
  problem.desired.assign(desired.begin(), desired.end());

  const auto mm = static_cast<Eigen::Index>(m);
  const auto kk = static_cast<Eigen::Index>(desired.size());
  problem.costs.resize(mm, kk);
  // Batched evaluation of p(s_i; g_j) and y_j = p(g_j; g_j).
  std::vector<Point> s;
  std::vector<Point> g;
  s.reserve(static_cast<std::size_t>(mm * kk + kk));
  g.reserve(s.capacity());
  for (Eigen::Index j = 0; j < kk; ++j) {
    for (Eigen::Index i = 0; i < mm; ++i) {
      s.push_back(problem.candidates[static_cast<std::size_t>(i)]);
      g.push_back(problem.desired[static_cast<std::size_t>(j)]);
    }
  }
  for (Eigen::Index j = 0; j < kk; ++j) {
    s.push_back(problem.desired[static_cast<std::size_t>(j)]);
    g.push_back(problem.desired[static_cast<std::size_t>(j)]);
  }
  const std::vector<double> p = div::pseudo_probability_batch(params, s, g);
  for (Eigen::Index j = 0; j < kk; ++j) {
    const double y = p[static_cast<std::size_t>(mm * kk + j)];
    for (Eigen::Index i = 0; i < mm; ++i) {
      double c = soft_cross_entropy(p[static_cast<std::size_t>(j * mm + i)], y, params.p_min);
      if (options.value) c -= options.value(options.start, problem.candidates[static_cast<std::size_t>(i)]);
      problem.costs(i, j) = c;
    }
  }
  return problem;
}

MatchResult solve_assignment(const nn::Matrix& costs) {
  const int m = static_cast<int>(costs.rows());
  const int k = static_cast<int>(costs.cols());
  if (k < 1) throw std::invalid_argument("solve_matching: no desired nodes");
  if (m < k) {
    throw std::invalid_argument("solve_matching infeasible: " + std::to_string(m) + " candidates for " +
                                std::to_string(k) + " desired nodes");
  }
  if (!costs.allFinite()) throw std::invalid_argument("solve_matching: non-finite cost");
  // Shift to non-negative costs; the optimal assignment is shift invariant.
  const double shift = std::min(0.0, costs.minCoeff());
  const int source = 0;
  const int sink = m + k + 1;
  MinCostFlow flow(m + k + 2);
  for (int i = 0; i < m; ++i) flow.add_edge(source, 1 + i, 1, 0.0);
  std::vector<int> pair_edge(static_cast<std::size_t>(m) * k);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j)
      pair_edge[static_cast<std::size_t>(i) * k + j] = flow.add_edge(1 + i, 1 + m + j, 1, costs(i, j) - shift);
  for (int j = 0; j < k; ++j) flow.add_edge(1 + m + j, sink, 1, 0.0);
  const auto solved = flow.solve(source, sink, k);
  if (solved.flow != k) throw std::runtime_error("solve_matching: flow did not saturate the desired side");

  MatchResult result;
  result.assignment.resize(static_cast<std::size_t>(k));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < k; ++j) {
      if (flow.flow_on(pair_edge[static_cast<std::size_t>(i) * k + j]) > 0) {
        result.assignment[static_cast<std::size_t>(j)] = {i, j};
      }
    }
  }
  for (const auto& [i, j] : result.assignment) result.total_cost += costs(i, j);
  return result;
}

MatchResult solve_matching(const MatchProblem& problem) {
  problem.validate();
  return solve_assignment(problem.costs);
}

Curriculum propose_curriculum(const div::EnsembleParams& params, const PointSource& buffer,
                              std::span<const Point> desired, int candidates, Rng& rng, const CostOptions& options) {
  Curriculum c;
  c.problem = build_problem(params, buffer, desired, candidates, rng, options);
  c.match = solve_matching(c.problem);
  for (const auto& [i, j] : c.match.assignment) c.goals.push_back(c.problem.candidates[static_cast<std::size_t>(i)]);
  return c;
}

void write_problem_csv(std::ostream& os, const MatchProblem& problem) {
  os << std::setprecision(17);
  os << "x,y";
  for (std::size_t j = 0; j < problem.desired.size(); ++j) os << ",cost_" << j;
  os << '\n';
  for (std::size_t i = 0; i < problem.candidates.size(); ++i) {
    os << problem.candidates[i].x << ',' << problem.candidates[i].y;
    for (Eigen::Index j = 0; j < problem.costs.cols(); ++j) os << ',' << problem.costs(static_cast<Eigen::Index>(i), j);
    os << '\n';
  }
}

void write_result_csv(std::ostream& os, const MatchProblem& problem, const MatchResult& result) {
  os << std::setprecision(17);
  os << "desired,candidate,desired_x,desired_y,goal_x,goal_y,cost\n";
  for (const auto& [i, j] : result.assignment) {
    const Point g = problem.desired[static_cast<std::size_t>(j)];
    const Point s = problem.candidates[static_cast<std::size_t>(i)];
    os << j << ',' << i << ',' << g.x << ',' << g.y << ',' << s.x << ',' << s.y << ',' << problem.costs(i, j) << '\n';
  }
}

}  // namespace d2c::curr
