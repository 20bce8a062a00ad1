#pragma once

// Curriculum goal selection by min-cost bipartite matching between replay
// buffer states and desired-outcome examples.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "d2c/diversify.hpp"
#include "d2c/envs.hpp"
#include "d2c/ndnet.hpp"

namespace d2c::curr {

using env::Point;

/// Successive-shortest-path min-cost max-flow on real costs. Paths are found
/// with Bellman-Ford in edge insertion order and only replaced on an
/// improvement larger than 1e-12, which makes ties resolve to the earliest
/// inserted edges.
class MinCostFlow {
 public:
  explicit MinCostFlow(int nodes);

  int add_edge(int from, int to, int capacity, double cost);

  struct Result {
    int flow = 0;
    double cost = 0.0;
  };
  Result solve(int source, int sink, int max_flow);

  /// Flow currently carried by the edge returned from add_edge.
  int flow_on(int edge) const;

 private:
  struct Edge {
    int to;
    int capacity;
    double cost;
  };
  int nodes_;
  std::vector<Edge> edges_;  // edge 2k is forward, 2k+1 its residual twin
  std::vector<std::vector<int>> out_;
  std::vector<int> original_capacity_;
};

struct MatchProblem {
  std::vector<Point> candidates;  // M
  std::vector<Point> desired;     // K
  nn::Matrix costs;               // M x K

  void validate() const;
};

struct MatchResult {
  std::vector<std::pair<int, int>> assignment;  // (candidate, desired), ordered by desired index
  double total_cost = 0.0;
};

/// -(y ln p + (1 - y) ln(1 - p)) with p and y clamped to [p_min, 1 - p_min].
double soft_cross_entropy(double p, double y, double p_min);

double pair_cost(const div::EnsembleParams& params, Point s, Point desired);

/// V(s0, goal) supplied by the critic for the value-biased variant.
using ValueFn = std::function<double(const env::EnvState& start, Point goal)>;

/// pair_cost(s, desired) - value(start, s).
double value_biased_cost(const div::EnsembleParams& params, const ValueFn& value, Point s, Point desired,
                         const env::EnvState& start);

/// Indexed access to achieved goal-space points of the replay buffer.
struct PointSource {
  std::size_t size = 0;
  std::function<Point(std::size_t)> at;
};

struct CostOptions {
  ValueFn value;  // empty: plain cross-entropy cost
  env::EnvState start;
};

/// Draws min(M, size) candidates without replacement and fills the cost matrix.
/// Throws std::invalid_argument if the buffer holds fewer than K points.
MatchProblem build_problem(const div::EnsembleParams& params, const PointSource& buffer, std::span<const Point> desired,
                           int candidates, Rng& rng, const CostOptions& options = {});

/// Minimum-cost assignment of every desired node to a distinct candidate.
MatchResult solve_matching(const MatchProblem& problem);
MatchResult solve_assignment(const nn::Matrix& costs);

struct Curriculum {
  std::vector<Point> goals;  // one per desired example, in desired order
  MatchProblem problem;
  MatchResult match;
};

Curriculum propose_curriculum(const div::EnsembleParams& params, const PointSource& buffer,
                              std::span<const Point> desired, int candidates, Rng& rng,
                              const CostOptions& options = {});

/// CSV dumps for offline inspection: the cost matrix (one row per candidate,
/// prefixed by its coordinates) and the assignment.
void write_problem_csv(std::ostream& os, const MatchProblem& problem);
void write_result_csv(std::ostream& os, const MatchProblem& problem, const MatchResult& result);

}  // namespace d2c::curr
