#include "d2c/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "d2c/agent.hpp"
#include "d2c/curriculum.hpp"
#include "d2c/diversify.hpp"
#include "d2c/envs.hpp"
#include "d2c/metrics.hpp"
#include "d2c/ndnet.hpp"

namespace d2c::verify {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

CheckResult check_matching(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 101));
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + static_cast<int>(rng.index(4));
    const int m = k + static_cast<int>(rng.index(static_cast<std::uint64_t>(7 - k)));
    nn::Matrix costs(m, k);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) costs(i, j) = rng.uniform(0.0, 10.0);
    // Brute force over ordered selections of k distinct candidates.
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (int j = 0; j < k; ++j) c += costs(perm[static_cast<std::size_t>(j)], j);
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const auto result = curr::solve_assignment(costs);
    worst = std::max(worst, std::abs(result.total_cost - best));
  }
  return {"matching_vs_bruteforce", worst <= 1e-9, "max |flow - brute force| = " + fmt(worst)};
}

CheckResult check_gradients(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 102));
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int in = 1 + static_cast<int>(rng.index(4));
    const int hidden = 2 + static_cast<int>(rng.index(6));
    const int out = 1 + static_cast<int>(rng.index(3));
    const int dims[] = {in, hidden, hidden, out};
    const auto act = trial % 2 == 0 ? nn::OutputActivation::identity : nn::OutputActivation::logistic;
    nn::Mlp net = nn::make_mlp(dims, act, rng);
    nn::Vector x(in);
    for (int i = 0; i < in; ++i) x(i) = rng.uniform(-1.0, 1.0);
    nn::Vector up(out);
    for (int i = 0; i < out; ++i) up(i) = rng.uniform(-1.0, 1.0);
    const auto bp = nn::backward(net, x, up);
    const double h = 1e-4;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      auto& w = net.layers[l].weight;
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
          const double orig = w(r, c);
          w(r, c) = orig + h;
          const double fp = up.dot(nn::forward(net, x));
          w(r, c) = orig - h;
          const double fm = up.dot(nn::forward(net, x));
          w(r, c) = orig;
          const double numeric = (fp - fm) / (2 * h);
          const double analytic = bp.params.layers[l].weight(r, c);
          worst = std::max(worst, std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric)));
        }
      }
    }
  }
  return {"mlp_gradient_check", worst < 1e-4, "max relative error = " + fmt(worst)};
}

CheckResult check_mutual_information() {
  // Independent heads: zero. Perfectly (anti-)correlated balanced binary heads: log 2.
  const std::vector<double> a{1.0, 0.0, 1.0, 0.0};
  const std::vector<double> b{1.0, 1.0, 0.0, 0.0};
  const std::vector<double> not_a{0.0, 1.0, 0.0, 1.0};
  const double independent = div::mi_loss(a, b, 1e-12);
  const double identical = div::mi_loss(a, a, 1e-12);
  const double opposite = div::mi_loss(a, not_a, 1e-12);
  const double ab = div::mi_loss(std::vector<double>{0.2, 0.9, 0.4}, std::vector<double>{0.7, 0.1, 0.5});
  const double ba = div::mi_loss(std::vector<double>{0.7, 0.1, 0.5}, std::vector<double>{0.2, 0.9, 0.4});
  const bool ok = std::abs(independent) < 1e-9 && std::abs(identical - std::log(2.0)) < 1e-9 &&
                  std::abs(opposite - std::log(2.0)) < 1e-9 &&
                  std::abs(ab - ba) < 1e-12;
  return {"mutual_information_closed_forms", ok,
          "independent = " + fmt(independent) + ", identical = " + fmt(identical) + ", opposite = " + fmt(opposite) +
              ", asymmetry = " +
              fmt(std::abs(ab - ba))};
}

CheckResult check_metrics_header() {
  std::string joined;
  for (const auto& c : metrics::column_names()) joined += (joined.empty() ? "" : ",") + c;
  metrics::MetricsRow row;
  row.iter = 3;
  row.steps = 1200;
  row.curr_dist = 0.1;
  row.alpha = 1.0 / 3.0;
  const bool round_trip = metrics::parse_row(metrics::format_row(row)) == row;
  const bool ok = joined == metrics::kHeader && metrics::schema_version_of(metrics::kHeader) == metrics::kSchemaVersion &&
                  round_trip;
  return {"metrics_csv_schema", ok, "header = " + joined};
}

CheckResult check_mazes() {
  std::string detail;
  bool ok = true;
  for (const auto& name : env::preset_names()) {
    const auto maze = env::preset(name);
    const auto reparsed = env::parse_maze(env::format_maze(maze), name);
    if (!(reparsed.walls == maze.walls) || reparsed.desired_outcomes.size() != maze.desired_outcomes.size()) {
      ok = false;
      detail += name + ": format/parse mismatch; ";
    }
    const auto reach = env::reachable_cells(maze);
    for (const auto& g : maze.desired_outcomes) {
      int c = 0;
      int r = 0;
      maze.cell_of(g, c, r);
      if (!reach[static_cast<std::size_t>(r * maze.cols + c)]) {
        ok = false;
        detail += name + ": unreachable desired outcome; ";
      }
    }
  }
  return {"maze_presets", ok, ok ? std::to_string(env::preset_names().size()) + " presets consistent" : detail};
}

CheckResult check_env_determinism(std::uint64_t seed) {
  const auto maze = env::preset("complex-maze");
  Rng a(derive_seed(seed, 103));
  Rng b(derive_seed(seed, 103));
  auto sa = env::reset(maze);
  auto sb = env::reset(maze);
  bool ok = true;
  for (int t = 0; t < 500; ++t) {
    const env::Action act{a.uniform(-2.0, 2.0), a.uniform(-2.0, 2.0)};
    const env::Action bct{b.uniform(-2.0, 2.0), b.uniform(-2.0, 2.0)};
    sa = env::step(sa, act, maze).state;
    sb = env::step(sb, bct, maze).state;
    ok = ok && sa == sb && maze.in_bounds(sa.position) && !maze.blocked(sa.position);
  }
  return {"env_determinism_and_bounds", ok, "500 random steps"};
}

}  // namespace

std::vector<CheckResult> run_all(std::uint64_t seed) {
  return {check_matching(seed),         check_gradients(seed), check_mutual_information(),
          check_metrics_header(),       check_mazes(),         check_env_determinism(seed)};
}

}  // namespace d2c::verify
