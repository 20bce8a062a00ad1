#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "d2c/envs.hpp"

using namespace d2c;
using env::Point;

namespace {

env::MazeSpec open_box() {
  return env::parse_maze("5 5 2\n.....\n.....\n..S..\n.....\n.....\n", "box");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("presets: bounds, start and desired outcomes") {
  const auto complex = env::preset("complex-maze");
  CHECK(complex.width() == 36.0);
  CHECK(complex.height() == 36.0);
  CHECK(complex.start == Point{0, 0});
  CHECK(complex.horizon == 100);
  CHECK(complex.desired_outcomes == std::vector<Point>{{8, 16}, {-8, -16}, {16, -8}, {-16, 8}});

  const auto medium = env::preset("medium-maze");
  CHECK(medium.width() == 36.0);
  CHECK(medium.height() == 36.0);
  CHECK(medium.desired_outcomes == std::vector<Point>{{16, 16}, {-16, -16}, {16, -16}, {-16, 16}});

  const auto spiral = env::preset("spiral-maze");
  CHECK(spiral.width() == 28.0);
  CHECK(spiral.height() == 36.0);
  CHECK(spiral.desired_outcomes == std::vector<Point>{{12, 16}, {-12, -16}});

  const auto umaze = env::preset("test-umaze");
  CHECK(umaze.width() == 12.0);
  CHECK(umaze.height() == 12.0);
  CHECK(umaze.horizon == 60);
  CHECK(umaze.desired_outcomes.size() == 2);

  CHECK_THROWS_AS(env::preset("nope"), std::invalid_argument);
}

TEST_CASE("presets: start and every desired outcome are free and reachable") {
  for (const auto& name : env::preset_names()) {
    const auto maze = env::preset(name);
    CHECK_FALSE(maze.blocked(maze.start));
    const auto reach = env::reachable_cells(maze);
    for (const auto& g : maze.desired_outcomes) {
      CHECK_FALSE(maze.blocked(g));
      int c = 0, r = 0;
      maze.cell_of(g, c, r);
      CHECK_MESSAGE(reach[static_cast<std::size_t>(r * maze.cols + c)], name);
    }
  }
}

TEST_CASE("shipped maze files match the built-in presets") {
  for (const auto& name : env::preset_names()) {
    const auto file = env::load_maze(std::string(D2C_SOURCE_DIR) + "/mazes/" + name + ".txt");
    const auto preset = env::preset(name);
    CHECK(file.walls == preset.walls);
    CHECK(file.start == preset.start);
    CHECK(file.cols == preset.cols);
    CHECK(file.rows == preset.rows);
    CHECK(file.cell_size == preset.cell_size);
    // Every preset goal sits on a 'G' cell of the file.
    for (const auto& g : preset.desired_outcomes)
      CHECK(std::find(file.desired_outcomes.begin(), file.desired_outcomes.end(), g) != file.desired_outcomes.end());
    CHECK(env::format_maze(preset) == read_file(std::string(D2C_SOURCE_DIR) + "/mazes/" + name + ".txt"));
  }
}

TEST_CASE("parse_maze rejects malformed grids") {
  CHECK_THROWS_AS(env::parse_maze("", "e"), std::invalid_argument);
  CHECK_THROWS_AS(env::parse_maze("2 2 1\n..\n..\n", "nostart"), std::invalid_argument);
  CHECK_THROWS_AS(env::parse_maze("2 2 1\nSS\n..\n", "twostart"), std::invalid_argument);
  CHECK_THROWS_AS(env::parse_maze("2 2 1\nS..\n..\n", "ragged"), std::invalid_argument);
  CHECK_THROWS_AS(env::parse_maze("2 2 1\nS.\n", "short"), std::invalid_argument);
  CHECK_THROWS_AS(env::parse_maze("2 2 1\nSx\n..\n", "char"), std::invalid_argument);
  CHECK_THROWS_AS(env::parse_maze("2 2 0.5\nS.\n..\n", "tinycell"), std::invalid_argument);
}

TEST_CASE("reset") {
  const auto complex = env::preset("complex-maze");
  const auto s = env::reset(complex);
  CHECK(s.position == Point{0, 0});
  CHECK(s.heading == 0.0);
  CHECK(s.linear_velocity == 0.0);
  CHECK(s.angular_velocity == 0.0);
  CHECK(s.step == 0);
  CHECK(env::reset(complex) == s);
  CHECK(env::goal_projection(s) == Point{0, 0});

  auto custom = open_box();
  custom.start = {2, 3};
  CHECK(env::reset(custom).position == Point{2, 3});
}

TEST_CASE("step: kinematics") {
  const auto box = open_box();
  const auto s0 = env::reset(box);
  CHECK(env::step(s0, {0, 0}, box).state.position == s0.position);
  const auto s1 = env::step(s0, {1, 0}, box).state;
  CHECK(s1.position.x == s0.position.x + 1.0);
  CHECK(s1.position.y == s0.position.y);
  CHECK(s1.step == 1);
  // Actions are clipped, never rejected.
  const auto s2 = env::step(s0, {50, 50}, box).state;
  CHECK(s2.linear_velocity == box.max_speed);
  CHECK(s2.angular_velocity == box.max_turn_rate);
  CHECK(env::clip({std::nan(""), -9}, box).linear == 0.0);
  CHECK(env::clip({std::nan(""), -9}, box).angular == -box.max_turn_rate);
}

TEST_CASE("step: terminal when the step counter reaches the horizon") {
  auto box = open_box();
  box.horizon = 3;
  auto s = env::reset(box);
  for (int t = 0; t < 3; ++t) {
    const auto r = env::step(s, {0.1, 0.1}, box);
    CHECK(r.terminal == (t == 2));
    s = r.state;
  }
}

TEST_CASE("step: motion into a wall cancels only the blocked component") {
  // Wall directly to the right of the start cell.
  const auto maze = env::parse_maze("3 3 2\n...\n.S#\n...\n", "wall");
  env::EnvState s = env::reset(maze);
  s.position = {0.5, 0.2};
  s.heading = std::numbers::pi / 4;
  const auto next = env::step(s, {1, 0}, maze).state;
  // x would enter the wall cell [1, 3]: cancelled. y proceeds.
  CHECK(next.position.x == 0.5);
  CHECK(next.position.y == doctest::Approx(0.2 + std::sin(std::numbers::pi / 4)));
  int c = 0, r = 0;
  maze.cell_of(next.position, c, r);
  CHECK_FALSE(maze.wall_at(c, r));
}

TEST_CASE("step: outer boundary blocks like a wall") {
  const auto box = open_box();
  env::EnvState s = env::reset(box);
  s.position = {4.8, 0};
  const auto next = env::step(s, {1, 0}, box).state;
  CHECK(next.position.x == 4.8);
}

TEST_CASE("property: random episodes never leave free space") {
  Rng rng(77);
  const auto names = env::preset_names();
  int episodes = 0;
  for (int e = 0; e < 10000; ++e) {
    const auto maze = env::preset(names[static_cast<std::size_t>(e) % names.size()]);
    auto s = env::reset(maze);
    bool terminal = false;
    while (!terminal) {
      const env::Action a{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
      const auto r = env::step(s, a, maze);
      REQUIRE(maze.in_bounds(r.state.position));
      REQUIRE_FALSE(maze.blocked(r.state.position));
      REQUIRE(r.state.step <= maze.horizon);
      // determinism
      REQUIRE(env::step(s, a, maze).state == r.state);
      s = r.state;
      terminal = r.terminal;
    }
    ++episodes;
  }
  CHECK(episodes == 10000);
}

TEST_CASE("is_success uses a closed radius") {
  const auto box = open_box();
  env::EnvState s = env::reset(box);
  const Point g = s.position;
  CHECK(env::is_success(s, g, box));
  CHECK(env::is_success(s, {g.x + 0.5 * box.success_radius, g.y}, box));
  CHECK(env::is_success(s, {g.x + box.success_radius, g.y}, box));
  CHECK_FALSE(env::is_success(s, {g.x + box.success_radius + 1e-9, g.y}, box));
}

TEST_CASE("sample_uniform_state_space covers the bounding box uniformly") {
  const auto maze = env::preset("complex-maze");
  Rng rng(5);
  const int n = 100000;
  double sx = 0, sy = 0;
  int left = 0;
  for (int i = 0; i < n; ++i) {
    const auto p = env::sample_uniform_state_space(maze, rng);
    REQUIRE(maze.in_bounds(p));
    sx += p.x;
    sy += p.y;
    left += p.x < 0 ? 1 : 0;
  }
  CHECK(std::abs(sx / n) < 0.5);
  CHECK(std::abs(sy / n) < 0.5);
  CHECK(std::abs(static_cast<double>(left) / n - 0.5) < 0.01);
}

TEST_CASE("observation layout") {
  const auto maze = env::preset("test-umaze");
  env::EnvState s = env::reset(maze);
  s.heading = std::numbers::pi / 2;
  s.linear_velocity = 0.5;
  const auto o = env::observe(s, maze);
  REQUIRE(o.size() == static_cast<std::size_t>(env::kObservationDim));
  CHECK(o[0] == doctest::Approx(-4.5 / 6.0));
  CHECK(o[1] == doctest::Approx(4.5 / 6.0));
  CHECK(o[2] == doctest::Approx(0.0));
  CHECK(o[3] == doctest::Approx(1.0));
  CHECK(o[4] == doctest::Approx(0.5));
}
