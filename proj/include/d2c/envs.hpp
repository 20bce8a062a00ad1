#pragma once

// 2D point mazes: unicycle kinematics inside an axis-aligned wall grid.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "d2c/rng.hpp"

namespace d2c::env {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct MazeSpec {
  std::string name;
  int cols = 0;
  int rows = 0;
  double cell_size = 1.0;
  std::vector<std::uint8_t> walls;  // row-major, row 0 is the top (largest y)
  Point start;
  std::vector<Point> desired_outcomes;
  int horizon = 100;
  double success_radius = 1.5;
  double dt = 1.0;
  double max_speed = 1.0;
  double max_turn_rate = std::numbers::pi / 4.0;

  double width() const { return cols * cell_size; }
  double height() const { return rows * cell_size; }
  double half_width() const { return 0.5 * width(); }
  double half_height() const { return 0.5 * height(); }

  bool wall_at(int col, int row) const { return walls[static_cast<std::size_t>(row) * cols + col] != 0; }
  bool in_bounds(Point p) const;
  /// Cell containing p; points on the outer edge map to the last cell.
  void cell_of(Point p, int& col, int& row) const;
  Point cell_center(int col, int row) const;
  /// Outside the bounding box or inside a wall cell.
  bool blocked(Point p) const;

  /// Throws std::invalid_argument on any broken invariant.
  void validate() const;
};

struct EnvState {
  Point position;
  double heading = 0.0;
  double linear_velocity = 0.0;
  double angular_velocity = 0.0;
  int step = 0;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct Action {
  double linear = 0.0;
  double angular = 0.0;

  friend bool operator==(const Action&, const Action&) = default;
};

struct StepResult {
  EnvState state;
  bool terminal = false;
};

/// Parses the ASCII grid format: first line "cols rows cell_size", then rows
/// top to bottom with '#' wall, '.' free, 'S' start (exactly one), 'G' free
/// cell holding a desired outcome at its center.
MazeSpec parse_maze(std::string_view text, std::string name);
MazeSpec load_maze(const std::filesystem::path& path);
std::string format_maze(const MazeSpec& spec);

/// complex-maze, medium-maze, spiral-maze, test-umaze.
MazeSpec preset(std::string_view name);
std::vector<std::string> preset_names();

EnvState reset(const MazeSpec& spec);
Action clip(const Action& action, const MazeSpec& spec);
StepResult step(const EnvState& state, const Action& action, const MazeSpec& spec);

inline Point goal_projection(const EnvState& state) { return state.position; }

bool is_success(const EnvState& state, Point goal, const MazeSpec& spec);

/// Uniform over the bounding box, walls included.
Point sample_uniform_state_space(const MazeSpec& spec, Rng& rng);

inline constexpr int kObservationDim = 6;
inline constexpr int kActionDim = 2;
inline constexpr int kGoalDim = 2;

/// Normalized policy input: (x, y) scaled by the half extents, cos/sin of the
/// heading, and velocities scaled by their limits.
std::vector<double> observe(const EnvState& state, const MazeSpec& spec);

/// Mask of cells reachable from the start cell by 4-neighbour moves.
std::vector<std::uint8_t> reachable_cells(const MazeSpec& spec);

}  // namespace d2c::env
