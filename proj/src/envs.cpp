#include "d2c/envs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace d2c::env {

namespace {

// Layouts are hand-drawn; only bounds, start and desired outcomes are fixed.
constexpr std::string_view kComplexMaze = R"(9 9 4
...#..G..
.#.#.###.
G#...#...
####.#.##
...#S..#.
.#.###.#.
.#...#..G
.###..##.
..G#.....
)";

constexpr std::string_view kMediumMaze = R"(9 9 4
G...#...G
.##.#.##.
.#.....#.
.#.###.#.
...#S....
.#.#.#.#.
.#...#.#.
.###.###.
G.......G
)";

constexpr std::string_view kSpiralMaze = R"(7 9 4
......G
.######
.#.....
.#.###.
.#.S.#.
.###.#.
.....#.
######.
G......
)";

constexpr std::string_view kTestUMaze = R"(4 4 3
S##G
.##.
.##.
..G.
)";

struct PresetEntry {
  std::string_view name;
  std::string_view layout;
  int horizon;
  std::vector<Point> desired;
};

const std::vector<PresetEntry>& presets() {
  static const std::vector<PresetEntry> table = {
      {"complex-maze", kComplexMaze, 100, {{8, 16}, {-8, -16}, {16, -8}, {-16, 8}}},
      {"medium-maze", kMediumMaze, 100, {{16, 16}, {-16, -16}, {16, -16}, {-16, 16}}},
      {"spiral-maze", kSpiralMaze, 100, {{12, 16}, {-12, -16}}},
      {"test-umaze", kTestUMaze, 60, {{4.5, 4.5}, {1.5, -4.5}}},
  };
  return table;
}

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a;
}

}  // namespace

bool MazeSpec::in_bounds(Point p) const {
  return p.x >= -half_width() && p.x <= half_width() && p.y >= -half_height() && p.y <= half_height();
}

void MazeSpec::cell_of(Point p, int& col, int& row) const {
  col = static_cast<int>(std::floor((p.x + half_width()) / cell_size));
  row = static_cast<int>(std::floor((half_height() - p.y) / cell_size));
  col = std::clamp(col, 0, cols - 1);
  row = std::clamp(row, 0, rows - 1);
}

Point MazeSpec::cell_center(int col, int row) const {
  return {-half_width() + (col + 0.5) * cell_size, half_height() - (row + 0.5) * cell_size};
}

bool MazeSpec::blocked(Point p) const {
  if (!in_bounds(p)) return true;
  int c = 0;
  int r = 0;
  cell_of(p, c, r);
  return wall_at(c, r);
}

void MazeSpec::validate() const {
  if (cols <= 0 || rows <= 0 || !(cell_size > 0.0)) throw std::invalid_argument("maze " + name + ": bad grid size");
  if (walls.size() != static_cast<std::size_t>(cols) * rows) {
    throw std::invalid_argument("maze " + name + ": wall grid size mismatch");
  }
  if (blocked(start)) throw std::invalid_argument("maze " + name + ": start lies in a wall or out of bounds");
  for (const auto& g : desired_outcomes) {
    if (blocked(g)) {
      std::ostringstream os;
      os << "maze " << name << ": desired outcome (" << g.x << ", " << g.y << ") lies in a wall or out of bounds";
      throw std::invalid_argument(os.str());
    }
  }
  if (horizon <= 0) throw std::invalid_argument("maze " + name + ": horizon must be positive");
  if (!(success_radius > 0.0)) throw std::invalid_argument("maze " + name + ": success radius must be positive");
  if (!(dt > 0.0) || !(max_speed > 0.0) || !(max_turn_rate > 0.0)) {
    throw std::invalid_argument("maze " + name + ": dynamics limits must be positive");
  }
  if (max_speed * dt > cell_size) throw std::invalid_argument("maze " + name + ": max step exceeds cell size");
}

MazeSpec parse_maze(std::string_view text, std::string name) {
  std::istringstream in{std::string(text)};
  MazeSpec spec;
  spec.name = std::move(name);
  std::string header;
  if (!std::getline(in, header)) throw std::invalid_argument("maze " + spec.name + ": empty file");
  {
    std::istringstream hs(header);
    if (!(hs >> spec.cols >> spec.rows >> spec.cell_size)) {
      throw std::invalid_argument("maze " + spec.name + ": header must be 'cols rows cell_size'");
    }
  }
  if (spec.cols <= 0 || spec.rows <= 0 || !(spec.cell_size > 0.0)) {
    throw std::invalid_argument("maze " + spec.name + ": non-positive header values");
  }
  spec.walls.assign(static_cast<std::size_t>(spec.cols) * spec.rows, 0);
  int starts = 0;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (row >= spec.rows) throw std::invalid_argument("maze " + spec.name + ": more rows than declared");
    if (static_cast<int>(line.size()) != spec.cols) {
      throw std::invalid_argument("maze " + spec.name + ": row " + std::to_string(row) + " has " +
                                  std::to_string(line.size()) + " cells, expected " + std::to_string(spec.cols));
    }
    for (int col = 0; col < spec.cols; ++col) {
      switch (line[static_cast<std::size_t>(col)]) {
        case '#':
          spec.walls[static_cast<std::size_t>(row) * spec.cols + col] = 1;
          break;
        case '.':
          break;
        case 'S':
          ++starts;
          spec.start = spec.cell_center(col, row);
          break;
        case 'G':
          spec.desired_outcomes.push_back(spec.cell_center(col, row));
          break;
        default:
          throw std::invalid_argument("maze " + spec.name + ": unknown cell character '" +
                                      std::string(1, line[static_cast<std::size_t>(col)]) + "' at row " +
                                      std::to_string(row));
      }
    }
    ++row;
  }
  if (row != spec.rows) {
    throw std::invalid_argument("maze " + spec.name + ": found " + std::to_string(row) + " rows, expected " +
                                std::to_string(spec.rows));
  }
  if (starts != 1) {
    throw std::invalid_argument("maze " + spec.name + ": expected exactly one 'S', found " + std::to_string(starts));
  }
  spec.validate();
  return spec;
}

MazeSpec load_maze(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open maze file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_maze(buf.str(), path.stem().string());
}

std::string format_maze(const MazeSpec& spec) {
  std::ostringstream os;
  os << spec.cols << ' ' << spec.rows << ' ' << spec.cell_size << '\n';
  int sc = 0;
  int sr = 0;
  spec.cell_of(spec.start, sc, sr);
  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      char ch = spec.wall_at(c, r) ? '#' : '.';
      for (const auto& g : spec.desired_outcomes) {
        if (g == spec.cell_center(c, r)) ch = 'G';
      }
      if (c == sc && r == sr) ch = 'S';
      os << ch;
    }
    os << '\n';
  }
  return os.str();
}

MazeSpec preset(std::string_view name) {
  for (const auto& p : presets()) {
    if (p.name == name) {
      MazeSpec spec = parse_maze(p.layout, std::string(p.name));
      spec.horizon = p.horizon;
      spec.desired_outcomes = p.desired;
      spec.validate();
      return spec;
    }
  }
  throw std::invalid_argument("unknown maze preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& p : presets()) names.emplace_back(p.name);
  return names;
}

EnvState reset(const MazeSpec& spec) {
  EnvState s;
  s.position = spec.start;
  return s;
}

Action clip(const Action& action, const MazeSpec& spec) {
  auto clamp_finite = [](double v, double lim) { return std::isfinite(v) ? std::clamp(v, -lim, lim) : 0.0; };
  return {clamp_finite(action.linear, spec.max_speed), clamp_finite(action.angular, spec.max_turn_rate)};
}

StepResult step(const EnvState& state, const Action& action, const MazeSpec& spec) {
  const Action a = clip(action, spec);
  EnvState next = state;
  next.linear_velocity = a.linear;
  next.angular_velocity = a.angular;
  next.heading = wrap_angle(state.heading + a.angular * spec.dt);
  const double dx = a.linear * spec.dt * std::cos(next.heading);
  const double dy = a.linear * spec.dt * std::sin(next.heading);
  // Axis-separated blocking: x first, then y from the resolved x.
  Point p = state.position;
  if (!spec.blocked({p.x + dx, p.y})) p.x += dx;
  if (!spec.blocked({p.x, p.y + dy})) p.y += dy;
  next.position = p;
  next.step = state.step + 1;
  return {next, next.step >= spec.horizon};
}

bool is_success(const EnvState& state, Point goal, const MazeSpec& spec) {
  return distance(goal_projection(state), goal) <= spec.success_radius;
}

Point sample_uniform_state_space(const MazeSpec& spec, Rng& rng) {
  const double x = rng.uniform(-spec.half_width(), spec.half_width());
  const double y = rng.uniform(-spec.half_height(), spec.half_height());
  return {x, y};
}

std::vector<double> observe(const EnvState& state, const MazeSpec& spec) {
  return {state.position.x / spec.half_width(),
          state.position.y / spec.half_height(),
          std::cos(state.heading),
          std::sin(state.heading),
          state.linear_velocity / spec.max_speed,
          state.angular_velocity / spec.max_turn_rate};
}

std::vector<std::uint8_t> reachable_cells(const MazeSpec& spec) {
  std::vector<std::uint8_t> seen(spec.walls.size(), 0);
  int sc = 0;
  int sr = 0;
  spec.cell_of(spec.start, sc, sr);
  std::deque<std::pair<int, int>> queue{{sc, sr}};
  seen[static_cast<std::size_t>(sr) * spec.cols + sc] = 1;
  while (!queue.empty()) {
    auto [c, r] = queue.front();
    queue.pop_front();
    const int dc[] = {1, -1, 0, 0};
    const int dr[] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const int nc = c + dc[k];
      const int nr = r + dr[k];
      if (nc < 0 || nr < 0 || nc >= spec.cols || nr >= spec.rows || spec.wall_at(nc, nr)) continue;
      auto& s = seen[static_cast<std::size_t>(nr) * spec.cols + nc];
      if (!s) {
        s = 1;
        queue.emplace_back(nc, nr);
      }
    }
  }
  return seen;
}

}  // namespace d2c::env
