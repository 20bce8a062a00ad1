#pragma once

// The outer training loop: curriculum proposal, goal-switching rollouts, and
// interleaved SAC / classifier updates.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "d2c/agent.hpp"
#include "d2c/curriculum.hpp"
#include "d2c/diversify.hpp"
#include "d2c/envs.hpp"
#include "d2c/metrics.hpp"
#include "d2c/rng.hpp"

namespace d2c::orch {

using env::Point;

enum class RewardMode { intrinsic, sparse };
enum class CostMode { cross_entropy, value_biased };
enum class FrequencyUnit { steps, episodes };

struct TrainConfig {
  std::string profile = "paper-default";

  // environment
  std::string env = "complex-maze";
  std::string maze_file;  // overrides `env` when set
  int horizon = 0;        // 0: preset value
  double success_radius = 1.5;
  double max_speed = 1.0;
  double max_turn_rate = 0.78539816339744830962;

  // loop
  int iterations = 1000;
  int rollouts_per_iteration = 0;  // 0: one per desired example
  int updates_per_iteration = 0;   // 0: rollouts * horizon
  std::size_t replay_capacity = 3000000;
  int rollout_threads = 1;

  // classifier ensemble
  div::EnsembleConfig ensemble;
  div::TrainOptions classifier;
  int classifier_update_frequency = 2000;
  FrequencyUnit classifier_frequency_unit = FrequencyUnit::steps;
  int classifier_iterations_per_update = 16;

  // agent
  agent::SacConfig sac;
  RewardMode reward = RewardMode::intrinsic;

  // curriculum
  bool curriculum = true;
  int curriculum_candidates = 500;
  std::size_t curriculum_recent_window = 0;  // 0: whole buffer
  CostMode curriculum_cost = CostMode::cross_entropy;
  bool dump_matching = false;

  // goal switching
  bool goal_switching = true;
  agent::GoalSwitchOptions goal_switch{.probes = 10, .radius = 3.0};
  double goal_switch_radius_factor = 2.0;  // radius = factor * success_radius

  // evaluation
  int eval_every = 10;
  int eval_episodes_per_goal = 5;

  std::uint64_t seed = 0;
  std::string output_dir;

  nlohmann::json to_json() const;
};

/// Built-in profiles: "paper-default" and "desk-scale".
TrainConfig profile_config(const std::string& name);
std::vector<std::string> profile_names();

/// Applies a JSON object on top of `base`. Unknown keys and type errors throw
/// ConfigError naming the key path.
TrainConfig apply_config(TrainConfig base, const nlohmann::json& overrides);

/// Profile from the file's "profile" key (or `fallback_profile`) plus the
/// file's overrides.
TrainConfig load_config(const std::filesystem::path& path, const std::string& fallback_profile = "paper-default");

/// D2C_SEED and D2C_OUTPUT_DIR override seed and output directory.
void apply_environment_overrides(TrainConfig& config);

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Maze described by the config with the dynamics knobs applied.
env::MazeSpec make_maze(const TrainConfig& config);

struct RunState {
  int iteration = 0;
  std::int64_t env_steps = 0;
  std::int64_t episodes = 0;
  std::int64_t classifier_updates = 0;
  agent::SacParams sac;
  div::EnsembleModel ensemble;
  agent::ReplayBuffer buffer{1};
  Rng env_rng;
  Rng agent_rng;
  Rng classifier_rng;
  Rng curriculum_rng;
  std::vector<Point> last_goals;

  friend bool operator==(const RunState&, const RunState&) = default;
};

RunState init_run(const TrainConfig& config, const env::MazeSpec& maze);

struct TrainResult {
  RunState state;
  std::vector<metrics::MetricsRow> metrics;
};

using MetricsCallback = std::function<void(const metrics::MetricsRow&)>;

/// Runs iterations until state.iteration == config.iterations.
void continue_training(RunState& state, const TrainConfig& config, const env::MazeSpec& maze,
                       std::vector<metrics::MetricsRow>& rows, const MetricsCallback& on_row = {});

/// Full run from a fresh state. Writes metrics.csv (and a checkpoint bundle)
/// under config.output_dir when it is set.
TrainResult train(const TrainConfig& config);

/// Curriculum goals for the next iteration (one per rollout).
std::vector<Point> propose_goals(RunState& state, const TrainConfig& config, const env::MazeSpec& maze);

/// Runs one stochastic episode with goal switching. `seed` fixes every random
/// draw of the episode.
agent::Episode rollout(const RunState& state, const TrainConfig& config, const env::MazeSpec& maze, Point goal,
                       std::uint64_t seed);

using PolicyFn = std::function<env::Action(const env::EnvState&, Point goal, Rng&)>;

struct EvalResult {
  double success_rate = 0.0;
  std::vector<double> per_goal;
};

/// Success = reaching the goal within the success radius at any step.
EvalResult evaluate_policy(const env::MazeSpec& maze, std::span<const Point> desired, const PolicyFn& policy,
                           int episodes_per_goal, Rng& rng);

/// Deterministic actor toward each desired example; no state is modified.
EvalResult evaluate(const RunState& state, const TrainConfig& config, const env::MazeSpec& maze,
                    int episodes_per_goal);

PolicyFn random_policy(const env::MazeSpec& maze);

/// Mean Euclidean cost of the optimal perfect matching between two equal-size sets.
double curriculum_distance(std::span<const Point> proposed, std::span<const Point> desired);

/// Number of classifier updates due when the counter moves from `before` to `after`.
std::int64_t crossings(std::int64_t before, std::int64_t after, std::int64_t frequency);

// Checkpoint bundle: a directory holding manifest.json plus sac.bin,
// ensemble.bin and replay.bin.
void save_checkpoint(const std::filesystem::path& dir, const RunState& state, const TrainConfig& config);
RunState load_checkpoint(const std::filesystem::path& dir, TrainConfig* config_out = nullptr);

}  // namespace d2c::orch
