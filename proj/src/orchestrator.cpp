#include "d2c/orchestrator.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace d2c::orch {

using nlohmann::json;

namespace {

// --- enum <-> string --------------------------------------------------------

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<RewardMode> kRewardNames[] = {{RewardMode::intrinsic, "intrinsic"}, {RewardMode::sparse, "sparse"}};
constexpr EnumName<CostMode> kCostNames[] = {{CostMode::cross_entropy, "cross_entropy"},
                                             {CostMode::value_biased, "value_biased"}};
constexpr EnumName<FrequencyUnit> kUnitNames[] = {{FrequencyUnit::steps, "steps"},
                                                  {FrequencyUnit::episodes, "episodes"}};
constexpr EnumName<div::GoalSource> kGoalSourceNames[] = {{div::GoalSource::uniform_target, "uniform_target"},
                                                          {div::GoalSource::buffer_and_desired, "buffer_and_desired"},
                                                          {div::GoalSource::desired, "desired"}};
constexpr EnumName<div::MiGoalMode> kMiModeNames[] = {{div::MiGoalMode::shared, "shared"},
                                                      {div::MiGoalMode::per_sample, "per_sample"}};
constexpr EnumName<agent::ProbeConditioning> kProbeNames[] = {{agent::ProbeConditioning::self, "self"},
                                                              {agent::ProbeConditioning::original_goal, "original_goal"}};

template <typename E, std::size_t N>
const char* to_name(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  return "?";
}

template <typename E, std::size_t N>
E from_name(const EnumName<E> (&table)[N], const std::string& s, const std::string& key) {
  for (const auto& e : table)
    if (s == e.name) return e.value;
  std::string allowed;
  for (const auto& e : table) allowed += std::string(allowed.empty() ? "" : ", ") + e.name;
  throw ConfigError("config: '" + key + "' has invalid value '" + s + "' (allowed: " + allowed + ")");
}

// --- schema-checked merge ---------------------------------------------------

std::string type_name(const json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

bool compatible(const json& schema, const json& value) {
  if (schema.is_boolean()) return value.is_boolean();
  if (schema.is_number_integer()) return value.is_number_integer();
  if (schema.is_number()) return value.is_number();
  if (schema.is_string()) return value.is_string();
  if (schema.is_array()) {
    if (!value.is_array()) return false;
    for (const auto& v : value)
      if (!v.is_number_integer()) return false;
    return true;
  }
  if (schema.is_object()) return value.is_object();
  return false;
}

void merge_checked(json& base, const json& overrides, const std::string& prefix) {
  if (!overrides.is_object()) throw ConfigError("config: '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + path + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), path);
      continue;
    }
    if (!compatible(slot, it.value())) {
      throw ConfigError("config: '" + path + "' expected " + type_name(slot) + ", got " + type_name(it.value()));
    }
    slot = it.value();
  }
}

TrainConfig from_json(const json& j) {
  TrainConfig c;
  c.profile = j.at("profile").get<std::string>();
  const auto& e = j.at("env");
  c.env = e.at("name").get<std::string>();
  c.maze_file = e.at("maze_file").get<std::string>();
  c.horizon = e.at("horizon").get<int>();
  c.success_radius = e.at("success_radius").get<double>();
  c.max_speed = e.at("max_speed").get<double>();
  c.max_turn_rate = e.at("max_turn_rate").get<double>();

  const auto& t = j.at("train");
  c.iterations = t.at("iterations").get<int>();
  c.rollouts_per_iteration = t.at("rollouts_per_iteration").get<int>();
  c.updates_per_iteration = t.at("updates_per_iteration").get<int>();
  c.replay_capacity = t.at("replay_capacity").get<std::size_t>();
  c.rollout_threads = t.at("rollout_threads").get<int>();
  c.seed = t.at("seed").get<std::uint64_t>();
  c.output_dir = t.at("output_dir").get<std::string>();
  c.reward = from_name(kRewardNames, t.at("reward").get<std::string>(), "train.reward");

  const auto& k = j.at("classifier");
  c.ensemble.heads = k.at("heads").get<int>();
  c.ensemble.trunk_hidden = k.at("trunk_hidden").get<std::vector<int>>();
  c.ensemble.head_hidden = k.at("head_hidden").get<std::vector<int>>();
  c.ensemble.lambda = k.at("lambda").get<double>();
  c.ensemble.noise_scale = k.at("noise_scale").get<double>();
  c.ensemble.p_min = k.at("p_min").get<double>();
  c.ensemble.conditional = k.at("conditional").get<bool>();
  c.classifier.learning_rate = k.at("learning_rate").get<double>();
  c.classifier.negatives = k.at("negatives").get<int>();
  c.classifier.positives = k.at("positives").get<int>();
  c.classifier.target = k.at("target").get<int>();
  c.classifier.goal_source = from_name(kGoalSourceNames, k.at("goal_source").get<std::string>(), "classifier.goal_source");
  c.classifier.mi_goal_mode = from_name(kMiModeNames, k.at("mi_goal_mode").get<std::string>(), "classifier.mi_goal_mode");
  c.classifier_update_frequency = k.at("update_frequency").get<int>();
  c.classifier_frequency_unit = from_name(kUnitNames, k.at("frequency_unit").get<std::string>(), "classifier.frequency_unit");
  c.classifier_iterations_per_update = k.at("iterations_per_update").get<int>();

  const auto& s = j.at("sac");
  c.sac.actor_hidden = s.at("actor_hidden").get<std::vector<int>>();
  c.sac.critic_hidden = s.at("critic_hidden").get<std::vector<int>>();
  c.sac.gamma = s.at("gamma").get<double>();
  c.sac.tau = s.at("tau").get<double>();
  c.sac.init_temperature = s.at("init_temperature").get<double>();
  c.sac.actor_lr = s.at("actor_lr").get<double>();
  c.sac.critic_lr = s.at("critic_lr").get<double>();
  c.sac.alpha_lr = s.at("alpha_lr").get<double>();
  c.sac.batch_size = s.at("batch_size").get<int>();
  c.sac.actor_update_frequency = s.at("actor_update_frequency").get<int>();
  c.sac.target_update_frequency = s.at("target_update_frequency").get<int>();
  c.sac.target_entropy = s.at("target_entropy").get<double>();
  c.sac.log_std_min = s.at("log_std_min").get<double>();
  c.sac.log_std_max = s.at("log_std_max").get<double>();
  c.sac.relabel_ratio = s.at("relabel_ratio").get<double>();
  c.sac.learn_temperature = s.at("learn_temperature").get<bool>();
  c.sac.timeout_is_terminal = s.at("timeout_is_terminal").get<bool>();

  const auto& cu = j.at("curriculum");
  c.curriculum = cu.at("enabled").get<bool>();
  c.curriculum_candidates = cu.at("candidates").get<int>();
  c.curriculum_recent_window = cu.at("recent_window").get<std::size_t>();
  c.curriculum_cost = from_name(kCostNames, cu.at("cost").get<std::string>(), "curriculum.cost");
  c.dump_matching = cu.at("dump_matching").get<bool>();

  const auto& g = j.at("goal_switch");
  c.goal_switching = g.at("enabled").get<bool>();
  c.goal_switch.probes = g.at("probes").get<int>();
  c.goal_switch_radius_factor = g.at("radius_factor").get<double>();
  c.goal_switch.conditioning = from_name(kProbeNames, g.at("conditioning").get<std::string>(), "goal_switch.conditioning");

  const auto& ev = j.at("eval");
  c.eval_every = ev.at("every").get<int>();
  c.eval_episodes_per_goal = ev.at("episodes_per_goal").get<int>();

  if (c.iterations < 0) throw ConfigError("config: 'train.iterations' must be >= 0");
  if (c.sac.batch_size < 1) throw ConfigError("config: 'sac.batch_size' must be >= 1");
  if (c.classifier_update_frequency < 1) throw ConfigError("config: 'classifier.update_frequency' must be >= 1");
  if (c.replay_capacity < 1) throw ConfigError("config: 'train.replay_capacity' must be >= 1");
  if (c.goal_switch.probes < 1) throw ConfigError("config: 'goal_switch.probes' must be >= 1");
  if (c.ensemble.heads < 2) throw ConfigError("config: 'classifier.heads' must be >= 2");
  if (c.rollout_threads < 1) throw ConfigError("config: 'train.rollout_threads' must be >= 1");
  return c;
}

div::SampleSources make_sources(const RunState& state, const env::MazeSpec& maze) {
  div::SampleSources src;
  src.achieved = [&state](Rng& rng) { return state.buffer.sample_achieved(rng); };
  src.uniform = [&maze](Rng& rng) { return env::sample_uniform_state_space(maze, rng); };
  src.desired = maze.desired_outcomes;
  return src;
}

std::optional<double> mean_or_empty(double sum, int count) {
  if (count == 0) return std::nullopt;
  return sum / count;
}

}  // namespace

// --- configuration ----------------------------------------------------------

json TrainConfig::to_json() const {
  json j;
  j["profile"] = profile;
  j["env"] = {{"name", env},
              {"maze_file", maze_file},
              {"horizon", horizon},
              {"success_radius", success_radius},
              {"max_speed", max_speed},
              {"max_turn_rate", max_turn_rate}};
  j["train"] = {{"iterations", iterations},
                {"rollouts_per_iteration", rollouts_per_iteration},
                {"updates_per_iteration", updates_per_iteration},
                {"replay_capacity", replay_capacity},
                {"rollout_threads", rollout_threads},
                {"seed", seed},
                {"output_dir", output_dir},
                {"reward", to_name(kRewardNames, reward)}};
  j["classifier"] = {{"heads", ensemble.heads},
                     {"trunk_hidden", ensemble.trunk_hidden},
                     {"head_hidden", ensemble.head_hidden},
                     {"lambda", ensemble.lambda},
                     {"noise_scale", ensemble.noise_scale},
                     {"p_min", ensemble.p_min},
                     {"conditional", ensemble.conditional},
                     {"learning_rate", classifier.learning_rate},
                     {"negatives", classifier.negatives},
                     {"positives", classifier.positives},
                     {"target", classifier.target},
                     {"goal_source", to_name(kGoalSourceNames, classifier.goal_source)},
                     {"mi_goal_mode", to_name(kMiModeNames, classifier.mi_goal_mode)},
                     {"update_frequency", classifier_update_frequency},
                     {"frequency_unit", to_name(kUnitNames, classifier_frequency_unit)},
                     {"iterations_per_update", classifier_iterations_per_update}};
  j["sac"] = {{"actor_hidden", sac.actor_hidden},
              {"critic_hidden", sac.critic_hidden},
              {"gamma", sac.gamma},
              {"tau", sac.tau},
              {"init_temperature", sac.init_temperature},
              {"actor_lr", sac.actor_lr},
              {"critic_lr", sac.critic_lr},
              {"alpha_lr", sac.alpha_lr},
              {"batch_size", sac.batch_size},
              {"actor_update_frequency", sac.actor_update_frequency},
              {"target_update_frequency", sac.target_update_frequency},
              {"target_entropy", sac.target_entropy},
              {"log_std_min", sac.log_std_min},
              {"log_std_max", sac.log_std_max},
              {"relabel_ratio", sac.relabel_ratio},
              {"learn_temperature", sac.learn_temperature},
              {"timeout_is_terminal", sac.timeout_is_terminal}};
  j["curriculum"] = {{"enabled", curriculum},
                     {"candidates", curriculum_candidates},
                     {"recent_window", curriculum_recent_window},
                     {"cost", to_name(kCostNames, curriculum_cost)},
                     {"dump_matching", dump_matching}};
  j["goal_switch"] = {{"enabled", goal_switching},
                      {"probes", goal_switch.probes},
                      {"radius_factor", goal_switch_radius_factor},
                      {"conditioning", to_name(kProbeNames, goal_switch.conditioning)}};
  j["eval"] = {{"every", eval_every}, {"episodes_per_goal", eval_episodes_per_goal}};
  return j;
}

TrainConfig profile_config(const std::string& name) {
  TrainConfig c;
  if (name == "paper-default") {
    c.profile = name;
    c.ensemble.trunk_hidden = {512, 512, 512};
    return c;
  }
  if (name == "desk-scale") {
    c.profile = name;
    c.env = "test-umaze";
    c.iterations = 200;
    c.replay_capacity = 200000;
    c.sac.actor_hidden = {128, 128, 128};
    c.sac.critic_hidden = {128, 128, 128};
    c.sac.batch_size = 128;
    c.ensemble.trunk_hidden = {128, 128};
    c.ensemble.noise_scale = 0.5;
    c.classifier.negatives = 128;
    c.classifier.positives = 128;
    c.classifier.target = 128;
    c.classifier_update_frequency = 240;
    c.classifier_iterations_per_update = 16;
    c.curriculum_candidates = 500;
    return c;
  }
  throw ConfigError("config: unknown profile '" + name + "' (available: paper-default, desk-scale)");
}

std::vector<std::string> profile_names() { return {"paper-default", "desk-scale"}; }

TrainConfig apply_config(TrainConfig base, const json& overrides) {
  json merged = base.to_json();
  merge_checked(merged, overrides, "");
  try {
    return from_json(merged);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

TrainConfig load_config(const std::filesystem::path& path, const std::string& fallback_profile) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level of " + path.string() + " must be an object");
  std::string profile = fallback_profile;
  if (j.contains("profile")) {
    if (!j["profile"].is_string()) throw ConfigError("config: 'profile' expected string");
    profile = j["profile"].get<std::string>();
  }
  return apply_config(profile_config(profile), j);
}

void apply_environment_overrides(TrainConfig& config) {
  if (const char* s = std::getenv("D2C_SEED"); s && *s) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0') throw ConfigError(std::string("D2C_SEED is not an unsigned integer: ") + s);
    config.seed = v;
  }
  if (const char* d = std::getenv("D2C_OUTPUT_DIR"); d && *d) config.output_dir = d;
}

env::MazeSpec make_maze(const TrainConfig& config) {
  env::MazeSpec maze = config.maze_file.empty() ? env::preset(config.env) : env::load_maze(config.maze_file);
  if (config.horizon > 0) maze.horizon = config.horizon;
  maze.success_radius = config.success_radius;
  maze.max_speed = config.max_speed;
  maze.max_turn_rate = config.max_turn_rate;
  maze.validate();
  if (maze.desired_outcomes.empty()) throw ConfigError("maze '" + maze.name + "' has no desired outcomes");
  return maze;
}

// --- run state --------------------------------------------------------------

RunState init_run(const TrainConfig& config, const env::MazeSpec& maze) {
  RunState s;
  Rng init(derive_seed(config.seed, 0));
  s.sac = agent::make_sac(config.sac, init);
  s.ensemble = div::EnsembleModel(div::make_ensemble(config.ensemble, {maze.half_width(), maze.half_height()}, init),
                                  config.classifier.learning_rate);
  s.buffer = agent::ReplayBuffer(config.replay_capacity);
  s.env_rng = Rng(derive_seed(config.seed, 1));
  s.agent_rng = Rng(derive_seed(config.seed, 2));
  s.classifier_rng = Rng(derive_seed(config.seed, 3));
  s.curriculum_rng = Rng(derive_seed(config.seed, 4));
  return s;
}

std::int64_t crossings(std::int64_t before, std::int64_t after, std::int64_t frequency) {
  if (frequency <= 0) throw std::invalid_argument("crossings: frequency must be positive");
  return after / frequency - before / frequency;
}

double curriculum_distance(std::span<const Point> proposed, std::span<const Point> desired) {
  if (proposed.size() != desired.size()) {
    throw std::invalid_argument("curriculum_distance: " + std::to_string(proposed.size()) + " proposed vs " +
                                std::to_string(desired.size()) + " desired goals");
  }
  if (desired.empty()) throw std::invalid_argument("curriculum_distance: empty sets");
  const auto k = static_cast<Eigen::Index>(desired.size());
  nn::Matrix costs(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      costs(i, j) = env::distance(proposed[static_cast<std::size_t>(i)], desired[static_cast<std::size_t>(j)]);
  return curr::solve_assignment(costs).total_cost / static_cast<double>(k);
}

std::vector<Point> propose_goals(RunState& state, const TrainConfig& config, const env::MazeSpec& maze) {
  const auto& desired = maze.desired_outcomes;
  if (!config.curriculum) {
    std::vector<Point> goals;
    for (std::size_t k = 0; k < desired.size(); ++k)
      goals.push_back(desired[static_cast<std::size_t>(state.curriculum_rng.index(desired.size()))]);
    return goals;
  }
  const std::size_t count = state.buffer.achieved_count();
  if (count < desired.size()) {
    // Nothing explored yet: start from the initial state.
    return std::vector<Point>(desired.size(), env::goal_projection(env::reset(maze)));
  }
  curr::PointSource source;
  const std::size_t window = config.curriculum_recent_window;
  const std::size_t size = window > 0 ? std::min(window, count) : count;
  const std::size_t offset = count - size;
  source.size = size;
  source.at = [&state, offset](std::size_t i) { return state.buffer.achieved(offset + i); };
  curr::CostOptions options;
  if (config.curriculum_cost == CostMode::value_biased) {
    options.start = env::reset(maze);
    options.value = [&state, &config, &maze](const env::EnvState& s0, Point g) {
      return agent::state_value(state.sac, config.sac, maze, s0, g);
    };
  }
  auto proposal = curr::propose_curriculum(state.ensemble.params, source, desired, config.curriculum_candidates,
                                           state.curriculum_rng, options);
  if (config.dump_matching && !config.output_dir.empty()) {
    const auto dir = std::filesystem::path(config.output_dir) / "matching";
    std::filesystem::create_directories(dir);
    char stem[32];
    std::snprintf(stem, sizeof stem, "iter_%05d", state.iteration);
    std::ofstream costs(dir / (std::string(stem) + "_costs.csv"));
    curr::write_problem_csv(costs, proposal.problem);
    std::ofstream assignment(dir / (std::string(stem) + "_assignment.csv"));
    curr::write_result_csv(assignment, proposal.problem, proposal.match);
  }
  return proposal.goals;
}

agent::Episode rollout(const RunState& state, const TrainConfig& config, const env::MazeSpec& maze, Point goal,
                       std::uint64_t seed) {
  Rng rng(seed);
  agent::GoalSwitchOptions switch_options = config.goal_switch;
  switch_options.radius = config.goal_switch_radius_factor * maze.success_radius;
  agent::Episode episode;
  env::EnvState s = env::reset(maze);
  Point g = goal;
  for (int t = 0; t < maze.horizon; ++t) {
    if (config.goal_switching && env::is_success(s, g, maze)) {
      g = agent::goal_switch(state.ensemble.params, maze, s, g, rng, switch_options);
    }
    const env::Action a = agent::act(state.sac, config.sac, maze, s, g, agent::ActMode::stochastic, rng);
    const env::StepResult next = env::step(s, a, maze);
    episode.transitions.push_back({s, env::clip(a, maze), g, next.state, next.terminal});
    s = next.state;
    if (next.terminal) break;
  }
  return episode;
}

void continue_training(RunState& state, const TrainConfig& config, const env::MazeSpec& maze,
                       std::vector<metrics::MetricsRow>& rows, const MetricsCallback& on_row) {
  const auto& desired = maze.desired_outcomes;
  const int rollouts = config.rollouts_per_iteration > 0 ? config.rollouts_per_iteration
                                                         : static_cast<int>(desired.size());
  const int updates = config.updates_per_iteration > 0 ? config.updates_per_iteration : rollouts * maze.horizon;
  const agent::RewardFn reward = config.reward == RewardMode::intrinsic
                                     ? agent::make_intrinsic_reward(state.ensemble.params)
                                     : agent::make_sparse_reward(maze.success_radius);
  const div::SampleSources sources = make_sources(state, maze);

  while (state.iteration < config.iterations) {
    try {
      metrics::MetricsRow row;
      row.iter = state.iteration;

      const std::vector<Point> proposal = propose_goals(state, config, maze);
      state.last_goals = proposal;
      row.curr_dist = curriculum_distance(proposal, desired);

      // Seeds are drawn up front so parallel and sequential rollouts agree.
      std::vector<std::uint64_t> seeds(static_cast<std::size_t>(rollouts));
      for (auto& sd : seeds) sd = state.env_rng.next_u64();
      std::vector<agent::Episode> episodes(static_cast<std::size_t>(rollouts));
      auto run_one = [&](int i) {
        episodes[static_cast<std::size_t>(i)] =
            rollout(state, config, maze, proposal[static_cast<std::size_t>(i) % proposal.size()],
                    seeds[static_cast<std::size_t>(i)]);
      };
      if (config.rollout_threads > 1 && rollouts > 1) {
        std::vector<std::jthread> workers;
        const int threads = std::min(config.rollout_threads, rollouts);
        for (int w = 0; w < threads; ++w) {
          workers.emplace_back([&, w] {
            for (int i = w; i < rollouts; i += threads) run_one(i);
          });
        }
      } else {
        for (int i = 0; i < rollouts; ++i) run_one(i);
      }

      // Mean intrinsic reward of the collected transitions under the current ensemble.
      {
        std::vector<Point> achieved;
        std::vector<Point> goals;
        for (const auto& e : episodes) {
          for (const auto& t : e.transitions) {
            achieved.push_back(env::goal_projection(t.next_state));
            goals.push_back(t.goal);
          }
        }
        if (!achieved.empty()) {
          const auto r = div::pseudo_probability_batch(state.ensemble.params, achieved, goals);
          double sum = 0.0;
          for (double v : r) sum += v;
          row.mean_reward = sum / static_cast<double>(r.size());
        }
      }

      const std::int64_t steps_before = state.env_steps;
      const std::int64_t episodes_before = state.episodes;
      for (auto& e : episodes) {
        state.env_steps += static_cast<std::int64_t>(e.transitions.size());
        ++state.episodes;
        state.buffer.add_episode(std::move(e));
      }
      row.steps = state.env_steps;

      const std::int64_t due = config.classifier_frequency_unit == FrequencyUnit::steps
                                   ? crossings(steps_before, state.env_steps, config.classifier_update_frequency)
                                   : crossings(episodes_before, state.episodes, config.classifier_update_frequency);

      double clf_sum = 0.0;
      int clf_count = 0;
      double critic_sum = 0.0;
      double actor_sum = 0.0;
      double alpha_sum = 0.0;
      int sac_count = 0;
      int actor_count = 0;
      std::int64_t clf_done = 0;
      auto run_classifier = [&] {
        clf_sum += div::update_ensemble(state.ensemble, sources, config.classifier, state.classifier_rng,
                                        config.classifier_iterations_per_update);
        ++clf_count;
        ++clf_done;
        ++state.classifier_updates;
      };
      for (int u = 0; u < updates; ++u) {
        // Classifier updates are spread evenly over the SAC updates.
        while (clf_done < due && clf_done * updates / due <= u) run_classifier();
        if (state.buffer.transition_count() < static_cast<std::size_t>(config.sac.batch_size)) continue;
        const auto d = agent::sac_update(state.sac, config.sac, maze, reward, state.buffer, state.agent_rng);
        critic_sum += d.critic_loss;
        alpha_sum += d.alpha;
        ++sac_count;
        if (d.actor_updated) {
          actor_sum += d.actor_loss;
          ++actor_count;
        }
      }
      while (clf_done < due) run_classifier();

      row.clf_loss = mean_or_empty(clf_sum, clf_count);
      row.critic_loss = mean_or_empty(critic_sum, sac_count);
      row.actor_loss = mean_or_empty(actor_sum, actor_count);
      row.alpha = mean_or_empty(alpha_sum, sac_count);

      if (config.eval_every > 0 && (state.iteration + 1) % config.eval_every == 0) {
        row.success = evaluate(state, config, maze, config.eval_episodes_per_goal).success_rate;
      }

      ++state.iteration;
      rows.push_back(row);
      if (on_row) on_row(row);
    } catch (const std::exception& e) {
      throw std::runtime_error("training failed at iteration " + std::to_string(state.iteration) + " (env step " +
                               std::to_string(state.env_steps) + "): " + e.what());
    }
  }
}

TrainResult train(const TrainConfig& config) {
  const env::MazeSpec maze = make_maze(config);
  TrainResult result{init_run(config, maze), {}};
  std::optional<metrics::MetricsWriter> writer;
  if (!config.output_dir.empty()) {
    std::filesystem::create_directories(config.output_dir);
    const auto path = std::filesystem::path(config.output_dir) / "metrics.csv";
    std::filesystem::remove(path);
    writer.emplace(path);
  }
  continue_training(result.state, config, maze, result.metrics, [&](const metrics::MetricsRow& row) {
    if (writer) writer->write(row);
  });
  if (!config.output_dir.empty()) {
    save_checkpoint(std::filesystem::path(config.output_dir) / "checkpoint", result.state, config);
  }
  return result;
}

// --- evaluation -------------------------------------------------------------

EvalResult evaluate_policy(const env::MazeSpec& maze, std::span<const Point> desired, const PolicyFn& policy,
                           int episodes_per_goal, Rng& rng) {
  EvalResult result;
  if (desired.empty() || episodes_per_goal <= 0) return result;
  int total = 0;
  for (const Point g : desired) {
    int hits = 0;
    for (int e = 0; e < episodes_per_goal; ++e) {
      env::EnvState s = env::reset(maze);
      bool reached = env::is_success(s, g, maze);
      for (int t = 0; t < maze.horizon && !reached; ++t) {
        const auto next = env::step(s, policy(s, g, rng), maze);
        s = next.state;
        reached = env::is_success(s, g, maze);
        if (next.terminal) break;
      }
      hits += reached ? 1 : 0;
    }
    result.per_goal.push_back(static_cast<double>(hits) / episodes_per_goal);
    total += hits;
  }
  result.success_rate = static_cast<double>(total) / (static_cast<double>(episodes_per_goal) * desired.size());
  return result;
}

EvalResult evaluate(const RunState& state, const TrainConfig& config, const env::MazeSpec& maze,
                    int episodes_per_goal) {
  Rng unused(0);
  const PolicyFn policy = [&](const env::EnvState& s, Point g, Rng& rng) {
    return agent::act(state.sac, config.sac, maze, s, g, agent::ActMode::deterministic, rng);
  };
  return evaluate_policy(maze, maze.desired_outcomes, policy, episodes_per_goal, unused);
}

PolicyFn random_policy(const env::MazeSpec& maze) {
  return [&maze](const env::EnvState&, Point, Rng& rng) {
    return env::Action{rng.uniform(-maze.max_speed, maze.max_speed), rng.uniform(-maze.max_turn_rate, maze.max_turn_rate)};
  };
}

// --- checkpoint bundle ------------------------------------------------------

namespace {

constexpr int kBundleVersion = 1;

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw std::runtime_error("checkpoint: corrupt rng state");
  return rng;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const RunState& state, const TrainConfig& config) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "sac.bin", std::ios::binary | std::ios::trunc);
    agent::save_sac(os, state.sac);
    if (!os) throw std::runtime_error("checkpoint: failed writing sac.bin");
  }
  {
    std::ofstream os(dir / "ensemble.bin", std::ios::binary | std::ios::trunc);
    div::save_model(os, state.ensemble);
    if (!os) throw std::runtime_error("checkpoint: failed writing ensemble.bin");
  }
  {
    std::ofstream os(dir / "replay.bin", std::ios::binary | std::ios::trunc);
    state.buffer.save(os);
    if (!os) throw std::runtime_error("checkpoint: failed writing replay.bin");
  }
  json goals = json::array();
  for (const auto& g : state.last_goals) goals.push_back({g.x, g.y});
  json manifest = {
      {"format_version", kBundleVersion},
      {"iteration", state.iteration},
      {"env_steps", state.env_steps},
      {"episodes", state.episodes},
      {"classifier_updates", state.classifier_updates},
      {"replay", {{"episodes", state.buffer.episode_count()}, {"transitions", state.buffer.transition_count()},
                  {"capacity", state.buffer.capacity()}}},
      {"rng", {{"env", rng_to_string(state.env_rng)},
               {"agent", rng_to_string(state.agent_rng)},
               {"classifier", rng_to_string(state.classifier_rng)},
               {"curriculum", rng_to_string(state.curriculum_rng)}}},
      {"last_goals", goals},
      {"files", {{"sac", "sac.bin"}, {"ensemble", "ensemble.bin"}, {"replay", "replay.bin"}}},
      {"config", config.to_json()},
  };
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  os << manifest.dump(2) << '\n';
  if (!os) throw std::runtime_error("checkpoint: failed writing manifest.json");
}

RunState load_checkpoint(const std::filesystem::path& dir, TrainConfig* config_out) {
  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw std::runtime_error("checkpoint: no manifest.json in " + dir.string());
  const json manifest = json::parse(ms);
  if (manifest.at("format_version").get<int>() != kBundleVersion) {
    throw std::runtime_error("checkpoint: bundle version " + std::to_string(manifest.at("format_version").get<int>()) +
                             " unsupported (expected " + std::to_string(kBundleVersion) + ")");
  }
  RunState s;
  s.iteration = manifest.at("iteration").get<int>();
  s.env_steps = manifest.at("env_steps").get<std::int64_t>();
  s.episodes = manifest.at("episodes").get<std::int64_t>();
  s.classifier_updates = manifest.at("classifier_updates").get<std::int64_t>();
  const auto& files = manifest.at("files");
  {
    std::ifstream is(dir / files.at("sac").get<std::string>(), std::ios::binary);
    s.sac = agent::load_sac(is);
  }
  {
    std::ifstream is(dir / files.at("ensemble").get<std::string>(), std::ios::binary);
    s.ensemble = div::load_model(is);
  }
  {
    std::ifstream is(dir / files.at("replay").get<std::string>(), std::ios::binary);
    s.buffer = agent::ReplayBuffer::load(is);
  }
  const auto& rng = manifest.at("rng");
  s.env_rng = rng_from_string(rng.at("env").get<std::string>());
  s.agent_rng = rng_from_string(rng.at("agent").get<std::string>());
  s.classifier_rng = rng_from_string(rng.at("classifier").get<std::string>());
  s.curriculum_rng = rng_from_string(rng.at("curriculum").get<std::string>());
  for (const auto& g : manifest.at("last_goals")) s.last_goals.push_back({g.at(0).get<double>(), g.at(1).get<double>()});
  if (config_out) *config_out = apply_config(profile_config("paper-default"), manifest.at("config"));
  return s;
}

}  // namespace d2c::orch
