#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "d2c/metrics.hpp"
#include "d2c/orchestrator.hpp"
#include "d2c/verify.hpp"

namespace fs = std::filesystem;
using namespace d2c;

namespace {

struct TrainArgs {
  std::string config;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::string env;
  std::string output;
  std::optional<int> iterations;
  std::optional<int> threads;
  std::string resume;
};

orch::TrainConfig resolve_config(const TrainArgs& a) {
  orch::TrainConfig c;
  if (!a.config.empty()) {
    c = orch::load_config(a.config, a.profile.empty() ? "paper-default" : a.profile);
  } else {
    c = orch::profile_config(a.profile.empty() ? "paper-default" : a.profile);
  }
  orch::apply_environment_overrides(c);
  if (a.seed) c.seed = *a.seed;
  if (!a.env.empty()) {
    if (fs::exists(a.env)) {
      c.maze_file = a.env;
    } else {
      c.env = a.env;
      c.maze_file.clear();
    }
  }
  if (!a.output.empty()) c.output_dir = a.output;
  if (a.iterations) c.iterations = *a.iterations;
  if (a.threads) c.rollout_threads = *a.threads;
  return c;
}

void print_row(const metrics::MetricsRow& r) {
  std::printf("iter %lld steps %lld curr_dist %s success %s clf_loss %s critic_loss %s alpha %s\n",
              static_cast<long long>(r.iter), static_cast<long long>(r.steps),
              metrics::format_value(r.curr_dist).c_str(), metrics::format_value(r.success).c_str(),
              metrics::format_value(r.clf_loss).c_str(), metrics::format_value(r.critic_loss).c_str(),
              metrics::format_value(r.alpha).c_str());
  std::fflush(stdout);
}

std::vector<env::Point> buffer_points(const agent::ReplayBuffer& buffer, std::size_t max_points) {
  std::vector<env::Point> pts;
  const std::size_t n = buffer.achieved_count();
  const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_points));
  for (std::size_t i = 0; i < n; i += stride) pts.push_back(buffer.achieved(i));
  return pts;
}

void write_snapshot(const orch::RunState& state, const env::MazeSpec& maze, const fs::path& path) {
  metrics::SnapshotInput in;
  in.maze = &maze;
  in.buffer = buffer_points(state.buffer, 4000);
  in.proposed = state.last_goals;
  in.desired = maze.desired_outcomes;
  metrics::render_snapshot(in, path);
}

int run_train(const TrainArgs& a, bool quiet) {
  orch::TrainConfig config;
  orch::RunState state;
  std::vector<metrics::MetricsRow> rows;
  if (!a.resume.empty()) {
    state = orch::load_checkpoint(a.resume, &config);
    orch::apply_environment_overrides(config);
    if (a.iterations) config.iterations = *a.iterations;
    if (!a.output.empty()) config.output_dir = a.output;
  } else {
    config = resolve_config(a);
  }
  const env::MazeSpec maze = orch::make_maze(config);
  std::optional<metrics::MetricsWriter> writer;
  if (!config.output_dir.empty()) {
    fs::create_directories(config.output_dir);
    const fs::path csv = fs::path(config.output_dir) / "metrics.csv";
    if (a.resume.empty()) fs::remove(csv);
    writer.emplace(csv);
    std::ofstream(fs::path(config.output_dir) / "config.json") << config.to_json().dump(2) << '\n';
  }
  if (a.resume.empty()) state = orch::init_run(config, maze);
  orch::continue_training(state, config, maze, rows, [&](const metrics::MetricsRow& r) {
    if (writer) writer->write(r);
    if (!quiet) print_row(r);
  });
  if (!config.output_dir.empty()) {
    orch::save_checkpoint(fs::path(config.output_dir) / "checkpoint", state, config);
    write_snapshot(state, maze, fs::path(config.output_dir) / "snapshot.svg");
  }
  const auto final_eval = orch::evaluate(state, config, maze, config.eval_episodes_per_goal);
  std::printf("final success rate %.6f over %zu desired examples\n", final_eval.success_rate,
              maze.desired_outcomes.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curriculum goal-conditioned RL in 2D mazes"};
  app.require_subcommand(1);

  TrainArgs targs;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train an agent");
  train->add_option("--config", targs.config, "JSON config file");
  train->add_option("--profile", targs.profile, "paper-default | desk-scale");
  train->add_option("--seed", targs.seed, "Random seed");
  train->add_option("--env", targs.env, "Preset maze name or maze file");
  train->add_option("--output", targs.output, "Output directory");
  train->add_option("--iterations", targs.iterations, "Number of outer iterations");
  train->add_option("--threads", targs.threads, "Rollout threads");
  train->add_option("--resume", targs.resume, "Continue from a checkpoint directory");
  train->add_flag("--quiet", quiet, "Do not print per-iteration rows");

  std::string eval_ckpt;
  int eval_episodes = 5;
  bool eval_random = false;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the desired examples");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint directory")->required();
  eval->add_option("--episodes", eval_episodes, "Episodes per desired example");
  eval->add_flag("--random", eval_random, "Evaluate a uniform random policy instead");
  eval->add_option("--seed", eval_seed, "Seed for the random policy");

  metrics::PlotSpec pspec;
  std::vector<std::string> plot_inputs;
  auto* plot = app.add_subcommand("plot", "Plot a metric across seeds");
  plot->add_option("--input", plot_inputs, "metrics.csv files (one per seed)")->required();
  plot->add_option("--column", pspec.column, "Metric column");
  plot->add_option("--smoothing", pspec.smoothing, "Moving-average width");
  plot->add_option("--output", pspec.output, "Output SVG")->required();
  plot->add_option("--title", pspec.title, "Plot title");

  std::string snap_ckpt;
  std::string snap_out;
  auto* snapshot = app.add_subcommand("snapshot", "Render buffer, proposals and desired examples");
  snapshot->add_option("--checkpoint", snap_ckpt, "Checkpoint directory")->required();
  snapshot->add_option("--output", snap_out, "Output SVG")->required();

  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "Run built-in oracle checks");
  verify->add_option("--seed", verify_seed, "Seed for randomized checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return run_train(targs, quiet);
    if (*eval) {
      orch::TrainConfig config;
      const auto state = orch::load_checkpoint(eval_ckpt, &config);
      const auto maze = orch::make_maze(config);
      orch::EvalResult r;
      if (eval_random) {
        Rng rng(eval_seed);
        r = orch::evaluate_policy(maze, maze.desired_outcomes, orch::random_policy(maze), eval_episodes, rng);
      } else {
        r = orch::evaluate(state, config, maze, eval_episodes);
      }
      std::printf("success_rate %.6f\n", r.success_rate);
      for (std::size_t i = 0; i < r.per_goal.size(); ++i) {
        std::printf("goal %zu (%g, %g) %.6f\n", i, maze.desired_outcomes[i].x, maze.desired_outcomes[i].y,
                    r.per_goal[i]);
      }
      return 0;
    }
    if (*plot) {
      for (const auto& p : plot_inputs) pspec.inputs.emplace_back(p);
      metrics::plot(pspec);
      std::printf("wrote %s\n", pspec.output.string().c_str());
      return 0;
    }
    if (*snapshot) {
      orch::TrainConfig config;
      const auto state = orch::load_checkpoint(snap_ckpt, &config);
      write_snapshot(state, orch::make_maze(config), snap_out);
      std::printf("wrote %s\n", snap_out.c_str());
      return 0;
    }
    if (*verify) {
      bool ok = true;
      for (const auto& c : verify::run_all(verify_seed)) {
        std::printf("[%s] %s: %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
        ok = ok && c.passed;
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  std::cerr << app.help();
  return 2;
}
