#pragma once

// Goal-conditioned soft actor-critic trained on a reward recomputed at
// sampling time, with hindsight goal relabelling.

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "d2c/diversify.hpp"
#include "d2c/envs.hpp"
#include "d2c/ndnet.hpp"
#include "d2c/rng.hpp"

namespace d2c::agent {

using env::Action;
using env::EnvState;
using env::MazeSpec;
using env::Point;

struct SacConfig {
  std::vector<int> actor_hidden{512, 512, 512};
  std::vector<int> critic_hidden{512, 512, 512};
  double gamma = 0.99;
  double tau = 0.01;
  double init_temperature = 0.3;
  double actor_lr = 1e-4;
  double critic_lr = 1e-4;
  double alpha_lr = 1e-4;
  int batch_size = 512;
  int actor_update_frequency = 2;
  int target_update_frequency = 2;
  double target_entropy = -static_cast<double>(env::kActionDim);
  double log_std_min = -20.0;
  double log_std_max = 2.0;
  double relabel_ratio = 0.8;
  bool learn_temperature = true;
  /// Horizon cut-offs are time limits; by default they do not stop bootstrapping.
  bool timeout_is_terminal = false;
};

struct SacParams {
  nn::Mlp actor;  // (obs, goal) -> (mean, log-std)
  nn::Mlp critic1;
  nn::Mlp critic2;
  nn::Mlp target1;
  nn::Mlp target2;
  double log_alpha = 0.0;
  nn::AdamState actor_adam;
  nn::AdamState critic1_adam;
  nn::AdamState critic2_adam;
  nn::ScalarAdam alpha_adam;
  std::int64_t updates = 0;

  double alpha() const;

  friend bool operator==(const SacParams& a, const SacParams& b);
};

SacParams make_sac(const SacConfig& config, Rng& rng);

inline constexpr int kPolicyInputDim = env::kObservationDim + env::kGoalDim;
inline constexpr int kCriticInputDim = kPolicyInputDim + env::kActionDim;

struct Transition {
  EnvState state;
  Action action;
  Point goal;
  EnvState next_state;
  bool terminal = false;

  friend bool operator==(const Transition&, const Transition&) = default;
};

struct Episode {
  std::vector<Transition> transitions;

  /// phi of every visited state: s_0, s_1, ..., s_T.
  std::vector<Point> achieved() const;

  friend bool operator==(const Episode&, const Episode&) = default;
};

/// Whole-episode ring buffer with oldest-first eviction.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 200000);

  void add_episode(Episode episode);

  std::size_t capacity() const { return capacity_; }
  std::size_t transition_count() const { return transitions_; }
  std::size_t episode_count() const { return episodes_.size(); }
  const Episode& episode(std::size_t i) const { return episodes_[i]; }
  std::uint64_t episodes_added() const { return added_; }

  struct Ref {
    std::size_t episode = 0;
    std::size_t step = 0;
  };
  Ref sample_ref(Rng& rng) const;
  const Transition& at(const Ref& ref) const { return episodes_[ref.episode].transitions[ref.step]; }

  /// Achieved goal-space points, T + 1 per stored episode.
  std::size_t achieved_count() const { return achieved_total_; }
  Point achieved(std::size_t i) const;
  Point sample_achieved(Rng& rng) const;

  friend bool operator==(const ReplayBuffer&, const ReplayBuffer&) = default;

  void save(std::ostream& os) const;
  static ReplayBuffer load(std::istream& is);

 private:
  void rebuild_index();

  std::size_t capacity_;
  std::deque<Episode> episodes_;
  std::vector<std::size_t> transition_offsets_;  // prefix sums, size = episodes + 1
  std::vector<std::size_t> achieved_offsets_;
  std::size_t transitions_ = 0;
  std::size_t achieved_total_ = 0;
  std::uint64_t added_ = 0;
};

enum class ActMode { stochastic, deterministic };

Action act(const SacParams& params, const SacConfig& config, const MazeSpec& spec, const EnvState& state, Point goal,
           ActMode mode, Rng& rng);

/// Pseudo probability of phi(next_state) conditioned on goal.
double intrinsic_reward(const div::EnsembleParams& ensemble, const EnvState& next_state, Point goal);

/// Batched reward over (achieved, goal) pairs.
using RewardFn = std::function<std::vector<double>(std::span<const Point> achieved, std::span<const Point> goals)>;

RewardFn make_intrinsic_reward(const div::EnsembleParams& ensemble);
RewardFn make_sparse_reward(double success_radius);

struct SampledTransition {
  Transition transition;
  ReplayBuffer::Ref ref;
};

std::vector<SampledTransition> sample_transitions(const ReplayBuffer& buffer, std::size_t count, Rng& rng);

/// With probability `ratio`, replaces the goal by phi of a uniformly chosen
/// future state of the same episode ("future" strategy).
std::vector<SampledTransition> relabel(std::vector<SampledTransition> batch, const ReplayBuffer& buffer, Rng& rng,
                                       double ratio);

struct SacDiagnostics {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  double mean_reward = 0.0;
  bool actor_updated = false;
};

/// One SAC step on a relabelled batch; throws if a reward leaves [0, 1] or a
/// TD target is non-finite.
SacDiagnostics sac_update(SacParams& params, const SacConfig& config, const MazeSpec& spec, const RewardFn& reward,
                          const ReplayBuffer& buffer, Rng& rng);

/// Same update on a caller-provided batch (already relabelled).
SacDiagnostics sac_update_batch(SacParams& params, const SacConfig& config, const MazeSpec& spec,
                                const RewardFn& reward, std::span<const SampledTransition> batch, Rng& rng);

enum class ProbeConditioning { self, original_goal };

struct GoalSwitchOptions {
  int probes = 10;
  double radius = 3.0;
  ProbeConditioning conditioning = ProbeConditioning::self;
};

/// Samples probes uniformly in a disc around phi(state) and returns the one
/// with the highest pseudo probability; ties keep the lowest index.
Point goal_switch(const div::EnsembleParams& ensemble, const MazeSpec& spec, const EnvState& state, Point current_goal,
                  Rng& rng, const GoalSwitchOptions& options);

/// min(Q1, Q2) at the deterministic action: V(start, goal) for the
/// value-biased curriculum cost.
double state_value(const SacParams& params, const SacConfig& config, const MazeSpec& spec, const EnvState& start,
                   Point goal);

void save_sac(std::ostream& os, const SacParams& params);
SacParams load_sac(std::istream& is);

}  // namespace d2c::agent
