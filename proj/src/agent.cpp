#include "d2c/agent.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

namespace d2c::agent {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;
constexpr double kTanhEpsilon = 1e-6;

void fill_policy_input(nn::Matrix& x, Eigen::Index col, const MazeSpec& spec, const EnvState& s, Point goal) {
  const auto obs = env::observe(s, spec);
  for (int r = 0; r < env::kObservationDim; ++r) x(r, col) = obs[static_cast<std::size_t>(r)];
  x(env::kObservationDim, col) = goal.x / spec.half_width();
  x(env::kObservationDim + 1, col) = goal.y / spec.half_height();
}

nn::Matrix concat_rows(const nn::Matrix& a, const nn::Matrix& b) {
  nn::Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

struct PolicySample {
  nn::Matrix mean;
  nn::Matrix log_std;      // clamped
  nn::Matrix clamp_mask;   // 1 where log-std was not clamped
  nn::Matrix noise;
  nn::Matrix action;       // tanh-squashed, in [-1, 1]
  Eigen::RowVectorXd log_prob;
};

PolicySample sample_policy(const nn::Matrix& head, const SacConfig& config, Rng& rng) {
  const Eigen::Index dim = env::kActionDim;
  const Eigen::Index n = head.cols();
  PolicySample p;
  p.mean = head.topRows(dim);
  const nn::Matrix raw = head.bottomRows(dim);
  p.log_std = raw.cwiseMax(config.log_std_min).cwiseMin(config.log_std_max);
  p.clamp_mask = ((raw.array() >= config.log_std_min) && (raw.array() <= config.log_std_max)).cast<double>();
  p.noise.resize(dim, n);
  for (Eigen::Index c = 0; c < n; ++c)
    for (Eigen::Index r = 0; r < dim; ++r) p.noise(r, c) = rng.normal();
  const nn::Matrix u = p.mean.array() + p.log_std.array().exp() * p.noise.array();
  p.action = u.array().tanh();
  p.log_prob = (-0.5 * p.noise.array().square() - p.log_std.array() - kHalfLog2Pi -
                (1.0 - p.action.array().square() + kTanhEpsilon).log())
                   .colwise()
                   .sum();
  return p;
}

Action scale_action(const MazeSpec& spec, double a0, double a1) {
  return {a0 * spec.max_speed, a1 * spec.max_turn_rate};
}

nn::Matrix normalized_actions(const MazeSpec& spec, std::span<const SampledTransition> batch) {
  nn::Matrix a(env::kActionDim, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    a(0, static_cast<Eigen::Index>(k)) = batch[k].transition.action.linear / spec.max_speed;
    a(1, static_cast<Eigen::Index>(k)) = batch[k].transition.action.angular / spec.max_turn_rate;
  }
  return a;
}

}  // namespace

double SacParams::alpha() const { return std::exp(log_alpha); }

bool operator==(const SacParams& a, const SacParams& b) {
  return a.actor == b.actor && a.critic1 == b.critic1 && a.critic2 == b.critic2 && a.target1 == b.target1 &&
         a.target2 == b.target2 && a.log_alpha == b.log_alpha && a.actor_adam == b.actor_adam &&
         a.critic1_adam == b.critic1_adam && a.critic2_adam == b.critic2_adam &&
         a.alpha_adam.first_moment == b.alpha_adam.first_moment &&
         a.alpha_adam.second_moment == b.alpha_adam.second_moment && a.alpha_adam.step == b.alpha_adam.step &&
         a.updates == b.updates;
}

SacParams make_sac(const SacConfig& config, Rng& rng) {
  if (!(config.init_temperature > 0.0)) throw std::invalid_argument("SAC initial temperature must be positive");
  SacParams p;
  std::vector<int> actor_dims{kPolicyInputDim};
  actor_dims.insert(actor_dims.end(), config.actor_hidden.begin(), config.actor_hidden.end());
  actor_dims.push_back(2 * env::kActionDim);
  p.actor = nn::make_mlp(actor_dims, nn::OutputActivation::squashed_gaussian, rng);
  std::vector<int> critic_dims{kCriticInputDim};
  critic_dims.insert(critic_dims.end(), config.critic_hidden.begin(), config.critic_hidden.end());
  critic_dims.push_back(1);
  p.critic1 = nn::make_mlp(critic_dims, nn::OutputActivation::identity, rng);
  p.critic2 = nn::make_mlp(critic_dims, nn::OutputActivation::identity, rng);
  p.target1 = p.critic1;
  p.target2 = p.critic2;
  p.log_alpha = std::log(config.init_temperature);
  p.actor_adam = nn::AdamState(p.actor, {.learning_rate = config.actor_lr});
  p.critic1_adam = nn::AdamState(p.critic1, {.learning_rate = config.critic_lr});
  p.critic2_adam = nn::AdamState(p.critic2, {.learning_rate = config.critic_lr});
  p.alpha_adam.config.learning_rate = config.alpha_lr;
  return p;
}

// --- episodes and replay --------------------------------------------------

std::vector<Point> Episode::achieved() const {
  std::vector<Point> out;
  if (transitions.empty()) return out;
  out.reserve(transitions.size() + 1);
  out.push_back(env::goal_projection(transitions.front().state));
  for (const auto& t : transitions) out.push_back(env::goal_projection(t.next_state));
  return out;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
  rebuild_index();
}

void ReplayBuffer::add_episode(Episode episode) {
  if (episode.transitions.empty()) return;
  if (episode.transitions.size() > capacity_) throw std::invalid_argument("episode longer than replay capacity");
  transitions_ += episode.transitions.size();
  episodes_.push_back(std::move(episode));
  ++added_;
  while (transitions_ > capacity_) {
    transitions_ -= episodes_.front().transitions.size();
    episodes_.pop_front();
  }
  rebuild_index();
}

void ReplayBuffer::rebuild_index() {
  transition_offsets_.assign(1, 0);
  achieved_offsets_.assign(1, 0);
  for (const auto& e : episodes_) {
    transition_offsets_.push_back(transition_offsets_.back() + e.transitions.size());
    achieved_offsets_.push_back(achieved_offsets_.back() + e.transitions.size() + 1);
  }
  achieved_total_ = achieved_offsets_.back();
}

ReplayBuffer::Ref ReplayBuffer::sample_ref(Rng& rng) const {
  if (transitions_ == 0) throw std::runtime_error("sample from empty replay buffer");
  const std::size_t flat = static_cast<std::size_t>(rng.index(transitions_));
  const auto it = std::upper_bound(transition_offsets_.begin(), transition_offsets_.end(), flat);
  const auto e = static_cast<std::size_t>(std::distance(transition_offsets_.begin(), it)) - 1;
  return {e, flat - transition_offsets_[e]};
}

Point ReplayBuffer::achieved(std::size_t i) const {
  if (i >= achieved_total_) throw std::out_of_range("achieved index out of range");
  const auto it = std::upper_bound(achieved_offsets_.begin(), achieved_offsets_.end(), i);
  const auto e = static_cast<std::size_t>(std::distance(achieved_offsets_.begin(), it)) - 1;
  const std::size_t k = i - achieved_offsets_[e];
  const auto& tr = episodes_[e].transitions;
  return k == 0 ? env::goal_projection(tr.front().state) : env::goal_projection(tr[k - 1].next_state);
}

Point ReplayBuffer::sample_achieved(Rng& rng) const {
  if (achieved_total_ == 0) throw std::runtime_error("sample from empty replay buffer");
  return achieved(static_cast<std::size_t>(rng.index(achieved_total_)));
}

std::vector<SampledTransition> sample_transitions(const ReplayBuffer& buffer, std::size_t count, Rng& rng) {
  std::vector<SampledTransition> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto ref = buffer.sample_ref(rng);
    out.push_back({buffer.at(ref), ref});
  }
  return out;
}

std::vector<SampledTransition> relabel(std::vector<SampledTransition> batch, const ReplayBuffer& buffer, Rng& rng,
                                       double ratio) {
  for (auto& item : batch) {
    if (!(ratio > 0.0) || !rng.bernoulli(ratio)) continue;
    const auto& tr = buffer.episode(item.ref.episode).transitions;
    const std::size_t t = item.ref.step;
    // Future states s_{t+1} .. s_T are the next states of transitions t .. T-1.
    const std::size_t future = t + static_cast<std::size_t>(rng.index(tr.size() - t));
    item.transition.goal = env::goal_projection(tr[future].next_state);
  }
  return batch;
}

// --- acting ---------------------------------------------------------------

Action act(const SacParams& params, const SacConfig& config, const MazeSpec& spec, const EnvState& state, Point goal,
           ActMode mode, Rng& rng) {
  nn::Matrix x(kPolicyInputDim, 1);
  fill_policy_input(x, 0, spec, state, goal);
  const nn::Matrix head = nn::forward_batch(params.actor, x);
  if (mode == ActMode::deterministic) {
    return scale_action(spec, std::tanh(head(0, 0)), std::tanh(head(1, 0)));
  }
  const PolicySample s = sample_policy(head, config, rng);
  return scale_action(spec, s.action(0, 0), s.action(1, 0));
}

double intrinsic_reward(const div::EnsembleParams& ensemble, const EnvState& next_state, Point goal) {
  return div::pseudo_probability(ensemble, env::goal_projection(next_state), goal);
}

RewardFn make_intrinsic_reward(const div::EnsembleParams& ensemble) {
  return [&ensemble](std::span<const Point> achieved, std::span<const Point> goals) {
    return div::pseudo_probability_batch(ensemble, achieved, goals);
  };
}

RewardFn make_sparse_reward(double success_radius) {
  return [success_radius](std::span<const Point> achieved, std::span<const Point> goals) {
    std::vector<double> r(achieved.size());
    for (std::size_t k = 0; k < achieved.size(); ++k) r[k] = env::distance(achieved[k], goals[k]) <= success_radius;
    return r;
  };
}

// --- SAC update -----------------------------------------------------------

SacDiagnostics sac_update(SacParams& params, const SacConfig& config, const MazeSpec& spec, const RewardFn& reward,
                          const ReplayBuffer& buffer, Rng& rng) {
  auto batch = sample_transitions(buffer, static_cast<std::size_t>(config.batch_size), rng);
  batch = relabel(std::move(batch), buffer, rng, config.relabel_ratio);
  return sac_update_batch(params, config, spec, reward, batch, rng);
}

SacDiagnostics sac_update_batch(SacParams& params, const SacConfig& config, const MazeSpec& spec,
                                const RewardFn& reward, std::span<const SampledTransition> batch, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) throw std::invalid_argument("sac_update: empty batch");
  const double inv_n = 1.0 / static_cast<double>(n);

  nn::Matrix x(kPolicyInputDim, n);
  nn::Matrix x_next(kPolicyInputDim, n);
  std::vector<Point> achieved(batch.size());
  std::vector<Point> goals(batch.size());
  Eigen::RowVectorXd not_done(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Transition& t = batch[static_cast<std::size_t>(k)].transition;
    fill_policy_input(x, k, spec, t.state, t.goal);
    fill_policy_input(x_next, k, spec, t.next_state, t.goal);
    achieved[static_cast<std::size_t>(k)] = env::goal_projection(t.next_state);
    goals[static_cast<std::size_t>(k)] = t.goal;
    not_done(k) = (config.timeout_is_terminal && t.terminal) ? 0.0 : 1.0;
  }
  const std::vector<double> rewards = reward(achieved, goals);
  if (rewards.size() != batch.size()) throw std::runtime_error("sac_update: reward batch length mismatch");
  SacDiagnostics diag;
  Eigen::RowVectorXd r(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double v = rewards[static_cast<std::size_t>(k)];
    if (!(v >= 0.0 && v <= 1.0)) throw std::runtime_error("sac_update: reward outside [0, 1]: " + std::to_string(v));
    r(k) = v;
    diag.mean_reward += v * inv_n;
  }

  const double alpha = params.alpha();

  // Critic targets.
  const PolicySample next = sample_policy(nn::forward_batch(params.actor, x_next), config, rng);
  const nn::Matrix xc_next = concat_rows(x_next, next.action);
  const nn::Matrix q1_next = nn::forward_batch(params.target1, xc_next);
  const nn::Matrix q2_next = nn::forward_batch(params.target2, xc_next);
  const Eigen::RowVectorXd soft_v = q1_next.row(0).cwiseMin(q2_next.row(0)) - alpha * next.log_prob;
  const Eigen::RowVectorXd target = r + config.gamma * not_done.cwiseProduct(soft_v);
  if (!target.allFinite()) throw std::runtime_error("sac_update: non-finite TD target");

  const nn::Matrix xc = concat_rows(x, normalized_actions(spec, batch));
  auto critic_step = [&](nn::Mlp& critic, nn::AdamState& adam) {
    nn::Tape tape;
    const nn::Matrix q = nn::forward_batch(critic, xc, &tape);
    const Eigen::RowVectorXd err = q.row(0) - target;
    nn::Gradients g = nn::zeros_like(critic);
    nn::backward_batch(critic, tape, 2.0 * inv_n * err, &g);
    nn::adam_step(critic, g, adam);
    return err.squaredNorm() * inv_n;
  };
  diag.critic_loss = 0.5 * (critic_step(params.critic1, params.critic1_adam) +
                            critic_step(params.critic2, params.critic2_adam));
  ++params.updates;

  if (config.actor_update_frequency > 0 && params.updates % config.actor_update_frequency == 0) {
    nn::Tape actor_tape;
    const nn::Matrix head = nn::forward_batch(params.actor, x, &actor_tape);
    const PolicySample pol = sample_policy(head, config, rng);
    const nn::Matrix xa = concat_rows(x, pol.action);
    nn::Tape t1;
    nn::Tape t2;
    const nn::Matrix q1 = nn::forward_batch(params.critic1, xa, &t1);
    const nn::Matrix q2 = nn::forward_batch(params.critic2, xa, &t2);
    const Eigen::RowVectorXd q_min = q1.row(0).cwiseMin(q2.row(0));
    diag.actor_loss = (alpha * pol.log_prob - q_min).sum() * inv_n;

    // d(-min Q)/d action through whichever critic is the minimum.
    Eigen::RowVectorXd up1 = Eigen::RowVectorXd::Zero(n);
    Eigen::RowVectorXd up2 = Eigen::RowVectorXd::Zero(n);
    for (Eigen::Index k = 0; k < n; ++k) (q1(0, k) <= q2(0, k) ? up1 : up2)(k) = -inv_n;
    const nn::Matrix dx1 = nn::backward_batch(params.critic1, t1, up1, nullptr);
    const nn::Matrix dx2 = nn::backward_batch(params.critic2, t2, up2, nullptr);
    const nn::Matrix d_action = (dx1 + dx2).bottomRows(env::kActionDim);

    const auto a = pol.action.array();
    const auto one_minus_a2 = 1.0 - a.square();
    const auto sigma_xi = pol.log_std.array().exp() * pol.noise.array();
    // d log pi / du through the tanh correction term.
    const nn::Matrix dlogp_du = (2.0 * a * one_minus_a2 / (one_minus_a2 + kTanhEpsilon)).matrix();
    const nn::Matrix dq_du = (d_action.array() * one_minus_a2).matrix();
    nn::Matrix d_head(2 * env::kActionDim, n);
    d_head.topRows(env::kActionDim) = alpha * inv_n * dlogp_du + dq_du;
    d_head.bottomRows(env::kActionDim) =
        ((alpha * inv_n * (-1.0 + dlogp_du.array() * sigma_xi) + dq_du.array() * sigma_xi) * pol.clamp_mask.array())
            .matrix();
    nn::Gradients g = nn::zeros_like(params.actor);
    nn::backward_batch(params.actor, actor_tape, d_head, &g);
    nn::adam_step(params.actor, g, params.actor_adam);

    if (config.learn_temperature) {
      const double grad = -(pol.log_prob.array() + config.target_entropy).mean();
      params.log_alpha = params.alpha_adam.update(params.log_alpha, grad);
    }
    diag.actor_updated = true;
  }

  if (config.target_update_frequency > 0 && params.updates % config.target_update_frequency == 0) {
    nn::polyak_blend(params.target1, params.critic1, config.tau);
    nn::polyak_blend(params.target2, params.critic2, config.tau);
  }
  diag.alpha = params.alpha();
  return diag;
}

// --- goal switching and value ---------------------------------------------

Point goal_switch(const div::EnsembleParams& ensemble, const MazeSpec& spec, const EnvState& state, Point current_goal,
                  Rng& rng, const GoalSwitchOptions& options) {
  if (options.probes < 1) throw std::invalid_argument("goal_switch needs at least one probe");
  const Point center = env::goal_projection(state);
  std::vector<Point> probes;
  probes.reserve(static_cast<std::size_t>(options.probes));
  for (int k = 0; k < options.probes; ++k) {
    const double radius = options.radius * std::sqrt(rng.uniform());
    const double angle = 2.0 * std::numbers::pi * rng.uniform();
    Point p{center.x + radius * std::cos(angle), center.y + radius * std::sin(angle)};
    p.x = std::clamp(p.x, -spec.half_width(), spec.half_width());
    p.y = std::clamp(p.y, -spec.half_height(), spec.half_height());
    probes.push_back(p);
  }
  if (probes.size() == 1) return probes.front();
  std::vector<Point> cond = probes;
  if (options.conditioning == ProbeConditioning::original_goal) std::fill(cond.begin(), cond.end(), current_goal);
  const std::vector<double> score = div::pseudo_probability_batch(ensemble, probes, cond);
  std::size_t best = 0;
  for (std::size_t k = 1; k < score.size(); ++k) {
    if (score[k] > score[best]) best = k;
  }
  return probes[best];
}

double state_value(const SacParams& params, const SacConfig& config, const MazeSpec& spec, const EnvState& start,
                   Point goal) {
  (void)config;
  nn::Matrix x(kPolicyInputDim, 1);
  fill_policy_input(x, 0, spec, start, goal);
  const nn::Matrix head = nn::forward_batch(params.actor, x);
  nn::Matrix a(env::kActionDim, 1);
  a << std::tanh(head(0, 0)), std::tanh(head(1, 0));
  const nn::Matrix xc = concat_rows(x, a);
  return std::min(nn::forward_batch(params.critic1, xc)(0, 0), nn::forward_batch(params.critic2, xc)(0, 0));
}

// --- serialization --------------------------------------------------------

namespace {

constexpr std::uint32_t kSacVersion = 1;
constexpr std::uint32_t kBufferVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("agent checkpoint: unexpected end of stream");
  return v;
}

void put_state(std::ostream& os, const EnvState& s) {
  put(os, s.position.x);
  put(os, s.position.y);
  put(os, s.heading);
  put(os, s.linear_velocity);
  put(os, s.angular_velocity);
  put<std::int32_t>(os, s.step);
}

EnvState get_state(std::istream& is) {
  EnvState s;
  s.position.x = get<double>(is);
  s.position.y = get<double>(is);
  s.heading = get<double>(is);
  s.linear_velocity = get<double>(is);
  s.angular_velocity = get<double>(is);
  s.step = get<std::int32_t>(is);
  return s;
}

}  // namespace

void save_sac(std::ostream& os, const SacParams& p) {
  put<std::uint32_t>(os, kSacVersion);
  for (const nn::Mlp* net : {&p.actor, &p.critic1, &p.critic2, &p.target1, &p.target2}) nn::save_mlp(os, *net);
  put(os, p.log_alpha);
  for (const nn::AdamState* a : {&p.actor_adam, &p.critic1_adam, &p.critic2_adam}) nn::save_adam(os, *a);
  put(os, p.alpha_adam.config.learning_rate);
  put(os, p.alpha_adam.config.beta1);
  put(os, p.alpha_adam.config.beta2);
  put(os, p.alpha_adam.config.epsilon);
  put(os, p.alpha_adam.first_moment);
  put(os, p.alpha_adam.second_moment);
  put(os, p.alpha_adam.step);
  put(os, p.updates);
}

SacParams load_sac(std::istream& is) {
  const auto version = get<std::uint32_t>(is);
  if (version != kSacVersion) {
    throw std::runtime_error("SAC checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                             std::to_string(kSacVersion) + ")");
  }
  SacParams p;
  for (nn::Mlp* net : {&p.actor, &p.critic1, &p.critic2, &p.target1, &p.target2}) *net = nn::load_mlp(is);
  p.log_alpha = get<double>(is);
  for (nn::AdamState* a : {&p.actor_adam, &p.critic1_adam, &p.critic2_adam}) *a = nn::load_adam(is);
  p.alpha_adam.config.learning_rate = get<double>(is);
  p.alpha_adam.config.beta1 = get<double>(is);
  p.alpha_adam.config.beta2 = get<double>(is);
  p.alpha_adam.config.epsilon = get<double>(is);
  p.alpha_adam.first_moment = get<double>(is);
  p.alpha_adam.second_moment = get<double>(is);
  p.alpha_adam.step = get<std::int64_t>(is);
  p.updates = get<std::int64_t>(is);
  return p;
}

void ReplayBuffer::save(std::ostream& os) const {
  put<std::uint32_t>(os, kBufferVersion);
  put<std::uint64_t>(os, capacity_);
  put<std::uint64_t>(os, added_);
  put<std::uint64_t>(os, episodes_.size());
  for (const auto& e : episodes_) {
    put<std::uint64_t>(os, e.transitions.size());
    for (const auto& t : e.transitions) {
      put_state(os, t.state);
      put(os, t.action.linear);
      put(os, t.action.angular);
      put(os, t.goal.x);
      put(os, t.goal.y);
      put_state(os, t.next_state);
      put<std::uint8_t>(os, t.terminal ? 1 : 0);
    }
  }
}

ReplayBuffer ReplayBuffer::load(std::istream& is) {
  const auto version = get<std::uint32_t>(is);
  if (version != kBufferVersion) throw std::runtime_error("replay checkpoint: unsupported version");
  ReplayBuffer b(static_cast<std::size_t>(get<std::uint64_t>(is)));
  const auto added = get<std::uint64_t>(is);
  const auto episodes = get<std::uint64_t>(is);
  for (std::uint64_t e = 0; e < episodes; ++e) {
    Episode ep;
    const auto n = get<std::uint64_t>(is);
    ep.transitions.resize(static_cast<std::size_t>(n));
    for (auto& t : ep.transitions) {
      t.state = get_state(is);
      t.action.linear = get<double>(is);
      t.action.angular = get<double>(is);
      t.goal.x = get<double>(is);
      t.goal.y = get<double>(is);
      t.next_state = get_state(is);
      t.terminal = get<std::uint8_t>(is) != 0;
    }
    b.add_episode(std::move(ep));
  }
  b.added_ = added;
  return b;
}

}  // namespace d2c::agent
