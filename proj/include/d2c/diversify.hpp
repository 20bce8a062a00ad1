#pragma once

// Goal-conditioned multi-head classifier ensemble trained to agree on
// labelled source data and to disagree (pairwise mutual information
// minimised) on uniformly drawn target points.

#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "d2c/envs.hpp"
#include "d2c/ndnet.hpp"
#include "d2c/rng.hpp"

namespace d2c::div {

using env::Point;

struct EnsembleConfig {
  int heads = 2;
  std::vector<int> trunk_hidden{256, 256, 256};
  std::vector<int> head_hidden{};
  double lambda = 1.0;
  double noise_scale = 0.5;
  double p_min = 1e-6;
  /// When false the goal input is zeroed: the unconditional classifier used
  /// only to demonstrate curriculum collapse.
  bool conditional = true;
};

struct EnsembleParams {
  nn::Mlp trunk;               // (s, g) -> features, ReLU output
  std::vector<nn::Mlp> heads;  // features -> logit
  double lambda = 1.0;
  double noise_scale = 0.5;
  double p_min = 1e-6;
  bool conditional = true;
  Point input_scale{1.0, 1.0};  // coordinates are divided by this before the trunk

  int head_count() const { return static_cast<int>(heads.size()); }
  void validate() const;

  friend bool operator==(const EnsembleParams&, const EnsembleParams&) = default;
};

EnsembleParams make_ensemble(const EnsembleConfig& config, Point input_scale, Rng& rng);

/// Per-head probabilities f_i(s; g), each in (0, 1).
std::vector<double> head_forward(const EnsembleParams& params, Point s, Point g);

/// Mean of the head outputs.
double pseudo_probability(const EnsembleParams& params, Point s, Point g);
double mean_probability(std::span<const double> head_outputs);

/// heads x batch matrix of probabilities.
nn::Matrix head_probabilities(const EnsembleParams& params, std::span<const Point> s, std::span<const Point> g);
std::vector<double> pseudo_probability_batch(const EnsembleParams& params, std::span<const Point> s,
                                             std::span<const Point> g);

struct MiGradient {
  double value = 0.0;
  std::vector<double> d_first;
  std::vector<double> d_second;
};

/// KL(joint || product of marginals) in nats for two Bernoulli heads, with the
/// joint estimated as the batch mean of outer products. Arguments of every log
/// are floored at p_min.
double mi_loss(std::span<const double> first, std::span<const double> second, double p_min = 1e-6);
MiGradient mi_loss_with_grad(std::span<const double> first, std::span<const double> second, double p_min = 1e-6);

struct ClassifierBatch {
  std::vector<Point> negatives;  // label 0, from the replay buffer
  std::vector<Point> negative_goals;
  std::vector<Point> positives;  // label 1, conditioned goal plus noise
  std::vector<Point> positive_goals;
  std::vector<Point> target_pool;  // unlabelled, uniform over the state space
  std::vector<Point> target_goals;

  void validate() const;
};

struct EnsembleGrads {
  nn::Gradients trunk;
  std::vector<nn::Gradients> heads;
};

struct LossTerms {
  double negative_ce = 0.0;
  double positive_ce = 0.0;
  double mutual_information = 0.0;
  double total = 0.0;
};

struct ClassifierLoss {
  LossTerms terms;
  EnsembleGrads grads;
};

/// sum_i CE(negatives, 0) + sum_i CE(positives, 1) + lambda * sum_{i != j} MI,
/// each term averaged over its samples. Cross-entropies are evaluated from
/// logits.
ClassifierLoss classifier_loss(const EnsembleParams& params, const ClassifierBatch& batch);

/// Distribution of the conditioning goal.
enum class GoalSource {
  uniform_target,       // same as the target pool (default)
  buffer_and_desired,   // half replay-buffer states, half desired examples
  desired,              // desired examples only (unconditional configuration)
};

/// How the conditioning goal is shared across the target pool.
enum class MiGoalMode { shared, per_sample };

struct TrainOptions {
  int negatives = 256;
  int positives = 256;
  int target = 256;
  GoalSource goal_source = GoalSource::uniform_target;
  MiGoalMode mi_goal_mode = MiGoalMode::shared;
  double learning_rate = 1e-3;
};

struct SampleSources {
  std::function<Point(Rng&)> achieved;  // replay buffer
  std::function<Point(Rng&)> uniform;   // target distribution
  std::vector<Point> desired;
};

ClassifierBatch sample_batch(const EnsembleParams& params, const SampleSources& sources, const TrainOptions& options,
                             Rng& rng);

struct EnsembleModel {
  EnsembleParams params;
  nn::AdamState trunk_adam;
  std::vector<nn::AdamState> head_adam;

  EnsembleModel() = default;
  EnsembleModel(EnsembleParams p, double learning_rate);

  friend bool operator==(const EnsembleModel&, const EnsembleModel&) = default;
};

/// One Adam step on every parameter block.
void apply_gradients(EnsembleModel& model, const EnsembleGrads& grads);

/// Runs `iterations` Adam steps on freshly sampled batches; returns the mean
/// total loss (0 when iterations == 0).
double update_ensemble(EnsembleModel& model, const SampleSources& sources, const TrainOptions& options, Rng& rng,
                       int iterations);

// Ensemble checkpoint: u32 version, u32 head count, f64 lambda, noise_scale,
// p_min, u8 conditional, f64 input scale x/y, then trunk and heads in the
// mlp checkpoint format.
void save_ensemble(std::ostream& os, const EnsembleParams& params);
EnsembleParams load_ensemble(std::istream& is);
void save_model(std::ostream& os, const EnsembleModel& model);
EnsembleModel load_model(std::istream& is);

}  // namespace d2c::div
