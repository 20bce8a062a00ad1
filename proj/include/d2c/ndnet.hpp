#pragma once

// Dense multilayer perceptrons with hand-written reverse-mode gradients and
// an Adam optimizer. Batched calls take one sample per column.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "d2c/rng.hpp"

namespace d2c::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Activation applied after the last layer. Hidden layers are always ReLU.
/// `squashed_gaussian` is an identity output whose halves are interpreted as
/// (mean, log-std) by the policy; squashing happens in the agent.
enum class OutputActivation : std::uint32_t {
  identity = 0,
  logistic = 1,
  squashed_gaussian = 2,
  relu = 3,
};

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out

  friend bool operator==(const Layer& a, const Layer& b) {
    return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() &&
           a.bias.size() == b.bias.size() && (a.weight.array() == b.weight.array()).all() &&
           (a.bias.array() == b.bias.array()).all();
  }
};

struct Mlp {
  std::vector<Layer> layers;
  OutputActivation output = OutputActivation::identity;

  int in_dim() const;
  int out_dim() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
  /// Throws std::invalid_argument if consecutive layer shapes do not chain.
  void validate() const;

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

/// Gradients share the parameter layout.
using Gradients = Mlp;

/// dims = {in, hidden..., out}. Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Mlp make_mlp(std::span<const int> dims, OutputActivation output, Rng& rng);
Mlp zeros_like(const Mlp& net);

/// Forward activations kept for the backward pass.
struct Tape {
  std::vector<Matrix> inputs;  // inputs[k] feeds layer k
  std::vector<Matrix> pre;     // pre-activation of layer k
  Matrix output;
};

Vector forward(const Mlp& net, const Vector& input);
Matrix forward_batch(const Mlp& net, const Matrix& input, Tape* tape = nullptr);

/// Accumulates parameter gradients into `grads` (if non-null) and returns the
/// gradient with respect to the batch input. ReLU'(0) is taken as 0.
Matrix backward_batch(const Mlp& net, const Tape& tape, const Matrix& upstream, Gradients* grads);

struct Backprop {
  Gradients params;
  Vector input;
};

/// Single-sample gradient of <upstream, forward(net, input)>.
Backprop backward(const Mlp& net, const Vector& input, const Vector& upstream);

void scale(Gradients& grads, double factor);
void set_zero(Gradients& grads);

/// target <- (1 - tau) * target + tau * source
void polyak_blend(Mlp& target, const Mlp& source, double tau);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  AdamConfig config;
  Mlp first_moment;
  Mlp second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(const Mlp& params, AdamConfig cfg);

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Bias-corrected Adam update in place. Throws std::runtime_error if any
/// parameter becomes non-finite.
void adam_step(Mlp& params, const Gradients& grads, AdamState& state);

/// Adam for a single scalar parameter (used for the SAC temperature).
struct ScalarAdam {
  AdamConfig config;
  double first_moment = 0.0;
  double second_moment = 0.0;
  std::int64_t step = 0;

  double update(double value, double grad);

  friend bool operator==(const ScalarAdam&, const ScalarAdam&) = default;
};

// Checkpoint layout (little-endian):
//   char[8] "D2CMLP\0\0", u32 version (=1), u32 output tag, u32 layer count,
//   then per layer u32 rows, u32 cols, then per layer the weight matrix in
//   column-major order followed by the bias, all as IEEE-754 float64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_mlp(std::ostream& os, const Mlp& net);
Mlp load_mlp(std::istream& is);
void save_mlp(const std::filesystem::path& path, const Mlp& net);
Mlp load_mlp(const std::filesystem::path& path);

void save_adam(std::ostream& os, const AdamState& state);
AdamState load_adam(std::istream& is);

}  // namespace d2c::nn
