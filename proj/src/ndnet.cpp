#include "d2c/ndnet.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace d2c::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

std::string shape_of(const Mlp& net) {
  std::ostringstream os;
  os << "[";
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    if (k) os << ", ";
    os << net.layers[k].weight.rows() << "x" << net.layers[k].weight.cols();
  }
  os << "]";
  return os.str();
}

void apply_output(OutputActivation act, Matrix& z) {
  switch (act) {
    case OutputActivation::logistic:
      z = (1.0 + (-z.array()).exp()).inverse().matrix();
      break;
    case OutputActivation::relu:
      z = z.cwiseMax(0.0);
      break;
    case OutputActivation::identity:
    case OutputActivation::squashed_gaussian:
      break;
  }
}

}  // namespace

int Mlp::in_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }

int Mlp::out_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

bool Mlp::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

void Mlp::validate() const {
  if (layers.empty()) throw std::invalid_argument("mlp has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].bias.size() != layers[k].weight.rows()) {
      throw std::invalid_argument("mlp layer " + std::to_string(k) + " bias length " +
                                  std::to_string(layers[k].bias.size()) + " != rows " +
                                  std::to_string(layers[k].weight.rows()));
    }
    if (k > 0 && layers[k].weight.cols() != layers[k - 1].weight.rows()) {
      throw std::invalid_argument("mlp layer dims do not chain: " + shape_of(*this));
    }
  }
}

Mlp make_mlp(std::span<const int> dims, OutputActivation output, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp needs at least {in, out}");
  Mlp net;
  net.output = output;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const int in = dims[k];
    const int out = dims[k + 1];
    if (in <= 0 || out <= 0) throw std::invalid_argument("make_mlp: non-positive layer width");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Layer layer{Matrix(out, in), Vector(out)};
    // Explicit loops fix the draw order.
    for (int c = 0; c < in; ++c)
      for (int r = 0; r < out; ++r) layer.weight(r, c) = rng.uniform(-bound, bound);
    for (int r = 0; r < out; ++r) layer.bias(r) = rng.uniform(-bound, bound);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Mlp zeros_like(const Mlp& net) {
  Mlp z;
  z.output = net.output;
  z.layers.reserve(net.layers.size());
  for (const auto& l : net.layers) {
    z.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  return z;
}

Vector forward(const Mlp& net, const Vector& input) {
  Matrix x = input;
  return forward_batch(net, x).col(0);
}

Matrix forward_batch(const Mlp& net, const Matrix& input, Tape* tape) {
  if (net.layers.empty()) throw std::invalid_argument("forward on empty mlp");
  if (input.rows() != net.in_dim()) {
    throw std::invalid_argument("forward: input length " + std::to_string(input.rows()) +
                                " != first-layer in-dim " + std::to_string(net.in_dim()) + " for " +
                                shape_of(net));
  }
  if (tape) {
    tape->inputs.resize(net.layers.size());
    tape->pre.resize(net.layers.size());
  }
  Matrix x = input;
  const std::size_t last = net.layers.size() - 1;
  for (std::size_t k = 0; k <= last; ++k) {
    const Layer& l = net.layers[k];
    Matrix z(l.weight.rows(), x.cols());
    z.noalias() = l.weight * x;
    z.colwise() += l.bias;
    if (tape) {
      tape->inputs[k] = std::move(x);
      tape->pre[k] = z;
    }
    if (k < last) {
      x = z.cwiseMax(0.0);
    } else {
      apply_output(net.output, z);
      x = std::move(z);
    }
  }
  if (tape) tape->output = x;
  return x;
}

Matrix backward_batch(const Mlp& net, const Tape& tape, const Matrix& upstream, Gradients* grads) {
  const std::size_t n = net.layers.size();
  if (tape.pre.size() != n || tape.inputs.size() != n) throw std::invalid_argument("backward: tape/net mismatch");
  if (upstream.rows() != net.out_dim() || upstream.cols() != tape.output.cols()) {
    throw std::invalid_argument("backward: upstream shape " + std::to_string(upstream.rows()) + "x" +
                                std::to_string(upstream.cols()) + " != output shape " +
                                std::to_string(tape.output.rows()) + "x" + std::to_string(tape.output.cols()));
  }
  if (!upstream.allFinite()) throw std::invalid_argument("backward: non-finite upstream gradient");

  Matrix delta = upstream;
  switch (net.output) {
    case OutputActivation::logistic:
      delta.array() *= tape.output.array() * (1.0 - tape.output.array());
      break;
    case OutputActivation::relu:
      delta = (tape.pre[n - 1].array() > 0.0).select(delta, 0.0);
      break;
    case OutputActivation::identity:
    case OutputActivation::squashed_gaussian:
      break;
  }
  for (std::size_t k = n; k-- > 0;) {
    const Layer& l = net.layers[k];
    if (grads) {
      grads->layers[k].weight.noalias() += delta * tape.inputs[k].transpose();
      grads->layers[k].bias += delta.rowwise().sum();
    }
    Matrix dx(l.weight.cols(), delta.cols());
    dx.noalias() = l.weight.transpose() * delta;
    if (k > 0) {
      delta = (tape.pre[k - 1].array() > 0.0).select(dx, 0.0);
    } else {
      return dx;
    }
  }
  return {};
}

Backprop backward(const Mlp& net, const Vector& input, const Vector& upstream) {
  Tape tape;
  forward_batch(net, input, &tape);
  Backprop out{zeros_like(net), Vector()};
  out.input = backward_batch(net, tape, upstream, &out.params).col(0);
  return out;
}

void scale(Gradients& grads, double factor) {
  for (auto& l : grads.layers) {
    l.weight *= factor;
    l.bias *= factor;
  }
}

void set_zero(Gradients& grads) {
  for (auto& l : grads.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

void polyak_blend(Mlp& target, const Mlp& source, double tau) {
  if (target.layers.size() != source.layers.size()) throw std::invalid_argument("polyak_blend: layer count mismatch");
  for (std::size_t k = 0; k < target.layers.size(); ++k) {
    auto& t = target.layers[k];
    const auto& s = source.layers[k];
    t.weight = (1.0 - tau) * t.weight + tau * s.weight;
    t.bias = (1.0 - tau) * t.bias + tau * s.bias;
  }
}

AdamState::AdamState(const Mlp& params, AdamConfig cfg)
    : config(cfg), first_moment(zeros_like(params)), second_moment(zeros_like(params)) {}

void adam_step(Mlp& params, const Gradients& grads, AdamState& state) {
  if (params.layers.size() != grads.layers.size() || params.layers.size() != state.first_moment.layers.size()) {
    throw std::invalid_argument("adam_step: layer count mismatch");
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const double step_size = c.learning_rate / bc1;
  const double inv_sqrt_bc2 = 1.0 / std::sqrt(bc2);

  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    if (p.size() != g.size()) throw std::invalid_argument("adam_step: shape mismatch");
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseAbs2();
    p.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + c.epsilon);
  };
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    auto& p = params.layers[k];
    const auto& g = grads.layers[k];
    auto& m = state.first_moment.layers[k];
    auto& v = state.second_moment.layers[k];
    update(p.weight, g.weight, m.weight, v.weight);
    update(p.bias, g.bias, m.bias, v.bias);
  }
  if (!params.all_finite()) {
    throw std::runtime_error("adam_step: non-finite parameter after step " + std::to_string(state.step));
  }
}

double ScalarAdam::update(double value, double grad) {
  ++step;
  const double t = static_cast<double>(step);
  first_moment = config.beta1 * first_moment + (1.0 - config.beta1) * grad;
  second_moment = config.beta2 * second_moment + (1.0 - config.beta2) * grad * grad;
  const double m_hat = first_moment / (1.0 - std::pow(config.beta1, t));
  const double v_hat = second_moment / (1.0 - std::pow(config.beta2, t));
  const double next = value - config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  if (!std::isfinite(next)) throw std::runtime_error("ScalarAdam: non-finite value");
  return next;
}

// --- checkpoint I/O -------------------------------------------------------

namespace {

constexpr std::array<char, 8> kMagic{'D', '2', 'C', 'M', 'L', 'P', '\0', '\0'};
constexpr std::array<char, 8> kAdamMagic{'D', '2', 'C', 'A', 'D', 'A', 'M', '\0'};

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: unexpected end of stream");
  return value;
}

void put_doubles(std::ostream& os, const double* data, Eigen::Index n) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void get_doubles(std::istream& is, double* data, Eigen::Index n) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint: truncated parameter block");
}

}  // namespace

void save_mlp(std::ostream& os, const Mlp& net) {
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(net.output));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(l.weight.rows()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(l.weight.cols()));
  }
  for (const auto& l : net.layers) {
    put_doubles(os, l.weight.data(), l.weight.size());
    put_doubles(os, l.bias.data(), l.bias.size());
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

Mlp load_mlp(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw std::runtime_error("checkpoint: bad magic (not an mlp checkpoint)");
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  }
  const auto tag = get<std::uint32_t>(is);
  if (tag > static_cast<std::uint32_t>(OutputActivation::relu)) throw std::runtime_error("checkpoint: bad output tag");
  const auto n = get<std::uint32_t>(is);
  Mlp net;
  net.output = static_cast<OutputActivation>(tag);
  net.layers.resize(n);
  for (auto& l : net.layers) {
    const auto rows = get<std::uint32_t>(is);
    const auto cols = get<std::uint32_t>(is);
    l.weight.resize(rows, cols);
    l.bias.resize(rows);
  }
  for (auto& l : net.layers) {
    get_doubles(is, l.weight.data(), l.weight.size());
    get_doubles(is, l.bias.data(), l.bias.size());
  }
  net.validate();
  return net;
}

void save_mlp(const std::filesystem::path& path, const Mlp& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  save_mlp(os, net);
}

Mlp load_mlp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  return load_mlp(is);
}

void save_adam(std::ostream& os, const AdamState& state) {
  os.write(kAdamMagic.data(), kAdamMagic.size());
  put<double>(os, state.config.learning_rate);
  put<double>(os, state.config.beta1);
  put<double>(os, state.config.beta2);
  put<double>(os, state.config.epsilon);
  put<std::int64_t>(os, state.step);
  save_mlp(os, state.first_moment);
  save_mlp(os, state.second_moment);
}

AdamState load_adam(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kAdamMagic) throw std::runtime_error("checkpoint: bad magic (not an adam state)");
  AdamState s;
  s.config.learning_rate = get<double>(is);
  s.config.beta1 = get<double>(is);
  s.config.beta2 = get<double>(is);
  s.config.epsilon = get<double>(is);
  s.step = get<std::int64_t>(is);
  s.first_moment = load_mlp(is);
  s.second_moment = load_mlp(is);
  return s;
}

}  // namespace d2c::nn
