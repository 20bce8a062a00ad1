#include "d2c/diversify.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace d2c::div {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

nn::Matrix encode(const EnsembleParams& params, std::span<const Point> s, std::span<const Point> g) {
  if (s.size() != g.size()) throw std::invalid_argument("ensemble: state/goal batch length mismatch");
  const auto n = static_cast<Eigen::Index>(s.size());
  nn::Matrix x(4, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Point a = s[static_cast<std::size_t>(k)];
    const Point b = g[static_cast<std::size_t>(k)];
    if (!std::isfinite(a.x) || !std::isfinite(a.y) || !std::isfinite(b.x) || !std::isfinite(b.y)) {
      throw std::invalid_argument("ensemble: non-finite input");
    }
    x(0, k) = a.x / params.input_scale.x;
    x(1, k) = a.y / params.input_scale.y;
    x(2, k) = params.conditional ? b.x / params.input_scale.x : 0.0;
    x(3, k) = params.conditional ? b.y / params.input_scale.y : 0.0;
  }
  return x;
}

nn::Matrix head_logits(const EnsembleParams& params, const nn::Matrix& x) {
  const nn::Matrix features = nn::forward_batch(params.trunk, x);
  nn::Matrix logits(params.head_count(), x.cols());
  for (int i = 0; i < params.head_count(); ++i) logits.row(i) = nn::forward_batch(params.heads[i], features).row(0);
  return logits;
}

}  // namespace

void EnsembleParams::validate() const {
  if (heads.size() < 2) throw std::invalid_argument("ensemble needs at least 2 heads");
  if (!(lambda >= 0.0)) throw std::invalid_argument("ensemble lambda must be >= 0");
  if (!(noise_scale >= 0.0)) throw std::invalid_argument("ensemble noise scale must be >= 0");
  if (!(p_min > 0.0 && p_min < 0.5)) throw std::invalid_argument("ensemble p_min must lie in (0, 0.5)");
  trunk.validate();
  if (trunk.in_dim() != 4) throw std::invalid_argument("ensemble trunk must take (s, g) in 4 dims");
  for (const auto& h : heads) {
    h.validate();
    if (h.in_dim() != trunk.out_dim() || h.out_dim() != 1) throw std::invalid_argument("ensemble head shape mismatch");
  }
}

EnsembleParams make_ensemble(const EnsembleConfig& config, Point input_scale, Rng& rng) {
  if (config.trunk_hidden.empty()) throw std::invalid_argument("ensemble trunk needs at least one hidden layer");
  EnsembleParams p;
  std::vector<int> trunk_dims{4};
  trunk_dims.insert(trunk_dims.end(), config.trunk_hidden.begin(), config.trunk_hidden.end());
  p.trunk = nn::make_mlp(trunk_dims, nn::OutputActivation::relu, rng);
  for (int i = 0; i < config.heads; ++i) {
    std::vector<int> dims{config.trunk_hidden.back()};
    dims.insert(dims.end(), config.head_hidden.begin(), config.head_hidden.end());
    dims.push_back(1);
    p.heads.push_back(nn::make_mlp(dims, nn::OutputActivation::identity, rng));
  }
  p.lambda = config.lambda;
  p.noise_scale = config.noise_scale;
  p.p_min = config.p_min;
  p.conditional = config.conditional;
  p.input_scale = input_scale;
  p.validate();
  return p;
}

nn::Matrix head_probabilities(const EnsembleParams& params, std::span<const Point> s, std::span<const Point> g) {
  nn::Matrix logits = head_logits(params, encode(params, s, g));
  return logits.unaryExpr([](double z) { return sigmoid(z); });
}

std::vector<double> head_forward(const EnsembleParams& params, Point s, Point g) {
  const nn::Matrix p = head_probabilities(params, std::span(&s, 1), std::span(&g, 1));
  return {p.data(), p.data() + p.size()};
}

double mean_probability(std::span<const double> head_outputs) {
  if (head_outputs.empty()) throw std::invalid_argument("mean_probability: no heads");
  double sum = 0.0;
  for (double v : head_outputs) sum += v;
  return std::clamp(sum / static_cast<double>(head_outputs.size()), 0.0, 1.0);
}

double pseudo_probability(const EnsembleParams& params, Point s, Point g) {
  const auto heads = head_forward(params, s, g);
  return mean_probability(heads);
}

std::vector<double> pseudo_probability_batch(const EnsembleParams& params, std::span<const Point> s,
                                             std::span<const Point> g) {
  const nn::Matrix p = head_probabilities(params, s, g);
  std::vector<double> out(static_cast<std::size_t>(p.cols()));
  for (Eigen::Index k = 0; k < p.cols(); ++k) {
    out[static_cast<std::size_t>(k)] = std::clamp(p.col(k).mean(), 0.0, 1.0);
  }
  return out;
}

// --- mutual information ---------------------------------------------------

MiGradient mi_loss_with_grad(std::span<const double> first, std::span<const double> second, double p_min) {
  if (first.empty() || second.empty()) throw std::invalid_argument("mi_loss: empty batch");
  if (first.size() != second.size()) throw std::invalid_argument("mi_loss: batch length mismatch");
  const std::size_t n = first.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  std::array<std::array<double, 2>, 2> joint{};
  std::array<double, 2> mi{};
  std::array<double, 2> mj{};
  for (std::size_t k = 0; k < n; ++k) {
    const double u[2] = {first[k], 1.0 - first[k]};
    const double v[2] = {second[k], 1.0 - second[k]};
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) joint[a][b] += u[a] * v[b];
    mi[0] += u[0];
    mi[1] += u[1];
    mj[0] += v[0];
    mj[1] += v[1];
  }
  for (int a = 0; a < 2; ++a) {
    mi[a] *= inv_n;
    mj[a] *= inv_n;
    for (int b = 0; b < 2; ++b) joint[a][b] *= inv_n;
  }

  MiGradient out;
  std::array<std::array<double, 2>, 2> d_joint{};
  std::array<double, 2> d_mi{};
  std::array<double, 2> d_mj{};
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const double j = joint[a][b];
      const double m = mi[a] * mj[b];
      const double lj = std::log(std::max(j, p_min));
      const double lm = std::log(std::max(m, p_min));
      out.value += j * (lj - lm);
      d_joint[a][b] = (lj - lm) + (j > p_min ? 1.0 : 0.0);
      const double d_m = m > p_min ? -j / m : 0.0;
      d_mi[a] += d_m * mj[b];
      d_mj[b] += d_m * mi[a];
    }
  }
  out.value = std::max(out.value, 0.0);

  out.d_first.resize(n);
  out.d_second.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double u[2] = {first[k], 1.0 - first[k]};
    const double v[2] = {second[k], 1.0 - second[k]};
    // du/dp = (+1, -1) for both heads.
    double g1 = d_mi[0] - d_mi[1];
    double g2 = d_mj[0] - d_mj[1];
    for (int b = 0; b < 2; ++b) g1 += (d_joint[0][b] - d_joint[1][b]) * v[b];
    for (int a = 0; a < 2; ++a) g2 += (d_joint[a][0] - d_joint[a][1]) * u[a];
    out.d_first[k] = g1 * inv_n;
    out.d_second[k] = g2 * inv_n;
  }
  return out;
}

double mi_loss(std::span<const double> first, std::span<const double> second, double p_min) {
  return mi_loss_with_grad(first, second, p_min).value;
}

// --- classifier objective -------------------------------------------------

void ClassifierBatch::validate() const {
  if (negatives.size() != negative_goals.size() || positives.size() != positive_goals.size() ||
      target_pool.size() != target_goals.size()) {
    throw std::invalid_argument("classifier batch: point/goal length mismatch");
  }
  if (negatives.empty() && positives.empty()) throw std::invalid_argument("classifier batch: no labelled samples");
}

ClassifierLoss classifier_loss(const EnsembleParams& params, const ClassifierBatch& batch) {
  batch.validate();
  const auto nneg = static_cast<Eigen::Index>(batch.negatives.size());
  const auto npos = static_cast<Eigen::Index>(batch.positives.size());
  const auto ntgt = static_cast<Eigen::Index>(batch.target_pool.size());
  const bool use_mi = params.lambda > 0.0 && ntgt > 0;
  if (use_mi && ntgt < 2) throw std::invalid_argument("classifier batch: target pool needs at least 2 points");

  std::vector<Point> s;
  std::vector<Point> g;
  s.reserve(static_cast<std::size_t>(nneg + npos + ntgt));
  g.reserve(s.capacity());
  s.insert(s.end(), batch.negatives.begin(), batch.negatives.end());
  s.insert(s.end(), batch.positives.begin(), batch.positives.end());
  g.insert(g.end(), batch.negative_goals.begin(), batch.negative_goals.end());
  g.insert(g.end(), batch.positive_goals.begin(), batch.positive_goals.end());
  if (use_mi) {
    s.insert(s.end(), batch.target_pool.begin(), batch.target_pool.end());
    g.insert(g.end(), batch.target_goals.begin(), batch.target_goals.end());
  }
  const nn::Matrix x = encode(params, s, g);
  const Eigen::Index total = x.cols();

  nn::Tape trunk_tape;
  const nn::Matrix features = nn::forward_batch(params.trunk, x, &trunk_tape);
  const int heads = params.head_count();
  std::vector<nn::Tape> head_tapes(static_cast<std::size_t>(heads));
  nn::Matrix logits(heads, total);
  for (int i = 0; i < heads; ++i) {
    logits.row(i) = nn::forward_batch(params.heads[i], features, &head_tapes[static_cast<std::size_t>(i)]).row(0);
  }

  ClassifierLoss out;
  nn::Matrix d_logits = nn::Matrix::Zero(heads, total);
  for (int i = 0; i < heads; ++i) {
    for (Eigen::Index k = 0; k < nneg; ++k) {
      const double z = logits(i, k);
      out.terms.negative_ce += softplus(z) / static_cast<double>(nneg);
      d_logits(i, k) += sigmoid(z) / static_cast<double>(nneg);
    }
    for (Eigen::Index k = nneg; k < nneg + npos; ++k) {
      const double z = logits(i, k);
      out.terms.positive_ce += softplus(-z) / static_cast<double>(npos);
      d_logits(i, k) += (sigmoid(z) - 1.0) / static_cast<double>(npos);
    }
  }

  if (use_mi) {
    const Eigen::Index off = nneg + npos;
    std::vector<std::vector<double>> probs(static_cast<std::size_t>(heads), std::vector<double>(ntgt));
    for (int i = 0; i < heads; ++i)
      for (Eigen::Index k = 0; k < ntgt; ++k) probs[i][k] = sigmoid(logits(i, off + k));
    std::vector<std::vector<double>> d_probs(static_cast<std::size_t>(heads), std::vector<double>(ntgt, 0.0));
    // Ordered pairs; the estimator is symmetric so each unordered pair counts twice.
    for (int i = 0; i < heads; ++i) {
      for (int j = 0; j < heads; ++j) {
        if (i == j) continue;
        const MiGradient mi = mi_loss_with_grad(probs[i], probs[j], params.p_min);
        out.terms.mutual_information += mi.value;
        for (Eigen::Index k = 0; k < ntgt; ++k) {
          d_probs[i][k] += params.lambda * mi.d_first[k];
          d_probs[j][k] += params.lambda * mi.d_second[k];
        }
      }
    }
    for (int i = 0; i < heads; ++i) {
      for (Eigen::Index k = 0; k < ntgt; ++k) {
        const double p = probs[i][k];
        d_logits(i, off + k) += d_probs[i][k] * p * (1.0 - p);
      }
    }
  }
  out.terms.total = out.terms.negative_ce + out.terms.positive_ce + params.lambda * out.terms.mutual_information;

  out.grads.trunk = nn::zeros_like(params.trunk);
  nn::Matrix d_features = nn::Matrix::Zero(features.rows(), total);
  for (int i = 0; i < heads; ++i) {
    out.grads.heads.push_back(nn::zeros_like(params.heads[i]));
    d_features += nn::backward_batch(params.heads[i], head_tapes[static_cast<std::size_t>(i)], d_logits.row(i),
                                     &out.grads.heads.back());
  }
  nn::backward_batch(params.trunk, trunk_tape, d_features, &out.grads.trunk);
  return out;
}

ClassifierBatch sample_batch(const EnsembleParams& params, const SampleSources& sources, const TrainOptions& options,
                             Rng& rng) {
  auto sample_goal = [&]() -> Point {
    switch (options.goal_source) {
      case GoalSource::uniform_target:
        return sources.uniform(rng);
      case GoalSource::buffer_and_desired:
        if (!sources.desired.empty() && rng.bernoulli(0.5)) return sources.desired[rng.index(sources.desired.size())];
        return sources.achieved(rng);
      case GoalSource::desired:
        if (sources.desired.empty()) throw std::invalid_argument("goal source 'desired' needs desired examples");
        return sources.desired[rng.index(sources.desired.size())];
    }
    return {};
  };
  const double eps = params.noise_scale;
  ClassifierBatch b;
  for (int k = 0; k < options.negatives; ++k) {
    b.negatives.push_back(sources.achieved(rng));
    b.negative_goals.push_back(sample_goal());
  }
  for (int k = 0; k < options.positives; ++k) {
    const Point g = sample_goal();
    const Point noise{rng.uniform(-eps, eps), rng.uniform(-eps, eps)};
    b.positives.push_back(g + noise);
    b.positive_goals.push_back(g);
  }
  const Point shared = sample_goal();
  for (int k = 0; k < options.target; ++k) {
    b.target_pool.push_back(sources.uniform(rng));
    b.target_goals.push_back(options.mi_goal_mode == MiGoalMode::shared ? shared : sample_goal());
  }
  return b;
}

EnsembleModel::EnsembleModel(EnsembleParams p, double learning_rate) : params(std::move(p)) {
  const nn::AdamConfig cfg{.learning_rate = learning_rate};
  trunk_adam = nn::AdamState(params.trunk, cfg);
  for (const auto& h : params.heads) head_adam.emplace_back(h, cfg);
}

void apply_gradients(EnsembleModel& model, const EnsembleGrads& grads) {
  nn::adam_step(model.params.trunk, grads.trunk, model.trunk_adam);
  for (std::size_t i = 0; i < model.params.heads.size(); ++i) {
    nn::adam_step(model.params.heads[i], grads.heads[i], model.head_adam[i]);
  }
}

double update_ensemble(EnsembleModel& model, const SampleSources& sources, const TrainOptions& options, Rng& rng,
                       int iterations) {
  double sum = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const ClassifierBatch batch = sample_batch(model.params, sources, options, rng);
    const ClassifierLoss loss = classifier_loss(model.params, batch);
    apply_gradients(model, loss.grads);
    sum += loss.terms.total;
  }
  return iterations > 0 ? sum / iterations : 0.0;
}

// --- checkpoint -----------------------------------------------------------

namespace {

constexpr std::uint32_t kEnsembleVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("ensemble checkpoint: unexpected end of stream");
  return v;
}

}  // namespace

void save_ensemble(std::ostream& os, const EnsembleParams& params) {
  put<std::uint32_t>(os, kEnsembleVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.heads.size()));
  put<double>(os, params.lambda);
  put<double>(os, params.noise_scale);
  put<double>(os, params.p_min);
  put<std::uint8_t>(os, params.conditional ? 1 : 0);
  put<double>(os, params.input_scale.x);
  put<double>(os, params.input_scale.y);
  nn::save_mlp(os, params.trunk);
  for (const auto& h : params.heads) nn::save_mlp(os, h);
}

EnsembleParams load_ensemble(std::istream& is) {
  const auto version = get<std::uint32_t>(is);
  if (version != kEnsembleVersion) {
    throw std::runtime_error("ensemble checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                             std::to_string(kEnsembleVersion) + ")");
  }
  EnsembleParams p;
  const auto n = get<std::uint32_t>(is);
  p.lambda = get<double>(is);
  p.noise_scale = get<double>(is);
  p.p_min = get<double>(is);
  p.conditional = get<std::uint8_t>(is) != 0;
  p.input_scale.x = get<double>(is);
  p.input_scale.y = get<double>(is);
  p.trunk = nn::load_mlp(is);
  for (std::uint32_t i = 0; i < n; ++i) p.heads.push_back(nn::load_mlp(is));
  p.validate();
  return p;
}

void save_model(std::ostream& os, const EnsembleModel& model) {
  save_ensemble(os, model.params);
  nn::save_adam(os, model.trunk_adam);
  for (const auto& a : model.head_adam) nn::save_adam(os, a);
}

EnsembleModel load_model(std::istream& is) {
  EnsembleModel m;
  m.params = load_ensemble(is);
  m.trunk_adam = nn::load_adam(is);
  for (std::size_t i = 0; i < m.params.heads.size(); ++i) m.head_adam.push_back(nn::load_adam(is));
  return m;
}

}  // namespace d2c::div
