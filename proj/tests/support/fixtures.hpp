#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "d2c/ndnet.hpp"
#include "d2c/rng.hpp"

namespace d2c::test {

/// Per-test scratch directory under the system temp path, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("d2c_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double rel_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

/// Finite-difference check of dot(upstream, f(x)) wrt every parameter.
/// Returns the largest relative error.
template <typename Loss, typename Analytic>
double max_param_fd_error(nn::Mlp& net, Loss loss, const Analytic& analytic, double h) {
  double worst = 0.0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto check = [&](double& p, double g) {
      const double orig = p;
      p = orig + h;
      const double fp = loss();
      p = orig - h;
      const double fm = loss();
      p = orig;
      worst = std::max(worst, rel_error((fp - fm) / (2 * h), g));
    };
    auto& layer = net.layers[l];
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) check(layer.weight(r, c), analytic.layers[l].weight(r, c));
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) check(layer.bias(r), analytic.layers[l].bias(r));
  }
  return worst;
}

}  // namespace d2c::test
