#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "d2c/curriculum.hpp"
#include "d2c/diversify.hpp"
#include "d2c/envs.hpp"
#include "d2c/metrics.hpp"
#include "d2c/orchestrator.hpp"
#include "d2c/verify.hpp"

namespace py = pybind11;
using namespace d2c;

namespace {

py::dict row_to_dict(const metrics::MetricsRow& r) {
  py::dict d;
  d["iter"] = r.iter;
  d["steps"] = r.steps;
  auto opt = [](const std::optional<double>& v) -> py::object { return v ? py::object(py::float_(*v)) : py::object(py::none()); };
  d["curr_dist"] = opt(r.curr_dist);
  d["success"] = opt(r.success);
  d["mean_reward"] = opt(r.mean_reward);
  d["clf_loss"] = opt(r.clf_loss);
  d["critic_loss"] = opt(r.critic_loss);
  d["actor_loss"] = opt(r.actor_loss);
  d["alpha"] = opt(r.alpha);
  return d;
}

orch::TrainConfig config_from(const std::string& profile, const std::string& overrides_json) {
  auto c = orch::profile_config(profile);
  if (!overrides_json.empty()) c = orch::apply_config(c, nlohmann::json::parse(overrides_json));
  return c;
}

}  // namespace

PYBIND11_MODULE(_d2c, m) {
  m.doc() = "Curriculum RL engine: matching, classifier ensemble and training loop";

  py::register_exception<orch::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<metrics::SchemaError>(m, "SchemaError", PyExc_ValueError);

  m.def(
      "solve_assignment",
      [](const nn::Matrix& costs) {
        const auto r = curr::solve_assignment(costs);
        return py::make_tuple(r.assignment, r.total_cost);
      },
      py::arg("costs"), "Min-cost assignment of every column to a distinct row; returns (pairs, total).");

  m.def(
      "mi_loss", [](const std::vector<double>& a, const std::vector<double>& b, double p_min) {
        return div::mi_loss(a, b, p_min);
      },
      py::arg("first"), py::arg("second"), py::arg("p_min") = 1e-6);

  m.def(
      "mean_probability", [](const std::vector<double>& heads) { return div::mean_probability(heads); },
      py::arg("heads"));

  m.def("preset_names", &env::preset_names);
  m.def(
      "maze_text", [](const std::string& name) { return env::format_maze(env::preset(name)); }, py::arg("name"));
  m.def(
      "desired_outcomes",
      [](const std::string& name) {
        std::vector<std::pair<double, double>> out;
        for (const auto& p : env::preset(name).desired_outcomes) out.emplace_back(p.x, p.y);
        return out;
      },
      py::arg("name"));

  m.def("profile_names", &orch::profile_names);
  m.def(
      "profile_json", [](const std::string& name) { return orch::profile_config(name).to_json().dump(); },
      py::arg("name"));

  m.def(
      "train",
      [](const std::string& profile, const std::string& overrides_json) {
        const auto cfg = config_from(profile, overrides_json);
        orch::TrainResult result;
        {
          py::gil_scoped_release release;
          result = orch::train(cfg);
        }
        const auto maze = orch::make_maze(cfg);
        const auto eval = orch::evaluate(result.state, cfg, maze, cfg.eval_episodes_per_goal);
        py::list rows;
        for (const auto& r : result.metrics) rows.append(row_to_dict(r));
        return py::make_tuple(rows, eval.success_rate);
      },
      py::arg("profile") = "desk-scale", py::arg("overrides_json") = "",
      "Runs training; returns (metrics rows, final success rate).");

  m.def(
      "read_metrics",
      [](const std::string& path) {
        py::list rows;
        for (const auto& r : metrics::read_metrics(std::filesystem::path(path))) rows.append(row_to_dict(r));
        return rows;
      },
      py::arg("path"));

  m.def(
      "verify",
      [](std::uint64_t seed) {
        std::vector<std::tuple<std::string, bool, std::string>> out;
        for (const auto& c : verify::run_all(seed)) out.emplace_back(c.name, c.passed, c.detail);
        return out;
      },
      py::arg("seed") = 0);
}
