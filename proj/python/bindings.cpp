#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "madspace/errors.hpp"
#include "madspace/pipeline.hpp"

namespace py = pybind11;
using namespace madspace;

namespace {

EmbeddingModel train_embedding_py(const std::vector<Trajectory>& trajs, const EmbedConfig& config) {
  PrioritizedBuffer buffer(config.per_alpha, config.per_epsilon);
  return train_embedding(trajs, config, buffer);
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  auto opt = [](const std::optional<double>& v) -> py::object {
    return v ? py::object(py::float_(*v)) : py::object(py::none());
  };
  d["mae"] = opt(r.mae);
  d["spearman"] = opt(r.spearman);
  d["violation_rate"] = opt(r.violation_rate);
  d["success_rate"] = opt(r.success_rate);
  d["mean_path_ratio"] = opt(r.mean_path_ratio);
  d["pairs_evaluated"] = r.pairs_evaluated;
  d["unreachable_pairs"] = r.unreachable_pairs;
  d["episodes"] = r.episodes;
  return d;
}

}  // namespace

PYBIND11_MODULE(_madspace, m) {
  m.doc() = "Minimum-action-distance embeddings, latent planning and shaping";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<UnsupportedError>(m, "UnsupportedError", PyExc_NotImplementedError);
  py::register_exception<StageError>(m, "StageError", PyExc_RuntimeError);

  py::class_<State>(m, "State")
      .def(py::init<std::vector<double>>(), py::arg("features"))
      .def_readwrite("features", &State::features)
      .def("__eq__", [](const State& a, const State& b) { return a == b; })
      .def("__repr__", [](const State& s) { return "State(" + py::repr(py::cast(s.features)).cast<std::string>() + ")"; });
  py::implicitly_convertible<py::list, State>();

  py::class_<Action>(m, "Action")
      .def(py::init<int>(), py::arg("index"))
      .def_readwrite("index", &Action::index)
      .def("__eq__", [](const Action& a, const Action& b) { return a == b; })
      .def("__repr__", [](const Action& a) { return "Action(" + std::to_string(a.index) + ")"; });
  py::implicitly_convertible<py::int_, Action>();

  py::class_<EnvSpec>(m, "EnvSpec")
      .def_property_readonly("kind", [](const EnvSpec& s) { return std::string(to_string(s.kind)); })
      .def_readonly("width", &EnvSpec::width)
      .def_readonly("height", &EnvSpec::height)
      .def_readonly("max_episode_steps", &EnvSpec::max_episode_steps)
      .def_property_readonly("state_dim", &EnvSpec::state_dim)
      .def_property_readonly("num_actions", &EnvSpec::num_actions)
      .def("__str__", [](const EnvSpec& s) { return format_env_spec(s); });

  m.def("parse_env_spec", [](const std::string& text) { return parse_env_spec(text); }, py::arg("text"));
  m.def("load_env_spec", &load_env_spec, py::arg("path"));
  m.def("reset", &reset, py::arg("spec"), py::arg("seed"));
  m.def("transition", &transition, py::arg("spec"), py::arg("state"), py::arg("action"));
  m.def("enumerate_states", &enumerate_states, py::arg("spec"));
  m.def(
      "grid_state", [](const EnvSpec& spec, int x, int y, bool key) { return grid_state(spec, {x, y}, key); },
      py::arg("spec"), py::arg("x"), py::arg("y"), py::arg("has_key") = false);

  py::class_<Trajectory>(m, "Trajectory")
      .def(py::init<>())
      .def_readwrite("states", &Trajectory::states)
      .def_readwrite("actions", &Trajectory::actions)
      .def("__len__", &Trajectory::length);

  m.def(
      "collect", [](const EnvSpec& spec, int n, std::uint64_t seed) { return collect(spec, {}, n, seed); },
      py::arg("spec"), py::arg("trajectories"), py::arg("seed"), "Uniform random-walk trajectories.");
  m.def("coverage", &coverage, py::arg("spec"), py::arg("trajectories"));
  m.def("save_dataset", &save_dataset, py::arg("trajectories"), py::arg("path"));
  m.def("load_dataset", &load_dataset, py::arg("path"));

  py::class_<MadTable>(m, "MadTable")
      .def("__len__", &MadTable::size)
      .def_property_readonly("states", &MadTable::states)
      .def("mad", &MadTable::mad, py::arg("start"), py::arg("goal"))
      .def("symmetric", py::overload_cast<const State&, const State&>(&MadTable::symmetric, py::const_),
           py::arg("a"), py::arg("b"))
      .def("audit", &MadTable::audit, py::arg("spec"));
  m.def("compute_mad", &compute_mad, py::arg("spec"));

  py::enum_<Norm>(m, "Norm").value("L1", Norm::kL1).value("L2", Norm::kL2);

  py::class_<EmbedConfig>(m, "EmbedConfig")
      .def(py::init<>())
      .def_readwrite("embed_dim", &EmbedConfig::embed_dim)
      .def_readwrite("norm", &EmbedConfig::norm)
      .def_readwrite("alpha_exponent", &EmbedConfig::alpha_exponent)
      .def_readwrite("penalty_enabled", &EmbedConfig::penalty_enabled)
      .def_readwrite("hidden", &EmbedConfig::hidden)
      .def_readwrite("batch_size", &EmbedConfig::batch_size)
      .def_readwrite("learning_rate", &EmbedConfig::learning_rate)
      .def_readwrite("train_steps", &EmbedConfig::train_steps)
      .def_readwrite("max_gap", &EmbedConfig::max_gap)
      .def_readwrite("seed", &EmbedConfig::seed);

  py::class_<EmbeddingModel>(m, "EmbeddingModel")
      .def_static("load", py::overload_cast<const std::filesystem::path&>(&EmbeddingModel::load), py::arg("path"))
      .def("save", py::overload_cast<const std::filesystem::path&>(&EmbeddingModel::save, py::const_),
           py::arg("path"))
      .def("embed", &EmbeddingModel::embed, py::arg("state"))
      .def("dist", &EmbeddingModel::dist, py::arg("a"), py::arg("b"))
      .def_property_readonly("embed_dim", &EmbeddingModel::embed_dim)
      .def_property_readonly("adjacent_distance", &EmbeddingModel::adjacent_distance);
  m.def("train_embedding", &train_embedding_py, py::arg("trajectories"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());

  py::class_<DynamicsConfig>(m, "DynamicsConfig")
      .def(py::init<>())
      .def_readwrite("hidden", &DynamicsConfig::hidden)
      .def_readwrite("batch_size", &DynamicsConfig::batch_size)
      .def_readwrite("learning_rate", &DynamicsConfig::learning_rate)
      .def_readwrite("train_steps", &DynamicsConfig::train_steps)
      .def_readwrite("residual", &DynamicsConfig::residual)
      .def_readwrite("seed", &DynamicsConfig::seed);

  py::class_<LatentDynamics>(m, "LatentDynamics")
      .def_static("load", py::overload_cast<const std::filesystem::path&>(&LatentDynamics::load), py::arg("path"))
      .def("save", py::overload_cast<const std::filesystem::path&>(&LatentDynamics::save, py::const_),
           py::arg("path"))
      .def("predict", &LatentDynamics::predict, py::arg("z"), py::arg("action"));
  m.def(
      "train_dynamics",
      [](const std::vector<Trajectory>& trajs, const EmbeddingModel& embedding, int num_actions,
         const DynamicsConfig& config) { return train_dynamics(trajs, embedding, num_actions, config); },
      py::arg("trajectories"), py::arg("embedding"), py::arg("num_actions"), py::arg("config"),
      py::call_guard<py::gil_scoped_release>());
  m.def("mean_one_step_error", &mean_one_step_error, py::arg("dynamics"), py::arg("embedding"),
        py::arg("trajectories"));

  py::class_<PlanConfig>(m, "PlanConfig")
      .def(py::init<>())
      .def_readwrite("horizon", &PlanConfig::horizon)
      .def_readwrite("num_sequences", &PlanConfig::num_sequences)
      .def_readwrite("goal_eps", &PlanConfig::goal_eps)
      .def_readwrite("max_env_steps", &PlanConfig::max_env_steps)
      .def_readwrite("seed", &PlanConfig::seed);

  py::class_<PlanEpisode>(m, "PlanEpisode")
      .def_readonly("trajectory", &PlanEpisode::trajectory)
      .def_readonly("success", &PlanEpisode::success)
      .def_readonly("final_distance", &PlanEpisode::final_distance)
      .def_property_readonly("steps", &PlanEpisode::steps);
  m.def("plan_dist_episode", &plan_dist_episode, py::arg("spec"), py::arg("embedding"), py::arg("dynamics"),
        py::arg("start"), py::arg("goal"), py::arg("config") = PlanConfig{});

  m.def(
      "evaluate_embedding", [](const EmbeddingModel& e, const MadTable& mad) { return report_dict(evaluate_embedding(e, mad)); },
      py::arg("embedding"), py::arg("mad"));
  m.def("violation_rate", &violation_rate, py::arg("embedding"), py::arg("trajectories"),
        py::arg("max_gap") = std::nullopt, py::arg("tolerance") = 0.5);
  m.def("spearman", [](const std::vector<double>& a, const std::vector<double>& b) { return spearman(a, b); },
        py::arg("a"), py::arg("b"));

  m.def("git_blob_hash", &git_blob_hash, py::arg("path"));
  m.def(
      "run_pipeline",
      [](const std::filesystem::path& config) {
        const PipelineResult r = run_pipeline(config);
        py::list stages;
        for (const StageOutcome& s : r.stages) stages.append(py::make_tuple(s.command, s.skipped));
        return py::make_tuple(r.out_dir, stages);
      },
      py::arg("config"), "Runs a JSON pipeline config; returns (out_dir, [(stage, skipped), ...]).");
}
