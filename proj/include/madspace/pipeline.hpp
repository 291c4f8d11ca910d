#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "madspace/dynamics.hpp"
#include "madspace/embedding.hpp"
#include "madspace/env.hpp"
#include "madspace/gcsl.hpp"
#include "madspace/oracle.hpp"
#include "madspace/planner.hpp"
#include "madspace/shaping.hpp"
#include "madspace/trajectory.hpp"

namespace madspace {

namespace fs = std::filesystem;

// ---- data collection ------------------------------------------------------

/// Behavior policy for collection: uniform random actions, or epsilon-greedy on a Q-table.
struct CollectPolicy {
  const QTable* qtable = nullptr;
  double epsilon = 0.0;
};

/// n_traj episodes of at most spec.max_episode_steps steps, each from reset().
std::vector<Trajectory> collect(const EnvSpec& spec, const CollectPolicy& policy, int n_traj,
                                std::uint64_t seed);

/// Fraction of the enumerable states visited by the dataset; nullopt for continuous envs.
std::optional<double> coverage(const EnvSpec& spec, const std::vector<Trajectory>& trajs);

// ---- goal-reaching episodes -------------------------------------------------

struct GoalTask {
  State start;
  State goal;
};

/// K (start, goal) tasks. Starts come from reset(); grid goals are uniform over
/// enumerated states other than the start; the continuous goal is the hilltop.
std::vector<GoalTask> sample_tasks(const EnvSpec& spec, int count, std::uint64_t seed);

/// Plan-Dist on sample_tasks(spec, goals, config.seed), one derived planner seed per episode.
std::vector<EpisodeRecord> run_planner_episodes(const EnvSpec& spec, const EmbeddingModel& embedding,
                                                const LatentDynamics& dyn, int goals,
                                                const PlanConfig& config);

/// The greedy GCSL policy on sample_tasks(spec, goals, seed). final_distance is NaN.
std::vector<EpisodeRecord> run_gcsl_episodes(const EnvSpec& spec, const GcslPolicy& policy, int goals,
                                             int budget, std::uint64_t seed);

/// One JSON object per line: start, goal, steps, success, final_distance.
void write_episode_report(const std::vector<EpisodeRecord>& records, const fs::path& path);
std::vector<EpisodeRecord> read_episode_report(const fs::path& path);

// ---- manifests ----------------------------------------------------------------

/// Hex SHA-1 of "blob <size>\0<content>", as git computes for a file.
std::string git_blob_hash(const fs::path& path);

struct HashedPath {
  std::string path;
  std::string hash;
  bool operator==(const HashedPath&) const = default;
};

struct RunManifest {
  std::string command;
  nlohmann::json flags = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<HashedPath> inputs;
  std::vector<HashedPath> outputs;
  double duration_seconds = 0.0;
  nlohmann::json stats = nlohmann::json::object();

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  void save(const fs::path& path) const;
  static RunManifest load(const fs::path& path);
};

/// `<artifact>.manifest.json`.
fs::path manifest_path(const fs::path& artifact);

struct StageOutcome {
  std::string command;
  bool skipped = false;
  fs::path manifest;
  nlohmann::json stats = nlohmann::json::object();
};

/// A unit of work producing files. The first output names the manifest.
struct StageSpec {
  std::string command;
  nlohmann::json flags = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::function<nlohmann::json()> body;
};

/// True when the stage's manifest records the same command, flags, seed and
/// input hashes, and every output still hashes to what the manifest recorded.
bool stage_is_current(const StageSpec& stage);

/// Runs the stage (unless skip_if_current and it is current) and writes its
/// manifest. Any failure is rethrown as StageError naming the command.
StageOutcome execute_stage(const StageSpec& stage, bool skip_if_current = false);

// ---- stage options ------------------------------------------------------------

struct CollectOptions {
  fs::path env;
  std::optional<fs::path> qtable;
  double epsilon = 0.0;
  int trajectories = 100;
  std::uint64_t seed = 0;
  fs::path out;
};

struct TrainEmbedOptions {
  fs::path dataset;
  fs::path out;
  EmbedConfig config;
  std::optional<fs::path> log;  // CSV: step,loss,mean_violation
};

struct TrainDynOptions {
  fs::path env;
  fs::path dataset;
  fs::path embed;
  fs::path out;
  DynamicsConfig config;
  std::optional<fs::path> log;  // CSV: step,loss
};

struct PlanOptions {
  fs::path env;
  fs::path embed;
  fs::path dyn;
  int goals = 100;
  PlanConfig config;
  fs::path report;
};

struct ShapeTrainOptions {
  fs::path env;
  std::optional<fs::path> embed;
  Cell goal;
  int episodes = 500;
  bool shaped = true;
  QConfig config;
  fs::path curve;  // CSV: episode,return,steps,success
  std::optional<fs::path> qtable_out;
};

struct GcslTrainOptions {
  fs::path env;
  fs::path dataset;
  fs::path out;
  GcslConfig config;
  std::optional<fs::path> log;  // CSV: step,loss
};

struct GcslEvalOptions {
  fs::path env;
  fs::path policy;
  int goals = 100;
  int budget = 50;
  std::uint64_t seed = 0;
  fs::path report;
};

struct EvalOptions {
  fs::path env;
  fs::path embed;
  std::optional<fs::path> dyn;
  std::optional<fs::path> dataset;  // enables violation_rate
  std::optional<int> max_gap;       // pairs considered for violation_rate
  std::optional<fs::path> episodes;  // plan or gcsl-eval report to score
  int goals = 100;                   // planner episodes when dyn is given without episodes
  std::uint64_t seed = 0;
  fs::path out;
};

StageSpec collect_stage(const CollectOptions& o);
StageSpec train_embed_stage(const TrainEmbedOptions& o);
StageSpec train_dyn_stage(const TrainDynOptions& o);
StageSpec plan_stage(const PlanOptions& o);
StageSpec shape_train_stage(const ShapeTrainOptions& o);
StageSpec gcsl_train_stage(const GcslTrainOptions& o);
StageSpec gcsl_eval_stage(const GcslEvalOptions& o);
StageSpec eval_stage(const EvalOptions& o);

/// Parses the `key = value` report written by the eval stage.
EvalReport read_eval_report(const fs::path& path);

// ---- whole pipeline -----------------------------------------------------------

/// JSON config: {"env", "out_dir", "seed", "stages": [...], and one optional
/// object per stage name holding its settings}. Relative paths resolve against
/// the config file's directory.
struct PipelineResult {
  fs::path out_dir;
  std::vector<StageOutcome> stages;
};

PipelineResult run_pipeline(const fs::path& config_path);

}  // namespace madspace
