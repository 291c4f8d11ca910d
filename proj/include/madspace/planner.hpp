#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "madspace/dynamics.hpp"
#include "madspace/embedding.hpp"
#include "madspace/env.hpp"
#include "madspace/trajectory.hpp"

namespace madspace {

struct PlanConfig {
  int horizon = 5;
  int num_sequences = 20;
  /// Embedded-distance goal tolerance for continuous envs. Unset: half the
  /// embedding's recorded adjacent distance. Grids always test exact state equality.
  std::optional<double> goal_eps;
  int max_env_steps = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

/// -d(phi(s), z_goal) - sum_t d(z_t, z_goal) along the latent rollout of `actions`.
double score_sequence(const LatentDynamics& dyn, const EmbeddingModel& embedding, const State& s,
                      const State& goal, std::span<const Action> actions);

struct PlanEpisode {
  Trajectory trajectory;
  bool success = false;
  double final_distance = 0.0;
  /// Per executed step: the winning action sequence and its score.
  std::vector<std::vector<Action>> chosen_sequences;
  std::vector<double> chosen_scores;

  int steps() const { return static_cast<int>(trajectory.length()); }
};

/// Random-shooting MPC in latent space. Each step samples N uniform action
/// sequences of length H, executes the first action of the best-scoring one
/// (earliest sample wins ties), and stops at the goal, on env termination, or
/// after max_env_steps.
PlanEpisode plan_dist_episode(const EnvSpec& spec, const EmbeddingModel& embedding,
                              const LatentDynamics& dyn, const State& start, const State& goal,
                              const PlanConfig& config);

}  // namespace madspace
