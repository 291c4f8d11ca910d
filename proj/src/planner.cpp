#include "madspace/planner.hpp"

#include <limits>

#include "madspace/errors.hpp"

namespace madspace {
namespace {

double score_from_latent(const LatentDynamics& dyn, const EmbeddingModel& embedding,
                         const Eigen::VectorXd& z0, const Eigen::VectorXd& z_goal,
                         std::span<const Action> actions) {
  double score = -embedding.distance(z0, z_goal);
  for (const Eigen::VectorXd& z : rollout(dyn, z0, actions)) score -= embedding.distance(z, z_goal);
  return score;
}

}  // namespace

void PlanConfig::validate() const {
  if (horizon < 1) throw ConfigError("planner horizon must be >= 1");
  if (num_sequences < 1) throw ConfigError("planner needs at least one sequence");
  if (max_env_steps < 1) throw ConfigError("planner max_env_steps must be >= 1");
  if (goal_eps && !(*goal_eps >= 0.0)) throw ConfigError("goal_eps must be non-negative");
}

double score_sequence(const LatentDynamics& dyn, const EmbeddingModel& embedding, const State& s,
                      const State& goal, std::span<const Action> actions) {
  return score_from_latent(dyn, embedding, embedding.embed(s), embedding.embed(goal), actions);
}

PlanEpisode plan_dist_episode(const EnvSpec& spec, const EmbeddingModel& embedding,
                              const LatentDynamics& dyn, const State& start, const State& goal,
                              const PlanConfig& config) {
  config.validate();
  if (dyn.num_actions() != spec.num_actions()) {
    throw ValidationError("dynamics model and environment disagree on the action count");
  }
  double eps = 0.0;
  if (!spec.is_grid()) {
    if (config.goal_eps) {
      eps = *config.goal_eps;
    } else if (embedding.adjacent_distance()) {
      eps = 0.5 * *embedding.adjacent_distance();
    } else {
      throw ConfigError("planner needs goal_eps: the embedding records no adjacent distance");
    }
  }
  const Eigen::VectorXd z_goal = embedding.embed(goal);
  auto reached = [&](const State& s, double distance) {
    if (spec.is_grid()) return s == goal;
    return distance <= eps || is_goal(spec, s, goal);
  };

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> action_draw(0, spec.num_actions() - 1);

  PlanEpisode ep;
  ep.trajectory.states.push_back(start);
  State s = start;
  Eigen::VectorXd z = embedding.embed(s);
  double distance = embedding.distance(z, z_goal);
  std::vector<std::vector<Action>> sequences(config.num_sequences,
                                             std::vector<Action>(config.horizon));
  while (!reached(s, distance) && ep.steps() < config.max_env_steps) {
    for (auto& seq : sequences) {
      for (Action& a : seq) a = Action{action_draw(rng)};
    }
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < sequences.size(); ++k) {
      const double score = score_from_latent(dyn, embedding, z, z_goal, sequences[k]);
      if (score > best_score) {
        best_score = score;
        best = k;
      }
    }
    const Action a = sequences[best].front();
    const StepResult r = step(spec, s, a, goal);
    ep.chosen_sequences.push_back(sequences[best]);
    ep.chosen_scores.push_back(best_score);
    ep.trajectory.actions.push_back(a);
    ep.trajectory.states.push_back(r.state);
    s = r.state;
    z = embedding.embed(s);
    distance = embedding.distance(z, z_goal);
    if (r.done && !spec.is_grid()) break;
  }
  ep.success = reached(s, distance);
  ep.final_distance = distance;
  return ep;
}

}  // namespace madspace
