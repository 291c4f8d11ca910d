#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "madspace/embedding.hpp"
#include "madspace/env.hpp"

namespace madspace {

/// Potential-based shaping F = gamma * Phi(s') - Phi(s) with Phi(s) = -d(phi(s), phi(goal)).
class ShapedReward {
 public:
  using Potential = std::function<double(const State&)>;

  ShapedReward(double gamma, State goal, std::shared_ptr<const EmbeddingModel> embedding);
  /// Arbitrary potential; used for the zero-potential baseline and oracle checks.
  ShapedReward(double gamma, State goal, Potential potential);

  double gamma() const { return gamma_; }
  const State& goal() const { return goal_; }
  double potential(const State& s) const { return potential_(s); }
  double shaping(const State& s, const State& s_prime) const {
    return gamma_ * potential(s_prime) - potential(s);
  }
  /// r + F(s, gamma, s').
  double shaped_reward(const State& s, double r, const State& s_prime) const {
    return r + shaping(s, s_prime);
  }

 private:
  double gamma_;
  State goal_;
  Potential potential_;
};

struct QConfig {
  double learning_rate = 0.5;
  double gamma = 0.99;
  double epsilon_start = 0.3;
  double epsilon_end = 0.01;
  /// Episodes over which epsilon decays linearly from start to end.
  int epsilon_decay_episodes = 200;
  double initial_q = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Tabular action values over the enumerated states of a grid.
class QTable {
 public:
  QTable(const EnvSpec& spec, double initial_value);

  const StateIndexer& indexer() const { return indexer_; }
  int num_actions() const { return num_actions_; }
  double& at(std::size_t state, int action) { return values_[state * num_actions_ + action]; }
  double at(std::size_t state, int action) const { return values_[state * num_actions_ + action]; }
  std::span<const double> row(std::size_t state) const {
    return {values_.data() + state * num_actions_, static_cast<std::size_t>(num_actions_)};
  }
  /// Argmax with ties broken toward the lowest action index.
  Action greedy(const State& s) const;
  bool operator==(const QTable& other) const { return values_ == other.values_; }

  void save(const std::filesystem::path& path) const;
  static QTable load(const EnvSpec& spec, const std::filesystem::path& path);

 private:
  StateIndexer indexer_;
  int num_actions_;
  std::vector<double> values_;
};

struct EpisodeStats {
  double env_return = 0.0;  // under the original reward
  int steps = 0;
  bool success = false;
};

struct QLearningResult {
  QTable table;
  std::vector<EpisodeStats> curve;
};

/// Epsilon-greedy tabular Q-learning toward a fixed goal. Starts are drawn with
/// reset(); updates use the shaped reward when `shaping` is given.
QLearningResult q_learn(const EnvSpec& spec, const State& goal, const ShapedReward* shaping,
                        int episodes, const QConfig& config);

/// First episode (1-based) at which the success rate over the trailing `window`
/// episodes reaches `threshold`; nullopt if never.
std::optional<int> episodes_to_threshold(const std::vector<EpisodeStats>& curve, int window = 20,
                                         double threshold = 0.95);

}  // namespace madspace
