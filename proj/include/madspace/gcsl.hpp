#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "madspace/env.hpp"
#include "madspace/mlp.hpp"
#include "madspace/trajectory.hpp"

namespace madspace {

/// Hindsight-relabeled behavior cloning tuple: `a` was taken in `s` and the
/// source trajectory reached `goal` exactly `horizon` steps later.
struct GcslTuple {
  State s;
  Action a;
  State goal;
  int horizon = 1;
};

/// Every (s_i, a_i, s_j, j - i) with i < j and j - i <= max_gap.
std::vector<GcslTuple> relabel(const Trajectory& t, std::optional<int> max_gap = std::nullopt);

struct GcslConfig {
  bool horizon_conditioned = true;
  std::vector<int> hidden = {128, 128};
  int batch_size = 256;
  double learning_rate = 5e-4;
  std::int64_t train_steps = 100000;
  std::optional<int> max_gap;
  /// Horizons are divided by this before entering the network; unset uses the
  /// longest trajectory in the dataset.
  std::optional<int> horizon_scale;
  std::uint64_t seed = 0;
  int log_every = 100;

  void validate() const;
};

/// pi(a | s, g[, h]) as logits of an MLP over s ⊕ g ⊕ (h / horizon_scale).
class GcslPolicy {
 public:
  GcslPolicy(Mlp net, int state_dim, int num_actions, bool horizon_conditioned, int horizon_scale);

  static GcslPolicy initialize(int state_dim, int num_actions, const GcslConfig& config,
                               int horizon_scale);

  Eigen::VectorXd input(const State& s, const State& goal, int horizon) const;
  Eigen::VectorXd logits(const State& s, const State& goal, int horizon) const;
  /// Argmax of the logits; ties go to the lowest action index. `horizon` is ignored
  /// by horizon-less policies.
  Action act(const State& s, const State& goal, int horizon) const;

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  int state_dim() const { return state_dim_; }
  int num_actions() const { return num_actions_; }
  bool horizon_conditioned() const { return horizon_conditioned_; }
  int horizon_scale() const { return horizon_scale_; }

  void save(const std::filesystem::path& path) const;
  static GcslPolicy load(const std::filesystem::path& path);

 private:
  Mlp net_;
  int state_dim_;
  int num_actions_;
  bool horizon_conditioned_;
  int horizon_scale_;
};

struct CrossEntropyLoss {
  double loss = 0.0;  // mean over the batch
  MlpGradients grads;
};

CrossEntropyLoss cross_entropy(const GcslPolicy& policy, std::span<const GcslTuple> batch);

GcslPolicy gcsl_train(const std::vector<Trajectory>& trajs, int num_actions,
                      const GcslConfig& config,
                      const std::function<void(std::int64_t, double)>& logger = {});

inline Action gcsl_act(const GcslPolicy& p, const State& s, const State& goal, int h_remaining) {
  return p.act(s, goal, h_remaining);
}

struct GcslEpisode {
  Trajectory trajectory;
  bool success = false;
};

/// Rolls the greedy policy from `start` toward `goal` for at most `budget` steps.
GcslEpisode gcsl_episode(const EnvSpec& spec, const GcslPolicy& policy, const State& start,
                         const State& goal, int budget);

}  // namespace madspace
