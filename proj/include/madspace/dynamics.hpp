#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "madspace/embedding.hpp"
#include "madspace/mlp.hpp"
#include "madspace/trajectory.hpp"

namespace madspace {

struct DynamicsConfig {
  int hidden = 128;
  int batch_size = 512;
  double learning_rate = 5e-4;
  double weight_decay = 0.0;
  std::int64_t train_steps = 10000;
  /// Predict z + f(z, a) instead of f(z, a) directly.
  bool residual = true;
  std::uint64_t seed = 0;
  int log_every = 100;

  void validate() const;
};

struct DynamicsGradients {
  MlpGradients state_branch;
  MlpGradients action_branch;
  MlpGradients joint_head;
};

/// rho(z, a): a state branch on z and an action branch on one-hot(a), concatenated
/// and fed to a joint head that outputs the next embedding.
class LatentDynamics {
 public:
  struct Cache {
    ForwardCache state;
    ForwardCache action;
    ForwardCache joint;
  };

  LatentDynamics(Mlp state_branch, Mlp action_branch, Mlp joint_head, int num_actions,
                 bool residual);

  static LatentDynamics initialize(int embed_dim, int num_actions, const DynamicsConfig& config);

  Eigen::VectorXd predict(const Eigen::VectorXd& z, Action a) const;
  /// One column of `z` per entry of `actions`.
  Eigen::MatrixXd predict_batch(const Eigen::MatrixXd& z, std::span<const Action> actions,
                                Cache* cache = nullptr) const;
  /// Gradients of a scalar loss given d loss / d prediction.
  DynamicsGradients backward(const Cache& cache, const Eigen::MatrixXd& upstream) const;

  int embed_dim() const { return state_branch_.input_dim(); }
  int num_actions() const { return num_actions_; }
  bool residual() const { return residual_; }
  const Mlp& state_branch() const { return state_branch_; }
  const Mlp& action_branch() const { return action_branch_; }
  const Mlp& joint_head() const { return joint_head_; }
  Mlp& state_branch() { return state_branch_; }
  Mlp& action_branch() { return action_branch_; }
  Mlp& joint_head() { return joint_head_; }

  bool operator==(const LatentDynamics&) const = default;

  void save(const std::filesystem::path& path) const;
  static LatentDynamics load(const std::filesystem::path& path);
  void save(std::ostream& out) const;
  static LatentDynamics load(std::istream& in, std::string_view source);

 private:
  Eigen::MatrixXd one_hot(std::span<const Action> actions) const;

  Mlp state_branch_;
  Mlp action_branch_;
  Mlp joint_head_;
  int num_actions_ = 0;
  bool residual_ = true;
};

struct DynamicsLoss {
  double loss = 0.0;
  DynamicsGradients grads;
};

/// Sum of squared errors between rho(z, a) and z_next (one column per sample).
DynamicsLoss dynamics_loss(const LatentDynamics& dyn, const Eigen::MatrixXd& z,
                           std::span<const Action> actions, const Eigen::MatrixXd& z_next);

using DynamicsLogger = std::function<void(std::int64_t step, double loss)>;

/// Fits rho on every (s, a, s') of the dataset with the embedding held fixed.
LatentDynamics train_dynamics(const std::vector<Trajectory>& trajs, const EmbeddingModel& embedding,
                              int num_actions, const DynamicsConfig& config,
                              const DynamicsLogger& logger = {});

/// [z_1, ..., z_H] from z_{t+1} = rho(z_t, a_t).
std::vector<Eigen::VectorXd> rollout(const LatentDynamics& dyn, const Eigen::VectorXd& z0,
                                     std::span<const Action> actions);

/// Mean L1 error of one-step predictions over the dataset's transitions.
double mean_one_step_error(const LatentDynamics& dyn, const EmbeddingModel& embedding,
                           const std::vector<Trajectory>& trajs);

}  // namespace madspace
