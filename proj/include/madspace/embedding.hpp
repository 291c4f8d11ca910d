#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "madspace/mlp.hpp"
#include "madspace/replay_buffer.hpp"
#include "madspace/trajectory.hpp"

namespace madspace {

enum class Norm { kL1, kL2 };

std::string_view to_string(Norm n);
Norm norm_from_string(std::string_view name);

/// Which per-sample quantity is written back to the replay buffer as priority.
enum class PriorityMode { kPenalty, kFullLoss };

struct EmbedConfig {
  int embed_dim = 64;
  Norm norm = Norm::kL1;
  /// Pair weight is 1 / d_td^alpha_exponent; 2 gives the range-normalized weighting.
  double alpha_exponent = 2.0;
  bool penalty_enabled = true;
  std::vector<int> hidden = {128, 128};
  int batch_size = 512;
  double learning_rate = 5e-4;
  double weight_decay = 0.0;
  std::int64_t train_steps = 100000;
  std::uint64_t seed = 0;
  std::optional<int> max_gap;
  double per_alpha = 0.6;
  double per_epsilon = 0.1;
  PriorityMode priority_mode = PriorityMode::kPenalty;
  int log_every = 100;

  void validate() const;
};

/// Distance between two embedded points under `norm`.
double latent_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Norm norm);

/// phi: S -> R^embed_dim together with the norm that turns it into a pseudo-metric.
class EmbeddingModel {
 public:
  EmbeddingModel(Mlp net, EmbedConfig config);

  /// Freshly initialized network for `state_dim` inputs, seeded from config.seed.
  static EmbeddingModel initialize(int state_dim, const EmbedConfig& config);

  Eigen::VectorXd embed(const State& s) const;
  /// One column per state.
  Eigen::MatrixXd embed_batch(std::span<const State> states) const;
  double dist(const State& s, const State& s_prime) const;
  double distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return latent_distance(a, b, config_.norm);
  }

  int state_dim() const { return net_.input_dim(); }
  int embed_dim() const { return net_.output_dim(); }
  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  const EmbedConfig& config() const { return config_; }

  /// Mean embedded distance between distinct consecutive dataset states, recorded
  /// by training; the planner's default goal tolerance is half of it.
  std::optional<double> adjacent_distance() const { return adjacent_distance_; }
  void set_adjacent_distance(double d) { adjacent_distance_ = d; }

  void save(const std::filesystem::path& path) const;
  static EmbeddingModel load(const std::filesystem::path& path);
  void save(std::ostream& out) const;
  static EmbeddingModel load(std::istream& in, std::string_view source);

 private:
  Mlp net_;
  EmbedConfig config_;
  std::optional<double> adjacent_distance_;
};

/// 1 / d^alpha.
double pair_weight(int d_td, double alpha);

struct BatchLoss {
  double loss = 0.0;
  /// w_i * max(0, dist_i - d_i)^2 per sample.
  std::vector<double> penalties;
  /// Regression plus penalty per sample.
  std::vector<double> sample_losses;
  std::vector<double> distances;
  MlpGradients grads;
};

/// Sum over the batch of w (dist - d)^2 + w max(0, dist - d)^2 (penalty optional),
/// with gradients through the norm's subgradient (sign(0) = 0 for L1).
BatchLoss loss_batch(const EmbeddingModel& model, std::span<const PairSample> batch);

struct EmbedLogEntry {
  std::int64_t step = 0;
  double loss = 0.0;
  double mean_violation = 0.0;  // mean of max(0, dist - d_td) over the batch
};

using EmbedLogger = std::function<void(const EmbedLogEntry&)>;

/// Fills `buffer` with the dataset's pairs, then runs PER-sampled AdamW steps,
/// writing each batch's per-sample penalties (or losses) back as priorities.
EmbeddingModel train_embedding(const std::vector<Trajectory>& trajs, const EmbedConfig& config,
                               PrioritizedBuffer& buffer, const EmbedLogger& logger = {});

/// Mean embedded distance over consecutive, non-identical states of the dataset.
double mean_adjacent_distance(const EmbeddingModel& model, const std::vector<Trajectory>& trajs);

}  // namespace madspace
