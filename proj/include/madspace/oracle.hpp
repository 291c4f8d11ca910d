#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "madspace/embedding.hpp"
#include "madspace/env.hpp"
#include "madspace/trajectory.hpp"

namespace madspace {

/// Exact directed minimum action distances over an enumerable deterministic env.
class MadTable {
 public:
  static constexpr int kUnreachable = -1;

  MadTable(StateIndexer indexer, std::vector<int> distances);

  std::size_t size() const { return indexer_.size(); }
  const StateIndexer& indexer() const { return indexer_; }
  const std::vector<State>& states() const { return indexer_.states(); }

  /// Directed distance by dense index; kUnreachable when no path exists.
  int at(std::size_t from, std::size_t to) const { return dist_[from * size() + to]; }
  std::optional<int> mad(const State& from, const State& to) const;
  /// min(MAD(s, s'), MAD(s', s)), or nullopt when neither direction is reachable.
  std::optional<int> symmetric(std::size_t a, std::size_t b) const;
  std::optional<int> symmetric(const State& a, const State& b) const;

  /// Empty string when MAD(s,s) = 0, the triangle inequality and one-step
  /// consistency all hold; otherwise a description of the first failure.
  std::string audit(const EnvSpec& spec) const;

 private:
  StateIndexer indexer_;
  std::vector<int> dist_;
};

/// Breadth-first search from every state over the one-step transition graph.
MadTable compute_mad(const EnvSpec& spec);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

struct EvalReport {
  std::optional<double> mae;
  std::optional<double> spearman;
  std::optional<double> violation_rate;
  std::optional<double> success_rate;
  std::optional<double> mean_path_ratio;
  std::size_t pairs_evaluated = 0;
  std::size_t unreachable_pairs = 0;
  std::size_t episodes = 0;

  /// Flat `key = value` lines; undefined metrics are written as `undefined`.
  std::string to_text() const;
};

/// MAE and Spearman of dist against symmetric MAD over unordered pairs of
/// distinct states with finite symmetric MAD. `pairs` restricts the evaluation
/// to the given (i, j) dense-index pairs; by default every pair is used.
EvalReport evaluate_embedding(const EmbeddingModel& embedding, const MadTable& mad,
                              std::optional<std::span<const std::pair<std::size_t, std::size_t>>>
                                  pairs = std::nullopt);

/// Fraction of dataset pairs (i < j, gap <= max_gap) with dist > d_td + tolerance.
double violation_rate(const EmbeddingModel& embedding, const std::vector<Trajectory>& trajs,
                      std::optional<int> max_gap = std::nullopt, double tolerance = 0.5);

struct EpisodeRecord {
  State start;
  State goal;
  int steps = 0;
  bool success = false;
  double final_distance = 0.0;
};

/// Success rate, and mean steps / MAD(start, goal) over successful episodes with
/// start != goal (undefined when there are none).
EvalReport evaluate_planner(std::span<const EpisodeRecord> episodes, const MadTable& mad);

/// Optimal action values for reaching `goal` under reward r(s, a, s') with
/// the goal absorbing (value 0). One row per dense state, one column per action.
struct ValueTable {
  std::vector<std::vector<double>> q;
  std::vector<double> v;
};
using RewardFn = std::function<double(const State& s, Action a, const State& s_next)>;
ValueTable value_iteration(const EnvSpec& spec, const State& goal, const RewardFn& reward,
                           double gamma, double tolerance = 1e-13, int max_sweeps = 100000);

/// Indices of actions within `tolerance` of the row maximum.
std::vector<int> optimal_actions(std::span<const double> q_row, double tolerance = 1e-9);

}  // namespace madspace
