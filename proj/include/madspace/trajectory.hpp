#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "madspace/env.hpp"

namespace madspace {

/// s_0, a_0, ..., a_{n-1}, s_n.
struct Trajectory {
  std::vector<State> states;
  std::vector<Action> actions;

  bool operator==(const Trajectory&) const = default;
  std::size_t length() const { return actions.size(); }
  void validate() const;
};

/// Two states from one trajectory, `d_td` decision steps apart.
struct PairSample {
  State s;
  State s_prime;
  int d_td = 1;
};

/// (s, a, s') triple from one trajectory step.
struct TransitionSample {
  State s;
  Action a;
  State s_next;
};

/// All (s_i, s_j, j - i) with i < j and j - i <= max_gap, grouped by gap.
/// Pairs with i == j are never produced.
std::vector<PairSample> extract_pairs(const Trajectory& t,
                                      std::optional<int> max_gap = std::nullopt);
std::vector<PairSample> extract_pairs(const std::vector<Trajectory>& trajs,
                                      std::optional<int> max_gap = std::nullopt);

std::vector<TransitionSample> extract_transitions(const std::vector<Trajectory>& trajs);

/// JSON lines: {"states": [[f, ...], ...], "actions": [i, ...]} per trajectory.
void save_dataset(const std::vector<Trajectory>& trajs, const std::filesystem::path& path);
std::vector<Trajectory> load_dataset(const std::filesystem::path& path);

}  // namespace madspace
