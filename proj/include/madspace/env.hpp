#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace madspace {

enum class EnvKind { kOpenGrid, kWallsGrid, kKeyDoorGrid, kMountainHill };

std::string_view to_string(EnvKind kind);
EnvKind env_kind_from_string(std::string_view name);

struct Cell {
  int x = 0;
  int y = 0;
  auto operator<=>(const Cell&) const = default;
};

/// Observation vector. Grids emit coordinates normalized to [0,1]; the key-door
/// world appends a has_key flag; mountain_hill emits (position, velocity).
struct State {
  std::vector<double> features;

  bool operator==(const State&) const = default;
  std::size_t dim() const { return features.size(); }
};

struct Action {
  int index = 0;
  auto operator<=>(const Action&) const = default;
};

// Grid actions. "Up" decreases y.
inline constexpr Action kUp{0};
inline constexpr Action kDown{1};
inline constexpr Action kLeft{2};
inline constexpr Action kRight{3};

// Mountain-hill actions.
inline constexpr Action kPushLeft{0};
inline constexpr Action kIdle{1};
inline constexpr Action kPushRight{2};

struct EnvSpec {
  EnvKind kind = EnvKind::kOpenGrid;
  int width = 10;
  int height = 10;
  std::vector<Cell> walls;
  // Key-door layout; ignored by other kinds.
  Cell start{0, 0};
  Cell key{0, 1};
  Cell door{1, 0};
  int max_episode_steps = 50;
  std::uint64_t rng_seed = 0;

  bool is_grid() const { return kind != EnvKind::kMountainHill; }
  bool is_wall(Cell c) const;
  bool in_bounds(Cell c) const;
  int state_dim() const;
  int num_actions() const;

  /// Throws ConfigError when an invariant does not hold.
  void validate() const;
};

/// Parses the `key = value` config format (`env = "walls_grid"`, `walls = [[x,y], ...]`).
EnvSpec parse_env_spec(std::string_view text);
EnvSpec load_env_spec(const std::filesystem::path& path);
std::string format_env_spec(const EnvSpec& spec);

struct StepResult {
  State state;
  double reward = -1.0;
  bool done = false;
};

State reset(const EnvSpec& spec, std::uint64_t seed);

/// Pure dynamics: the successor of `s` under `a`.
State transition(const EnvSpec& spec, const State& s, Action a);

/// One step under the -1-per-step goal-reaching convention. Grids terminate
/// on reaching `goal` (when given); mountain_hill terminates at position >= 0.5.
StepResult step(const EnvSpec& spec, const State& s, Action a,
                const std::optional<State>& goal = std::nullopt);

/// True when `s` satisfies the environment's own termination rule for `goal`.
bool is_goal(const EnvSpec& spec, const State& s, const std::optional<State>& goal);

/// Every reachable state exactly once, ordered by (has_key, y, x).
std::vector<State> enumerate_states(const EnvSpec& spec);

// Grid feature encoding.
State grid_state(const EnvSpec& spec, Cell cell, bool has_key = false);
Cell grid_cell(const EnvSpec& spec, const State& s);
bool has_key(const State& s);

/// Dense index over the enumerable states of a grid spec.
class StateIndexer {
 public:
  explicit StateIndexer(const EnvSpec& spec);

  std::size_t size() const { return states_.size(); }
  const std::vector<State>& states() const { return states_; }
  const State& state(std::size_t i) const { return states_[i]; }
  std::optional<std::size_t> find(const State& s) const;
  /// Like find, but throws ValidationError for states outside the enumeration.
  std::size_t index(const State& s) const;

 private:
  int cell_key(const State& s) const;

  EnvSpec spec_;
  std::vector<State> states_;
  std::vector<int> dense_;  // cell key -> dense index, -1 if absent
};

/// A running episode with a step budget.
class Episode {
 public:
  Episode(EnvSpec spec, State start, std::optional<State> goal = std::nullopt);

  const State& state() const { return state_; }
  int steps_taken() const { return steps_; }
  bool done() const { return done_; }
  bool reached_goal() const { return reached_; }
  StepResult step(Action a);

 private:
  EnvSpec spec_;
  State state_;
  std::optional<State> goal_;
  int steps_ = 0;
  bool done_ = false;
  bool reached_ = false;
};

}  // namespace madspace
