#include "madspace/env.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "madspace/errors.hpp"

namespace madspace {
namespace {

constexpr double kHillMinPosition = -1.2;
constexpr double kHillMaxPosition = 0.6;
constexpr double kHillMaxSpeed = 0.07;
constexpr double kHillGoalPosition = 0.5;
constexpr double kHillForce = 0.001;
constexpr double kHillGravity = 0.0025;

std::mt19937_64 seeded_rng(const EnvSpec& spec, std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.rng_seed),
                    static_cast<std::uint32_t>(spec.rng_seed >> 32),
                    static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32)};
  return std::mt19937_64(seq);
}

Cell move(Cell c, Action a) {
  switch (a.index) {
    case 0: return {c.x, c.y - 1};
    case 1: return {c.x, c.y + 1};
    case 2: return {c.x - 1, c.y};
    default: return {c.x + 1, c.y};
  }
}

Cell parse_cell(const nlohmann::json& j, std::string_view key) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() ||
      !j[1].is_number_integer()) {
    throw ConfigError("config key '" + std::string(key) + "' expects [x, y]");
  }
  return {j[0].get<int>(), j[1].get<int>()};
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

std::string_view to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::kOpenGrid: return "open_grid";
    case EnvKind::kWallsGrid: return "walls_grid";
    case EnvKind::kKeyDoorGrid: return "keydoor_grid";
    case EnvKind::kMountainHill: return "mountain_hill";
  }
  return "unknown";
}

EnvKind env_kind_from_string(std::string_view name) {
  if (name == "open_grid") return EnvKind::kOpenGrid;
  if (name == "walls_grid") return EnvKind::kWallsGrid;
  if (name == "keydoor_grid") return EnvKind::kKeyDoorGrid;
  if (name == "mountain_hill") return EnvKind::kMountainHill;
  throw ConfigError("unknown env '" + std::string(name) + "'");
}

bool EnvSpec::is_wall(Cell c) const {
  return std::find(walls.begin(), walls.end(), c) != walls.end();
}

bool EnvSpec::in_bounds(Cell c) const {
  return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height;
}

int EnvSpec::state_dim() const {
  switch (kind) {
    case EnvKind::kKeyDoorGrid: return 3;
    default: return 2;
  }
}

int EnvSpec::num_actions() const { return is_grid() ? 4 : 3; }

void EnvSpec::validate() const {
  if (max_episode_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (!is_grid()) return;
  if (width < 2 || height < 2) throw ConfigError("grid dimensions must be >= 2");
  for (const Cell& w : walls) {
    if (!in_bounds(w)) {
      throw ConfigError("wall (" + std::to_string(w.x) + "," + std::to_string(w.y) +
                        ") lies outside the grid");
    }
  }
  std::vector<Cell> unique_walls = walls;
  std::sort(unique_walls.begin(), unique_walls.end());
  unique_walls.erase(std::unique(unique_walls.begin(), unique_walls.end()),
                     unique_walls.end());
  if (static_cast<int>(unique_walls.size()) >= width * height) {
    throw ConfigError("walls cover every cell of the grid");
  }
  if (kind == EnvKind::kKeyDoorGrid) {
    for (const auto& [name, c] : {std::pair{"start", start}, std::pair{"key", key},
                                  std::pair{"door", door}}) {
      if (!in_bounds(c)) throw ConfigError(std::string(name) + " cell lies outside the grid");
      if (is_wall(c)) throw ConfigError(std::string(name) + " cell is a wall");
    }
    if (start == key || start == door || key == door) {
      throw ConfigError("start, key and door cells must be distinct");
    }
  }
}

EnvSpec parse_env_spec(std::string_view text) {
  EnvSpec spec;
  bool have_env = false;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ParseError("env config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(stripped).substr(0, eq));
    const std::string raw = trim(std::string_view(stripped).substr(eq + 1));
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      throw ParseError("env config line " + std::to_string(line_no) + ": bad value for '" +
                       key + "'");
    }
    try {
      if (key == "env") {
        spec.kind = env_kind_from_string(value.get<std::string>());
        have_env = true;
      } else if (key == "width") {
        spec.width = value.get<int>();
      } else if (key == "height") {
        spec.height = value.get<int>();
      } else if (key == "max_steps") {
        spec.max_episode_steps = value.get<int>();
      } else if (key == "seed") {
        spec.rng_seed = value.get<std::uint64_t>();
      } else if (key == "walls") {
        if (!value.is_array()) throw ConfigError("walls expects a list of [x, y]");
        spec.walls.clear();
        for (const auto& w : value) spec.walls.push_back(parse_cell(w, key));
      } else if (key == "start") {
        spec.start = parse_cell(value, key);
      } else if (key == "key") {
        spec.key = parse_cell(value, key);
      } else if (key == "door") {
        spec.door = parse_cell(value, key);
      } else {
        throw ConfigError("unknown env config key '" + key + "'");
      }
    } catch (const nlohmann::json::exception&) {
      throw ParseError("env config line " + std::to_string(line_no) + ": wrong type for '" +
                       key + "'");
    }
  }
  if (!have_env) throw ConfigError("env config is missing 'env'");
  spec.validate();
  return spec;
}

EnvSpec load_env_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open env config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_env_spec(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string format_env_spec(const EnvSpec& spec) {
  std::ostringstream out;
  out << "env = \"" << to_string(spec.kind) << "\"\n";
  if (spec.is_grid()) {
    out << "width = " << spec.width << "\nheight = " << spec.height << "\n";
    out << "walls = [";
    for (std::size_t i = 0; i < spec.walls.size(); ++i) {
      out << (i ? ", " : "") << "[" << spec.walls[i].x << "," << spec.walls[i].y << "]";
    }
    out << "]\n";
    if (spec.kind == EnvKind::kKeyDoorGrid) {
      out << "start = [" << spec.start.x << "," << spec.start.y << "]\n";
      out << "key = [" << spec.key.x << "," << spec.key.y << "]\n";
      out << "door = [" << spec.door.x << "," << spec.door.y << "]\n";
    }
  }
  out << "max_steps = " << spec.max_episode_steps << "\n";
  out << "seed = " << spec.rng_seed << "\n";
  return out.str();
}

State grid_state(const EnvSpec& spec, Cell cell, bool key) {
  State s;
  s.features.push_back(static_cast<double>(cell.x) / (spec.width - 1));
  s.features.push_back(static_cast<double>(cell.y) / (spec.height - 1));
  if (spec.kind == EnvKind::kKeyDoorGrid) s.features.push_back(key ? 1.0 : 0.0);
  return s;
}

Cell grid_cell(const EnvSpec& spec, const State& s) {
  return {static_cast<int>(std::lround(s.features.at(0) * (spec.width - 1))),
          static_cast<int>(std::lround(s.features.at(1) * (spec.height - 1)))};
}

bool has_key(const State& s) { return s.features.size() == 3 && s.features[2] > 0.5; }

State reset(const EnvSpec& spec, std::uint64_t seed) {
  spec.validate();
  auto rng = seeded_rng(spec, seed);
  switch (spec.kind) {
    case EnvKind::kKeyDoorGrid:
      return grid_state(spec, spec.start, false);
    case EnvKind::kMountainHill: {
      std::uniform_real_distribution<double> pos(-0.6, -0.4);
      return State{{pos(rng), 0.0}};
    }
    default: {
      std::vector<Cell> free;
      for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
          if (!spec.is_wall({x, y})) free.push_back({x, y});
        }
      }
      std::uniform_int_distribution<std::size_t> pick(0, free.size() - 1);
      return grid_state(spec, free[pick(rng)]);
    }
  }
}

State transition(const EnvSpec& spec, const State& s, Action a) {
  if (a.index < 0 || a.index >= spec.num_actions()) {
    throw ValidationError("action " + std::to_string(a.index) + " out of range");
  }
  if (spec.kind == EnvKind::kMountainHill) {
    double position = s.features.at(0);
    double velocity = s.features.at(1);
    velocity += (a.index - 1) * kHillForce + std::cos(3.0 * position) * (-kHillGravity);
    velocity = std::clamp(velocity, -kHillMaxSpeed, kHillMaxSpeed);
    position += velocity;
    position = std::clamp(position, kHillMinPosition, kHillMaxPosition);
    if (position == kHillMinPosition && velocity < 0) velocity = 0;
    return State{{position, velocity}};
  }
  const Cell here = grid_cell(spec, s);
  bool key = has_key(s);
  const Cell next = move(here, a);
  if (!spec.in_bounds(next) || spec.is_wall(next)) return s;
  if (spec.kind == EnvKind::kKeyDoorGrid) {
    if (next == spec.door && !key) return s;
    if (next == spec.key) key = true;
  }
  return grid_state(spec, next, key);
}

bool is_goal(const EnvSpec& spec, const State& s, const std::optional<State>& goal) {
  if (spec.kind == EnvKind::kMountainHill) return s.features.at(0) >= kHillGoalPosition;
  return goal.has_value() && s == *goal;
}

StepResult step(const EnvSpec& spec, const State& s, Action a, const std::optional<State>& goal) {
  StepResult r;
  r.state = transition(spec, s, a);
  r.reward = -1.0;
  r.done = is_goal(spec, r.state, goal);
  return r;
}

std::vector<State> enumerate_states(const EnvSpec& spec) {
  if (!spec.is_grid()) {
    throw UnsupportedError("enumerate_states: " + std::string(to_string(spec.kind)) +
                           " has a continuous state space");
  }
  spec.validate();
  std::vector<State> out;
  if (spec.kind != EnvKind::kKeyDoorGrid) {
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        if (!spec.is_wall({x, y})) out.push_back(grid_state(spec, {x, y}));
      }
    }
    return out;
  }
  // Key-door: breadth-first reachability from the fixed start over (cell, has_key).
  const int cells = spec.width * spec.height;
  std::vector<char> seen(2 * cells, 0);
  auto key_of = [&](const State& s) {
    const Cell c = grid_cell(spec, s);
    return (has_key(s) ? cells : 0) + c.y * spec.width + c.x;
  };
  std::deque<State> frontier{grid_state(spec, spec.start, false)};
  seen[key_of(frontier.front())] = 1;
  while (!frontier.empty()) {
    const State s = frontier.front();
    frontier.pop_front();
    for (int a = 0; a < spec.num_actions(); ++a) {
      State next = transition(spec, s, Action{a});
      const int k = key_of(next);
      if (!seen[k]) {
        seen[k] = 1;
        frontier.push_back(std::move(next));
      }
    }
  }
  for (int k = 0; k < 2 * cells; ++k) {
    if (!seen[k]) continue;
    const int c = k % cells;
    out.push_back(grid_state(spec, {c % spec.width, c / spec.width}, k >= cells));
  }
  return out;
}

StateIndexer::StateIndexer(const EnvSpec& spec)
    : spec_(spec), states_(enumerate_states(spec)), dense_(2 * spec.width * spec.height, -1) {
  for (std::size_t i = 0; i < states_.size(); ++i) dense_[cell_key(states_[i])] = static_cast<int>(i);
}

int StateIndexer::cell_key(const State& s) const {
  const Cell c = grid_cell(spec_, s);
  if (!spec_.in_bounds(c)) return -1;
  return (has_key(s) ? spec_.width * spec_.height : 0) + c.y * spec_.width + c.x;
}

std::optional<std::size_t> StateIndexer::find(const State& s) const {
  if (s.dim() != static_cast<std::size_t>(spec_.state_dim())) return std::nullopt;
  const int k = cell_key(s);
  if (k < 0 || dense_[k] < 0) return std::nullopt;
  const auto i = static_cast<std::size_t>(dense_[k]);
  if (states_[i] != s) return std::nullopt;
  return i;
}

std::size_t StateIndexer::index(const State& s) const {
  const auto i = find(s);
  if (!i) throw ValidationError("state is not one of the enumerated states");
  return *i;
}

Episode::Episode(EnvSpec spec, State start, std::optional<State> goal)
    : spec_(std::move(spec)), state_(std::move(start)), goal_(std::move(goal)) {
  reached_ = is_goal(spec_, state_, goal_);
  done_ = reached_;
}

StepResult Episode::step(Action a) {
  if (done_) throw ValidationError("episode already finished");
  StepResult r = madspace::step(spec_, state_, a, goal_);
  state_ = r.state;
  ++steps_;
  reached_ = r.done;
  if (steps_ >= spec_.max_episode_steps) r.done = true;
  done_ = r.done;
  return r;
}

}  // namespace madspace
