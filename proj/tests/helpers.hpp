#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "madspace/env.hpp"
#include "madspace/trajectory.hpp"

namespace testutil {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("madspace_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline madspace::EnvSpec open_grid(int w, int h, int max_steps = 50) {
  madspace::EnvSpec spec;
  spec.kind = madspace::EnvKind::kOpenGrid;
  spec.width = w;
  spec.height = h;
  spec.max_episode_steps = max_steps;
  return spec;
}

inline madspace::State cell(const madspace::EnvSpec& spec, int x, int y, bool key = false) {
  return madspace::grid_state(spec, {x, y}, key);
}

/// Uniform random walk of exactly `steps` actions.
inline madspace::Trajectory random_walk(const madspace::EnvSpec& spec, const madspace::State& start,
                                        int steps, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, spec.num_actions() - 1);
  madspace::Trajectory t;
  t.states.push_back(start);
  for (int i = 0; i < steps; ++i) {
    const madspace::Action a{pick(rng)};
    t.actions.push_back(a);
    t.states.push_back(madspace::transition(spec, t.states.back(), a));
  }
  return t;
}

/// All-pairs shortest paths by Floyd-Warshall over the one-step graph; -1 = unreachable.
inline std::vector<std::vector<int>> floyd_warshall(const madspace::EnvSpec& spec,
                                                    const std::vector<madspace::State>& states) {
  const std::size_t n = states.size();
  constexpr int inf = 1 << 28;
  std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
  auto index_of = [&](const madspace::State& s) {
    for (std::size_t i = 0; i < n; ++i) {
      if (states[i] == s) return i;
    }
    return n;
  };
  for (std::size_t i = 0; i < n; ++i) {
    d[i][i] = 0;
    for (int a = 0; a < spec.num_actions(); ++a) {
      const std::size_t j = index_of(madspace::transition(spec, states[i], madspace::Action{a}));
      if (j < n && j != i) d[i][j] = 1;
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (d[i][k] + d[k][j] < d[i][j]) d[i][j] = d[i][k] + d[k][j];
      }
    }
  }
  for (auto& row : d) {
    for (int& v : row) {
      if (v >= inf) v = -1;
    }
  }
  return d;
}

}  // namespace testutil
