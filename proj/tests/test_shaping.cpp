#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "helpers.hpp"
#include "madspace/errors.hpp"
#include "madspace/oracle.hpp"
#include "madspace/shaping.hpp"

using namespace madspace;
using testutil::cell;

namespace {

std::shared_ptr<const EmbeddingModel> random_embedding(std::uint64_t seed, int state_dim = 2) {
  EmbedConfig cfg;
  cfg.embed_dim = 6;
  cfg.hidden = {16};
  cfg.seed = seed;
  return std::make_shared<const EmbeddingModel>(EmbeddingModel::initialize(state_dim, cfg));
}

double env_reward(const State&, Action, const State&) { return -1.0; }

}  // namespace

TEST_SUITE("shaping") {

TEST_CASE("potential and shaping values") {
  const EnvSpec spec = testutil::open_grid(5, 5);
  const State goal = cell(spec, 4, 4);
  const auto embedding = random_embedding(1);
  const ShapedReward shaped(0.9, goal, embedding);
  CHECK(shaped.potential(goal) == 0.0);
  const State s = cell(spec, 1, 2);
  CHECK(shaped.potential(s) == -embedding->dist(s, goal));
  CHECK(shaped.shaping(s, s) == doctest::Approx(-0.1 * shaped.potential(s)));

  const ShapedReward undiscounted(1.0, goal, embedding);
  CHECK(undiscounted.shaping(s, s) == 0.0);

  // Phi = -|x - 4|: one step toward x = 4 with gamma = 1 earns +1.
  const ShapedReward line(1.0, goal, [&](const State& st) { return -std::abs(grid_cell(spec, st).x - 4.0); });
  CHECK(line.shaping(cell(spec, 1, 0), cell(spec, 2, 0)) == 1.0);
  CHECK(line.shaped_reward(cell(spec, 1, 0), -1.0, cell(spec, 2, 0)) == 0.0);
}

TEST_CASE("undiscounted shaping telescopes along any trajectory") {
  const EnvSpec spec = testutil::open_grid(6, 6);
  const State goal = cell(spec, 5, 0);
  const ShapedReward shaped(1.0, goal, random_embedding(2));
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const Trajectory t = testutil::random_walk(spec, reset(spec, rep), 40, rng);
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < t.states.size(); ++i) sum += shaped.shaping(t.states[i], t.states[i + 1]);
    CHECK(sum == doctest::Approx(shaped.potential(t.states.back()) - shaped.potential(t.states.front())));
  }
}

TEST_CASE("shaped value iteration keeps the optimal actions and shifts values by the potential") {
  EnvSpec walls = testutil::open_grid(4, 4);
  walls.kind = EnvKind::kWallsGrid;
  walls.walls = {{1, 1}, {2, 1}, {1, 2}};
  for (const EnvSpec& spec : {testutil::open_grid(3, 3), walls}) {
    const State goal = cell(spec, spec.width - 1, spec.height - 1);
    for (double gamma : {0.9, 0.99}) {
      const ShapedReward shaped(gamma, goal, random_embedding(4));
      const ValueTable plain = value_iteration(spec, goal, env_reward, gamma);
      const ValueTable with = value_iteration(
          spec, goal,
          [&](const State& s, Action a, const State& sn) { return shaped.shaped_reward(s, env_reward(s, a, sn), sn); },
          gamma);
      const StateIndexer indexer(spec);
      const std::size_t g = indexer.index(goal);
      for (std::size_t s = 0; s < indexer.size(); ++s) {
        if (s == g) continue;
        const double phi = shaped.potential(indexer.state(s));
        CHECK(optimal_actions(with.q[s]) == optimal_actions(plain.q[s]));
        CHECK(with.v[s] == doctest::Approx(plain.v[s] - phi).epsilon(1e-9));
        for (std::size_t a = 0; a < plain.q[s].size(); ++a) {
          CHECK(with.q[s][a] == doctest::Approx(plain.q[s][a] - phi).epsilon(1e-9));
        }
      }
    }
  }
}

TEST_CASE("value iteration agrees with the closed form on an open grid") {
  const EnvSpec spec = testutil::open_grid(3, 3);
  const State goal = cell(spec, 2, 2);
  const double gamma = 0.9;
  const ValueTable vt = value_iteration(spec, goal, env_reward, gamma);
  const StateIndexer indexer(spec);
  for (std::size_t s = 0; s < indexer.size(); ++s) {
    const Cell c = grid_cell(spec, indexer.state(s));
    const int d = (2 - c.x) + (2 - c.y);
    // -(1 + gamma + ... + gamma^(d-1))
    CHECK(vt.v[s] == doctest::Approx(-(1 - std::pow(gamma, d)) / (1 - gamma)).epsilon(1e-10));
  }
  CHECK(optimal_actions(std::vector<double>{-1, -2, -1 + 1e-12, -3}) == std::vector<int>{0, 2});
}

TEST_CASE("zero potential reproduces unshaped q-learning bitwise") {
  const EnvSpec spec = testutil::open_grid(5, 5, 60);
  const State goal = cell(spec, 4, 4);
  QConfig cfg;
  cfg.seed = 5;
  const ShapedReward zero(cfg.gamma, goal, [](const State&) { return 0.0; });
  const QLearningResult a = q_learn(spec, goal, nullptr, 80, cfg);
  const QLearningResult b = q_learn(spec, goal, &zero, 80, cfg);
  CHECK(a.table == b.table);
  REQUIRE(a.curve.size() == 80);
  for (std::size_t e = 0; e < a.curve.size(); ++e) {
    CHECK(a.curve[e].steps == b.curve[e].steps);
    CHECK(a.curve[e].env_return == b.curve[e].env_return);
  }
}

TEST_CASE("q-learning reaches the goal and respects episode limits") {
  const EnvSpec spec = testutil::open_grid(5, 5, 40);
  const State goal = cell(spec, 0, 4);
  QConfig cfg;
  cfg.seed = 6;
  const QLearningResult r = q_learn(spec, goal, nullptr, 400, cfg);
  for (const EpisodeStats& e : r.curve) {
    CHECK(e.steps <= 40);
    CHECK(e.env_return == -e.steps);
  }
  REQUIRE(episodes_to_threshold(r.curve).has_value());
  // The learned greedy policy walks a shortest path.
  const MadTable mad = compute_mad(spec);
  for (const State& s : enumerate_states(spec)) {
    if (s == goal) continue;
    State cur = s;
    int steps = 0;
    while (cur != goal && steps < 20) {
      cur = transition(spec, cur, r.table.greedy(cur));
      ++steps;
    }
    CHECK(steps == *mad.mad(s, goal));
  }
  CHECK_THROWS_AS(q_learn(spec, goal, nullptr, -1, cfg), ConfigError);
  EnvSpec hill;
  hill.kind = EnvKind::kMountainHill;
  CHECK_THROWS_AS(q_learn(hill, State{{0.5, 0}}, nullptr, 1, cfg), UnsupportedError);
}

TEST_CASE("episodes_to_threshold") {
  auto curve = [](std::initializer_list<int> flags) {
    std::vector<EpisodeStats> out;
    for (int f : flags) out.push_back({0.0, 1, f == 1});
    return out;
  };
  CHECK(episodes_to_threshold(curve({0, 1, 1, 1}), 2, 1.0) == 3);
  CHECK(episodes_to_threshold(curve({1, 0, 1, 0}), 2, 1.0) == std::nullopt);
  CHECK(episodes_to_threshold(curve({1, 0, 1, 0}), 2, 0.5) == 2);
  CHECK(episodes_to_threshold(curve({1}), 2, 0.5) == std::nullopt);
  CHECK(episodes_to_threshold({}, 20) == std::nullopt);
  CHECK_THROWS_AS(episodes_to_threshold(curve({1}), 0), ValidationError);
}

TEST_CASE("q-table greedy ties and persistence") {
  const EnvSpec spec = testutil::open_grid(3, 3);
  QTable q(spec, 0.0);
  CHECK(q.greedy(cell(spec, 1, 1)) == Action{0});
  const std::size_t i = q.indexer().index(cell(spec, 1, 1));
  q.at(i, 2) = 0.5;
  q.at(i, 3) = 0.5;
  CHECK(q.greedy(cell(spec, 1, 1)) == Action{2});
  q.at(0, 1) = -1.0 / 3.0;
  testutil::TempDir dir("qtable");
  const auto path = dir.path() / "q.txt";
  q.save(path);
  CHECK(QTable::load(spec, path) == q);
  CHECK_THROWS_AS(QTable::load(testutil::open_grid(4, 4), path), ParseError);
}

TEST_CASE("config validation") {
  QConfig cfg;
  cfg.gamma = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.epsilon_start = 2.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

}  // TEST_SUITE
