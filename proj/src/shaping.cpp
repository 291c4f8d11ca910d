#include "madspace/shaping.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include "madspace/errors.hpp"
#include "madspace/text_io.hpp"

namespace madspace {

ShapedReward::ShapedReward(double gamma, State goal, std::shared_ptr<const EmbeddingModel> embedding)
    : gamma_(gamma), goal_(std::move(goal)) {
  if (!embedding) throw ValidationError("ShapedReward needs an embedding");
  const Eigen::VectorXd z_goal = embedding->embed(goal_);
  potential_ = [embedding = std::move(embedding), z_goal](const State& s) {
    return -embedding->distance(embedding->embed(s), z_goal);
  };
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("shaping gamma must lie in (0, 1]");
}

ShapedReward::ShapedReward(double gamma, State goal, Potential potential)
    : gamma_(gamma), goal_(std::move(goal)), potential_(std::move(potential)) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("shaping gamma must lie in (0, 1]");
}

void QConfig::validate() const {
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ConfigError("Q learning rate must lie in (0, 1]");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("Q gamma must lie in (0, 1]");
  if (epsilon_start < 0.0 || epsilon_start > 1.0 || epsilon_end < 0.0 || epsilon_end > 1.0) {
    throw ConfigError("epsilon must lie in [0, 1]");
  }
  if (epsilon_decay_episodes < 0) throw ConfigError("epsilon_decay_episodes must be >= 0");
}

QTable::QTable(const EnvSpec& spec, double initial_value)
    : indexer_(spec),
      num_actions_(spec.num_actions()),
      values_(indexer_.size() * spec.num_actions(), initial_value) {}

Action QTable::greedy(const State& s) const {
  const auto r = row(indexer_.index(s));
  int best = 0;
  for (int a = 1; a < num_actions_; ++a) {
    if (r[a] > r[best]) best = a;
  }
  return Action{best};
}

void QTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write Q-table " + path.string());
  out << "madspace_qtable 1\nshape " << indexer_.size() << ' ' << num_actions_ << '\n';
  for (std::size_t s = 0; s < indexer_.size(); ++s) {
    out << "row " << s;
    for (int a = 0; a < num_actions_; ++a) out << ' ' << text_io::format_double(at(s, a));
    out << '\n';
  }
}

QTable QTable::load(const EnvSpec& spec, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open Q-table " + path.string());
  text_io::LineReader reader(in, path.string());
  QTable table(spec, 0.0);
  try {
    reader.expect("madspace_qtable");
    const auto shape = reader.expect("shape");
    if (shape.size() != 3 ||
        text_io::parse_int(shape[1]) != static_cast<long long>(table.indexer_.size()) ||
        text_io::parse_int(shape[2]) != table.num_actions_) {
      reader.fail("Q-table shape does not match the environment");
    }
    for (std::size_t s = 0; s < table.indexer_.size(); ++s) {
      const auto tokens = reader.expect("row");
      if (tokens.size() != static_cast<std::size_t>(2 + table.num_actions_) ||
          text_io::parse_int(tokens[1]) != static_cast<long long>(s)) {
        reader.fail("malformed Q-table row");
      }
      for (int a = 0; a < table.num_actions_; ++a) table.at(s, a) = text_io::parse_double(tokens[2 + a]);
    }
  } catch (const ParseError& e) {
    if (std::string(e.what()).rfind(path.string(), 0) == 0) throw;
    reader.fail(e.what());
  }
  return table;
}

QLearningResult q_learn(const EnvSpec& spec, const State& goal, const ShapedReward* shaping,
                        int episodes, const QConfig& config) {
  config.validate();
  if (!spec.is_grid()) throw UnsupportedError("q_learn needs an enumerable environment");
  if (episodes < 0) throw ConfigError("episodes must be >= 0");
  QLearningResult result{QTable(spec, config.initial_q), {}};
  QTable& q = result.table;
  const std::size_t goal_index = q.indexer().index(goal);
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> random_action(0, spec.num_actions() - 1);

  for (int e = 0; e < episodes; ++e) {
    const double frac = config.epsilon_decay_episodes == 0
                            ? 1.0
                            : std::min(1.0, static_cast<double>(e) / config.epsilon_decay_episodes);
    const double epsilon = config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start);
    State s = reset(spec, rng());
    std::size_t si = q.indexer().index(s);
    EpisodeStats stats;
    stats.success = si == goal_index;
    while (!stats.success && stats.steps < spec.max_episode_steps) {
      const Action a = coin(rng) < epsilon ? Action{random_action(rng)} : q.greedy(s);
      const StepResult r = step(spec, s, a, goal);
      const std::size_t ni = q.indexer().index(r.state);
      const double reward = shaping ? shaping->shaped_reward(s, r.reward, r.state) : r.reward;
      double target = reward;
      if (!r.done) {
        const auto next_row = q.row(ni);
        target += config.gamma * *std::max_element(next_row.begin(), next_row.end());
      }
      q.at(si, a.index) += config.learning_rate * (target - q.at(si, a.index));
      stats.env_return += r.reward;
      ++stats.steps;
      stats.success = r.done;
      s = r.state;
      si = ni;
    }
    result.curve.push_back(stats);
  }
  return result;
}

std::optional<int> episodes_to_threshold(const std::vector<EpisodeStats>& curve, int window,
                                         double threshold) {
  if (window < 1) throw ValidationError("window must be >= 1");
  int successes = 0;
  for (std::size_t e = 0; e < curve.size(); ++e) {
    successes += curve[e].success ? 1 : 0;
    if (e >= static_cast<std::size_t>(window)) successes -= curve[e - window].success ? 1 : 0;
    if (e + 1 >= static_cast<std::size_t>(window) &&
        static_cast<double>(successes) / window >= threshold) {
      return static_cast<int>(e + 1);
    }
  }
  return std::nullopt;
}

}  // namespace madspace
