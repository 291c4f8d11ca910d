#include "madspace/gcsl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "madspace/errors.hpp"
#include "madspace/text_io.hpp"

namespace madspace {

std::vector<GcslTuple> relabel(const Trajectory& t, std::optional<int> max_gap) {
  t.validate();
  if (max_gap && *max_gap < 1) throw ValidationError("max_gap must be >= 1");
  const int n = static_cast<int>(t.length());
  std::vector<GcslTuple> out;
  for (int i = 0; i < n; ++i) {
    const int last = max_gap ? std::min(n, i + *max_gap) : n;
    for (int j = i + 1; j <= last; ++j) out.push_back({t.states[i], t.actions[i], t.states[j], j - i});
  }
  return out;
}

void GcslConfig::validate() const {
  if (batch_size < 1) throw ConfigError("GCSL batch size must be >= 1");
  if (train_steps < 0) throw ConfigError("GCSL train_steps must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("GCSL learning rate must be positive");
  if (max_gap && *max_gap < 1) throw ConfigError("GCSL max_gap must be >= 1");
  if (horizon_scale && *horizon_scale < 1) throw ConfigError("GCSL horizon_scale must be >= 1");
}

GcslPolicy::GcslPolicy(Mlp net, int state_dim, int num_actions, bool horizon_conditioned,
                       int horizon_scale)
    : net_(std::move(net)),
      state_dim_(state_dim),
      num_actions_(num_actions),
      horizon_conditioned_(horizon_conditioned),
      horizon_scale_(horizon_scale) {
  if (net_.input_dim() != 2 * state_dim_ + (horizon_conditioned_ ? 1 : 0)) {
    throw ConfigError("GCSL network input does not match state and horizon encoding");
  }
  if (net_.output_dim() != num_actions_) throw ConfigError("GCSL network must output one logit per action");
  if (horizon_scale_ < 1) throw ConfigError("GCSL horizon_scale must be >= 1");
}

GcslPolicy GcslPolicy::initialize(int state_dim, int num_actions, const GcslConfig& config,
                                  int horizon_scale) {
  config.validate();
  std::vector<int> dims{2 * state_dim + (config.horizon_conditioned ? 1 : 0)};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(num_actions);
  std::mt19937_64 rng(config.seed);
  return GcslPolicy(Mlp::uniform_init(dims, rng), state_dim, num_actions,
                    config.horizon_conditioned, horizon_scale);
}

Eigen::VectorXd GcslPolicy::input(const State& s, const State& goal, int horizon) const {
  if (static_cast<int>(s.dim()) != state_dim_ || static_cast<int>(goal.dim()) != state_dim_) {
    throw ValidationError("GCSL state has the wrong dimension");
  }
  Eigen::VectorXd x(net_.input_dim());
  for (int i = 0; i < state_dim_; ++i) {
    x(i) = s.features[i];
    x(state_dim_ + i) = goal.features[i];
  }
  if (horizon_conditioned_) x(2 * state_dim_) = static_cast<double>(horizon) / horizon_scale_;
  return x;
}

Eigen::VectorXd GcslPolicy::logits(const State& s, const State& goal, int horizon) const {
  return net_.forward(input(s, goal, horizon));
}

Action GcslPolicy::act(const State& s, const State& goal, int horizon) const {
  const Eigen::VectorXd l = logits(s, goal, horizon);
  int best = 0;
  for (int a = 1; a < num_actions_; ++a) {
    if (l(a) > l(best)) best = a;
  }
  return Action{best};
}

void GcslPolicy::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write GCSL checkpoint " + path.string());
  out << "madspace_gcsl 1\nstate_dim " << state_dim_ << "\nnum_actions " << num_actions_
      << "\nhorizon_conditioned " << (horizon_conditioned_ ? 1 : 0) << "\nhorizon_scale "
      << horizon_scale_ << '\n';
  net_.save(out);
}

GcslPolicy GcslPolicy::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open GCSL checkpoint " + path.string());
  text_io::LineReader reader(in, path.string());
  int state_dim = 0, num_actions = 0, scale = 1;
  bool conditioned = true;
  try {
    reader.expect("madspace_gcsl");
    state_dim = static_cast<int>(text_io::parse_int(reader.value("state_dim")));
    num_actions = static_cast<int>(text_io::parse_int(reader.value("num_actions")));
    conditioned = text_io::parse_int(reader.value("horizon_conditioned")) != 0;
    scale = static_cast<int>(text_io::parse_int(reader.value("horizon_scale")));
  } catch (const ParseError& e) {
    if (std::string(e.what()).rfind(path.string(), 0) == 0) throw;
    reader.fail(e.what());
  }
  Mlp net = Mlp::load(in, path.string());
  try {
    return GcslPolicy(std::move(net), state_dim, num_actions, conditioned, scale);
  } catch (const ConfigError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

CrossEntropyLoss cross_entropy(const GcslPolicy& policy, std::span<const GcslTuple> batch) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  if (b == 0) throw ValidationError("cross_entropy: empty batch");
  Eigen::MatrixXd x(policy.net().input_dim(), b);
  for (Eigen::Index i = 0; i < b; ++i) {
    if (batch[i].a.index < 0 || batch[i].a.index >= policy.num_actions()) {
      throw ValidationError("cross_entropy: action out of range");
    }
    x.col(i) = policy.input(batch[i].s, batch[i].goal, batch[i].horizon);
  }
  ForwardCache cache;
  const Eigen::MatrixXd logits = policy.net().forward(x, &cache);
  Eigen::MatrixXd upstream(logits.rows(), b);
  CrossEntropyLoss out;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double top = logits.col(i).maxCoeff();
    const Eigen::VectorXd e = (logits.col(i).array() - top).exp();
    const double z = e.sum();
    const int a = batch[i].a.index;
    out.loss += -(logits(a, i) - top - std::log(z));
    upstream.col(i) = e / z;
    upstream(a, i) -= 1.0;
  }
  out.loss /= static_cast<double>(b);
  upstream /= static_cast<double>(b);
  out.grads = policy.net().backward(cache, upstream);
  return out;
}

GcslPolicy gcsl_train(const std::vector<Trajectory>& trajs, int num_actions,
                      const GcslConfig& config,
                      const std::function<void(std::int64_t, double)>& logger) {
  config.validate();
  std::vector<GcslTuple> tuples;
  int longest = 1;
  for (const Trajectory& t : trajs) {
    auto r = relabel(t, config.max_gap);
    tuples.insert(tuples.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
    longest = std::max(longest, static_cast<int>(t.length()));
  }
  if (tuples.empty()) throw ValidationError("gcsl_train: the dataset yields no relabeled tuples");
  const int state_dim = static_cast<int>(tuples.front().s.dim());
  GcslPolicy policy = GcslPolicy::initialize(state_dim, num_actions, config,
                                             config.horizon_scale.value_or(longest));
  AdamW optimizer(policy.net(), {.learning_rate = config.learning_rate});
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, tuples.size() - 1);
  std::vector<GcslTuple> batch(config.batch_size);
  for (std::int64_t step = 1; step <= config.train_steps; ++step) {
    for (GcslTuple& t : batch) t = tuples[pick(rng)];
    const CrossEntropyLoss result = cross_entropy(policy, batch);
    optimizer.step(policy.net(), result.grads);
    if (logger && config.log_every > 0 && step % config.log_every == 0) logger(step, result.loss);
  }
  return policy;
}

GcslEpisode gcsl_episode(const EnvSpec& spec, const GcslPolicy& policy, const State& start,
                         const State& goal, int budget) {
  if (policy.num_actions() != spec.num_actions()) {
    throw ValidationError("GCSL policy and environment disagree on the action count");
  }
  GcslEpisode ep;
  ep.trajectory.states.push_back(start);
  State s = start;
  ep.success = is_goal(spec, s, goal);
  while (!ep.success && static_cast<int>(ep.trajectory.length()) < budget) {
    const int remaining = budget - static_cast<int>(ep.trajectory.length());
    const Action a = policy.act(s, goal, remaining);
    const StepResult r = step(spec, s, a, goal);
    ep.trajectory.actions.push_back(a);
    ep.trajectory.states.push_back(r.state);
    s = r.state;
    ep.success = r.done;
    if (r.done) break;
  }
  return ep;
}

}  // namespace madspace
