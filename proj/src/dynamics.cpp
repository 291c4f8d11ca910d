#include "madspace/dynamics.hpp"

#include <fstream>
#include <random>

#include "madspace/errors.hpp"
#include "madspace/text_io.hpp"

namespace madspace {

void DynamicsConfig::validate() const {
  if (hidden < 1) throw ConfigError("dynamics hidden size must be >= 1");
  if (batch_size < 1) throw ConfigError("dynamics batch size must be >= 1");
  if (train_steps < 0) throw ConfigError("dynamics train_steps must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("dynamics learning rate must be positive");
}

LatentDynamics::LatentDynamics(Mlp state_branch, Mlp action_branch, Mlp joint_head,
                               int num_actions, bool residual)
    : state_branch_(std::move(state_branch)),
      action_branch_(std::move(action_branch)),
      joint_head_(std::move(joint_head)),
      num_actions_(num_actions),
      residual_(residual) {
  if (action_branch_.input_dim() != num_actions_) {
    throw ConfigError("action branch input must equal the number of actions");
  }
  if (joint_head_.input_dim() != state_branch_.output_dim() + action_branch_.output_dim()) {
    throw ConfigError("joint head input must equal the concatenated branch outputs");
  }
  if (joint_head_.output_dim() != state_branch_.input_dim()) {
    throw ConfigError("joint head output must equal the embedding dimension");
  }
}

LatentDynamics LatentDynamics::initialize(int embed_dim, int num_actions,
                                          const DynamicsConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const int h = config.hidden;
  Mlp state = Mlp::uniform_init({embed_dim, h, h}, rng, Activation::kSelu, Activation::kSelu);
  Mlp action = Mlp::uniform_init({num_actions, h, h}, rng, Activation::kSelu, Activation::kSelu);
  Mlp joint = Mlp::uniform_init({2 * h, h, h, embed_dim}, rng);
  return LatentDynamics(std::move(state), std::move(action), std::move(joint), num_actions,
                        config.residual);
}

Eigen::MatrixXd LatentDynamics::one_hot(std::span<const Action> actions) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(num_actions_, static_cast<Eigen::Index>(actions.size()));
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i].index < 0 || actions[i].index >= num_actions_) {
      throw ValidationError("action " + std::to_string(actions[i].index) + " out of range");
    }
    out(actions[i].index, static_cast<Eigen::Index>(i)) = 1.0;
  }
  return out;
}

Eigen::MatrixXd LatentDynamics::predict_batch(const Eigen::MatrixXd& z,
                                              std::span<const Action> actions,
                                              Cache* cache) const {
  if (z.rows() != embed_dim()) {
    throw ValidationError("dynamics input has dimension " + std::to_string(z.rows()) +
                          ", expected " + std::to_string(embed_dim()));
  }
  if (static_cast<std::size_t>(z.cols()) != actions.size()) {
    throw ValidationError("dynamics: one action per latent column required");
  }
  const Eigen::MatrixXd hs = state_branch_.forward(z, cache ? &cache->state : nullptr);
  const Eigen::MatrixXd ha = action_branch_.forward(one_hot(actions), cache ? &cache->action : nullptr);
  Eigen::MatrixXd joint(hs.rows() + ha.rows(), z.cols());
  joint.topRows(hs.rows()) = hs;
  joint.bottomRows(ha.rows()) = ha;
  Eigen::MatrixXd out = joint_head_.forward(joint, cache ? &cache->joint : nullptr);
  if (residual_) out += z;
  return out;
}

Eigen::VectorXd LatentDynamics::predict(const Eigen::VectorXd& z, Action a) const {
  const Eigen::MatrixXd out = predict_batch(Eigen::MatrixXd(z), std::span<const Action>(&a, 1));
  return out.col(0);
}

DynamicsGradients LatentDynamics::backward(const Cache& cache,
                                           const Eigen::MatrixXd& upstream) const {
  DynamicsGradients g;
  Eigen::MatrixXd d_joint;
  g.joint_head = joint_head_.backward(cache.joint, upstream, &d_joint);
  const Eigen::Index hs = state_branch_.output_dim();
  g.state_branch = state_branch_.backward(cache.state, d_joint.topRows(hs));
  g.action_branch = action_branch_.backward(cache.action, d_joint.bottomRows(d_joint.rows() - hs));
  return g;
}

void LatentDynamics::save(std::ostream& out) const {
  out << "madspace_dynamics 1\nnum_actions " << num_actions_ << "\nresidual "
      << (residual_ ? 1 : 0) << '\n';
  state_branch_.save(out);
  action_branch_.save(out);
  joint_head_.save(out);
}

LatentDynamics LatentDynamics::load(std::istream& in, std::string_view source) {
  text_io::LineReader reader(in, source);
  int num_actions = 0;
  bool residual = true;
  try {
    const auto header = reader.expect("madspace_dynamics");
    if (header.size() != 2 || header[1] != "1") reader.fail("unsupported dynamics version");
    num_actions = static_cast<int>(text_io::parse_int(reader.value("num_actions")));
    residual = text_io::parse_int(reader.value("residual")) != 0;
  } catch (const ParseError& e) {
    if (std::string(e.what()).rfind(std::string(source), 0) == 0) throw;
    reader.fail(e.what());
  }
  Mlp state = Mlp::load(in, source);
  Mlp action = Mlp::load(in, source);
  Mlp joint = Mlp::load(in, source);
  try {
    return LatentDynamics(std::move(state), std::move(action), std::move(joint), num_actions,
                          residual);
  } catch (const ConfigError& e) {
    throw ParseError(std::string(source) + ": " + e.what());
  }
}

void LatentDynamics::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dynamics checkpoint " + path.string());
  save(out);
}

LatentDynamics LatentDynamics::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dynamics checkpoint " + path.string());
  return load(in, path.string());
}

DynamicsLoss dynamics_loss(const LatentDynamics& dyn, const Eigen::MatrixXd& z,
                           std::span<const Action> actions, const Eigen::MatrixXd& z_next) {
  LatentDynamics::Cache cache;
  const Eigen::MatrixXd pred = dyn.predict_batch(z, actions, &cache);
  if (pred.rows() != z_next.rows() || pred.cols() != z_next.cols()) {
    throw ValidationError("dynamics_loss: target shape mismatch");
  }
  const Eigen::MatrixXd err = pred - z_next;
  DynamicsLoss out;
  out.loss = err.squaredNorm();
  out.grads = dyn.backward(cache, 2.0 * err);
  return out;
}

LatentDynamics train_dynamics(const std::vector<Trajectory>& trajs, const EmbeddingModel& embedding,
                              int num_actions, const DynamicsConfig& config,
                              const DynamicsLogger& logger) {
  config.validate();
  const auto triples = extract_transitions(trajs);
  if (triples.empty()) throw ValidationError("train_dynamics: the dataset has no transitions");

  // The embedding is frozen, so targets are computed once.
  std::vector<State> from;
  std::vector<State> to;
  std::vector<Action> actions;
  for (const TransitionSample& t : triples) {
    from.push_back(t.s);
    to.push_back(t.s_next);
    actions.push_back(t.a);
  }
  const Eigen::MatrixXd z_from = embedding.embed_batch(from);
  const Eigen::MatrixXd z_to = embedding.embed_batch(to);

  LatentDynamics dyn = LatentDynamics::initialize(embedding.embed_dim(), num_actions, config);
  AdamW opt_state(dyn.state_branch(), {.learning_rate = config.learning_rate,
                                       .weight_decay = config.weight_decay});
  AdamW opt_action(dyn.action_branch(), {.learning_rate = config.learning_rate,
                                         .weight_decay = config.weight_decay});
  AdamW opt_joint(dyn.joint_head(), {.learning_rate = config.learning_rate,
                                     .weight_decay = config.weight_decay});
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, triples.size() - 1);

  const Eigen::Index b = config.batch_size;
  Eigen::MatrixXd zb(z_from.rows(), b);
  Eigen::MatrixXd zn(z_from.rows(), b);
  std::vector<Action> ab(b);
  for (std::int64_t step = 1; step <= config.train_steps; ++step) {
    for (Eigen::Index i = 0; i < b; ++i) {
      const std::size_t k = pick(rng);
      zb.col(i) = z_from.col(static_cast<Eigen::Index>(k));
      zn.col(i) = z_to.col(static_cast<Eigen::Index>(k));
      ab[i] = actions[k];
    }
    DynamicsLoss result = dynamics_loss(dyn, zb, ab, zn);
    opt_state.step(dyn.state_branch(), result.grads.state_branch);
    opt_action.step(dyn.action_branch(), result.grads.action_branch);
    opt_joint.step(dyn.joint_head(), result.grads.joint_head);
    if (logger && config.log_every > 0 && step % config.log_every == 0) logger(step, result.loss);
  }
  return dyn;
}

std::vector<Eigen::VectorXd> rollout(const LatentDynamics& dyn, const Eigen::VectorXd& z0,
                                     std::span<const Action> actions) {
  if (z0.size() != dyn.embed_dim()) {
    throw ValidationError("rollout: latent has dimension " + std::to_string(z0.size()) +
                          ", expected " + std::to_string(dyn.embed_dim()));
  }
  std::vector<Eigen::VectorXd> out;
  out.reserve(actions.size());
  Eigen::VectorXd z = z0;
  for (Action a : actions) {
    z = dyn.predict(z, a);
    out.push_back(z);
  }
  return out;
}

double mean_one_step_error(const LatentDynamics& dyn, const EmbeddingModel& embedding,
                           const std::vector<Trajectory>& trajs) {
  const auto triples = extract_transitions(trajs);
  if (triples.empty()) throw ValidationError("mean_one_step_error: no transitions");
  std::vector<State> from;
  std::vector<State> to;
  std::vector<Action> actions;
  for (const TransitionSample& t : triples) {
    from.push_back(t.s);
    to.push_back(t.s_next);
    actions.push_back(t.a);
  }
  const Eigen::MatrixXd pred = dyn.predict_batch(embedding.embed_batch(from), actions);
  const Eigen::MatrixXd target = embedding.embed_batch(to);
  return (pred - target).cwiseAbs().colwise().sum().mean();
}

}  // namespace madspace
