#include "madspace/embedding.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "madspace/errors.hpp"
#include "madspace/text_io.hpp"

namespace madspace {
namespace {

/// `stacked` holds the B first states in columns [0, B) and their partners in [B, 2B).
BatchLoss loss_from_columns(const EmbeddingModel& model, const Eigen::MatrixXd& stacked,
                            const std::vector<int>& gaps) {
  const auto& cfg = model.config();
  const Eigen::Index batch = static_cast<Eigen::Index>(gaps.size());
  ForwardCache cache;
  const Eigen::MatrixXd z = model.net().forward(stacked, &cache);
  const Eigen::MatrixXd diff = z.leftCols(batch) - z.rightCols(batch);

  BatchLoss out;
  out.penalties.resize(batch);
  out.sample_losses.resize(batch);
  out.distances.resize(batch);
  Eigen::MatrixXd upstream(z.rows(), 2 * batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const double d = gaps[i];
    const double w = pair_weight(gaps[i], cfg.alpha_exponent);
    const double dist = cfg.norm == Norm::kL1 ? diff.col(i).lpNorm<1>() : diff.col(i).norm();
    const double residual = dist - d;
    const double violation = std::max(0.0, residual);
    const double penalty = cfg.penalty_enabled ? w * violation * violation : 0.0;
    const double regression = w * residual * residual;
    out.distances[i] = dist;
    out.penalties[i] = penalty;
    out.sample_losses[i] = regression + penalty;
    out.loss += regression + penalty;

    const double dloss_ddist =
        2.0 * w * residual + (cfg.penalty_enabled ? 2.0 * w * violation : 0.0);
    Eigen::VectorXd ddist_ddiff;
    if (cfg.norm == Norm::kL1) {
      ddist_ddiff = diff.col(i).unaryExpr([](double v) {
        return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      });
    } else {
      ddist_ddiff = dist > 0.0 ? Eigen::VectorXd(diff.col(i) / dist)
                               : Eigen::VectorXd::Zero(diff.rows());
    }
    upstream.col(i) = dloss_ddist * ddist_ddiff;
    upstream.col(batch + i) = -upstream.col(i);
  }
  out.grads = model.net().backward(cache, upstream);
  return out;
}

void check_state(const EmbeddingModel& model, const State& s) {
  if (static_cast<int>(s.dim()) != model.state_dim()) {
    throw ValidationError("state has dimension " + std::to_string(s.dim()) +
                          ", embedding expects " + std::to_string(model.state_dim()));
  }
}

}  // namespace

std::string_view to_string(Norm n) { return n == Norm::kL1 ? "l1" : "l2"; }

Norm norm_from_string(std::string_view name) {
  if (name == "l1") return Norm::kL1;
  if (name == "l2") return Norm::kL2;
  throw ConfigError("unknown norm '" + std::string(name) + "' (expected l1 or l2)");
}

void EmbedConfig::validate() const {
  if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
  if (!(alpha_exponent >= 0.0)) throw ConfigError("alpha_exponent must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (train_steps < 0) throw ConfigError("train_steps must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (max_gap && *max_gap < 1) throw ConfigError("max_gap must be >= 1");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden layer sizes must be positive");
  }
}

double latent_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Norm norm) {
  if (a.size() != b.size()) throw ValidationError("latent vectors differ in dimension");
  return norm == Norm::kL1 ? (a - b).lpNorm<1>() : (a - b).norm();
}

double pair_weight(int d_td, double alpha) {
  if (d_td < 1) throw ValidationError("pair with d_td = " + std::to_string(d_td) + " (must be >= 1)");
  return std::pow(static_cast<double>(d_td), -alpha);
}

EmbeddingModel::EmbeddingModel(Mlp net, EmbedConfig config)
    : net_(std::move(net)), config_(std::move(config)) {
  config_.validate();
  if (net_.output_dim() != config_.embed_dim) {
    throw ConfigError("embedding network output does not match embed_dim");
  }
}

EmbeddingModel EmbeddingModel::initialize(int state_dim, const EmbedConfig& config) {
  config.validate();
  std::vector<int> dims{state_dim};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(config.embed_dim);
  std::mt19937_64 rng(config.seed);
  return EmbeddingModel(Mlp::uniform_init(dims, rng), config);
}

Eigen::VectorXd EmbeddingModel::embed(const State& s) const {
  check_state(*this, s);
  return net_.forward(Eigen::VectorXd(
      Eigen::Map<const Eigen::VectorXd>(s.features.data(), s.features.size())));
}

Eigen::MatrixXd EmbeddingModel::embed_batch(std::span<const State> states) const {
  Eigen::MatrixXd x(state_dim(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t i = 0; i < states.size(); ++i) {
    check_state(*this, states[i]);
    x.col(i) = Eigen::Map<const Eigen::VectorXd>(states[i].features.data(), state_dim());
  }
  return net_.forward(x);
}

double EmbeddingModel::dist(const State& s, const State& s_prime) const {
  return distance(embed(s), embed(s_prime));
}

void EmbeddingModel::save(std::ostream& out) const {
  out << "madspace_embedding 1\n";
  out << "norm " << to_string(config_.norm) << '\n';
  out << "alpha_exponent " << text_io::format_double(config_.alpha_exponent) << '\n';
  out << "penalty_enabled " << (config_.penalty_enabled ? 1 : 0) << '\n';
  out << "batch_size " << config_.batch_size << '\n';
  out << "learning_rate " << text_io::format_double(config_.learning_rate) << '\n';
  out << "weight_decay " << text_io::format_double(config_.weight_decay) << '\n';
  out << "train_steps " << config_.train_steps << '\n';
  out << "seed " << config_.seed << '\n';
  out << "adjacent_distance "
      << (adjacent_distance_ ? text_io::format_double(*adjacent_distance_) : "none") << '\n';
  net_.save(out);
}

EmbeddingModel EmbeddingModel::load(std::istream& in, std::string_view source) {
  text_io::LineReader reader(in, source);
  EmbedConfig cfg;
  std::optional<double> adjacent;
  try {
    const auto header = reader.expect("madspace_embedding");
    if (header.size() != 2 || header[1] != "1") reader.fail("unsupported embedding version");
    cfg.norm = norm_from_string(reader.value("norm"));
    cfg.alpha_exponent = text_io::parse_double(reader.value("alpha_exponent"));
    cfg.penalty_enabled = text_io::parse_int(reader.value("penalty_enabled")) != 0;
    cfg.batch_size = static_cast<int>(text_io::parse_int(reader.value("batch_size")));
    cfg.learning_rate = text_io::parse_double(reader.value("learning_rate"));
    cfg.weight_decay = text_io::parse_double(reader.value("weight_decay"));
    cfg.train_steps = text_io::parse_int(reader.value("train_steps"));
    cfg.seed = static_cast<std::uint64_t>(text_io::parse_int(reader.value("seed")));
    const std::string adj = reader.value("adjacent_distance");
    if (adj != "none") adjacent = text_io::parse_double(adj);
  } catch (const ParseError& e) {
    if (std::string(e.what()).rfind(std::string(source), 0) == 0) throw;
    reader.fail(e.what());
  } catch (const ConfigError& e) {
    reader.fail(e.what());
  }
  Mlp net = Mlp::load(in, source);
  cfg.embed_dim = net.output_dim();
  cfg.hidden.assign(net.layer_dims().begin() + 1, net.layer_dims().end() - 1);
  EmbeddingModel model(std::move(net), cfg);
  model.adjacent_distance_ = adjacent;
  return model;
}

void EmbeddingModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write embedding checkpoint " + path.string());
  save(out);
}

EmbeddingModel EmbeddingModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open embedding checkpoint " + path.string());
  return load(in, path.string());
}

BatchLoss loss_batch(const EmbeddingModel& model, std::span<const PairSample> batch) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd stacked(model.state_dim(), 2 * b);
  std::vector<int> gaps(batch.size());
  for (Eigen::Index i = 0; i < b; ++i) {
    const PairSample& p = batch[i];
    if (p.d_td < 1) {
      throw ValidationError("loss_batch: pair " + std::to_string(i) + " has d_td = " +
                            std::to_string(p.d_td));
    }
    check_state(model, p.s);
    check_state(model, p.s_prime);
    stacked.col(i) = Eigen::Map<const Eigen::VectorXd>(p.s.features.data(), model.state_dim());
    stacked.col(b + i) =
        Eigen::Map<const Eigen::VectorXd>(p.s_prime.features.data(), model.state_dim());
    gaps[i] = p.d_td;
  }
  return loss_from_columns(model, stacked, gaps);
}

double mean_adjacent_distance(const EmbeddingModel& model, const std::vector<Trajectory>& trajs) {
  double total = 0.0;
  std::size_t count = 0;
  for (const Trajectory& t : trajs) {
    const Eigen::MatrixXd z = model.embed_batch(t.states);
    for (std::size_t i = 0; i + 1 < t.states.size(); ++i) {
      if (t.states[i] == t.states[i + 1]) continue;
      total += model.distance(z.col(i), z.col(i + 1));
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

EmbeddingModel train_embedding(const std::vector<Trajectory>& trajs, const EmbedConfig& config,
                               PrioritizedBuffer& buffer, const EmbedLogger& logger) {
  config.validate();
  if (trajs.empty()) throw ValidationError("train_embedding: no trajectories");
  buffer.add(extract_pairs(trajs, config.max_gap));
  if (buffer.empty()) throw ValidationError("train_embedding: the dataset yields no state pairs");

  const int state_dim = static_cast<int>(trajs.front().states.front().dim());
  EmbeddingModel model = EmbeddingModel::initialize(state_dim, config);
  AdamW optimizer(model.net(), {.learning_rate = config.learning_rate,
                                .weight_decay = config.weight_decay});
  // Separate stream from the init draws so changing the architecture keeps the batch order.
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  const auto b = static_cast<Eigen::Index>(config.batch_size);
  Eigen::MatrixXd stacked(state_dim, 2 * b);
  std::vector<int> gaps(config.batch_size);
  for (std::int64_t step = 1; step <= config.train_steps; ++step) {
    const auto indices = buffer.sample_indices(config.batch_size, rng);
    for (Eigen::Index i = 0; i < b; ++i) {
      const PairSample& p = buffer.sample(indices[i]);
      stacked.col(i) = Eigen::Map<const Eigen::VectorXd>(p.s.features.data(), state_dim);
      stacked.col(b + i) = Eigen::Map<const Eigen::VectorXd>(p.s_prime.features.data(), state_dim);
      gaps[i] = p.d_td;
    }
    BatchLoss result = loss_from_columns(model, stacked, gaps);
    optimizer.step(model.net(), result.grads);
    buffer.update_priorities(indices, config.priority_mode == PriorityMode::kPenalty
                                          ? result.penalties
                                          : result.sample_losses);
    if (logger && config.log_every > 0 && step % config.log_every == 0) {
      double violation = 0.0;
      for (Eigen::Index i = 0; i < b; ++i) violation += std::max(0.0, result.distances[i] - gaps[i]);
      logger({step, result.loss, violation / static_cast<double>(b)});
    }
  }
  model.set_adjacent_distance(mean_adjacent_distance(model, trajs));
  return model;
}

}  // namespace madspace
