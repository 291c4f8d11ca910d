#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "madspace/embedding.hpp"
#include "madspace/errors.hpp"
#include "madspace/oracle.hpp"
#include "madspace/replay_buffer.hpp"

using namespace madspace;

namespace {

/// phi(s) = s on two features.
EmbeddingModel identity_embedding(Norm norm = Norm::kL1, bool penalty = true, double alpha = 2.0) {
  Mlp net({2, 2});
  net.layers()[0].weights.setIdentity();
  EmbedConfig cfg;
  cfg.embed_dim = 2;
  cfg.norm = norm;
  cfg.penalty_enabled = penalty;
  cfg.alpha_exponent = alpha;
  return EmbeddingModel(net, cfg);
}

PairSample pair(double ax, double ay, double bx, double by, int d) {
  return {State{{ax, ay}}, State{{bx, by}}, d};
}

std::vector<PairSample> random_pairs(std::mt19937_64& rng, int n, int dim) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> gap(1, 6);
  std::vector<PairSample> out;
  for (int i = 0; i < n; ++i) {
    PairSample p;
    for (int k = 0; k < dim; ++k) {
      p.s.features.push_back(u(rng));
      p.s_prime.features.push_back(u(rng));
    }
    p.d_td = gap(rng);
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_SUITE("embed") {

TEST_CASE("hand-computed losses") {
  const EmbeddingModel m = identity_embedding();
  const std::vector<PairSample> violating{pair(0, 0, 3, 0, 2)};
  const BatchLoss a = loss_batch(m, violating);
  CHECK(a.loss == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(a.penalties[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(a.sample_losses[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(a.distances[0] == 3.0);

  const std::vector<PairSample> slack{pair(0, 0, 1, 0, 2)};
  const BatchLoss b = loss_batch(m, slack);
  CHECK(b.loss == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(b.penalties[0] == 0.0);

  const std::vector<PairSample> exact{pair(0, 0, 1, 1, 2), pair(0.5, 0, 0.5, 3, 3)};
  const BatchLoss c = loss_batch(m, exact);
  CHECK(c.loss == 0.0);
  CHECK(c.penalties == std::vector<double>{0.0, 0.0});

  const BatchLoss no_penalty = loss_batch(identity_embedding(Norm::kL1, false), violating);
  CHECK(no_penalty.loss == doctest::Approx(0.25).epsilon(1e-15));

  const std::vector<PairSample> bad{pair(0, 0, 1, 0, 0)};
  CHECK_THROWS_AS(loss_batch(m, bad), ValidationError);
}

TEST_CASE("distance under each norm") {
  const EmbeddingModel l1 = identity_embedding();
  CHECK(l1.dist(State{{1, 2}}, State{{3, 1}}) == 3.0);
  const EmbeddingModel l2 = identity_embedding(Norm::kL2);
  CHECK(l2.dist(State{{0, 0}}, State{{3, 4}}) == doctest::Approx(5.0));
  CHECK(latent_distance(Eigen::Vector2d(1, 2), Eigen::Vector2d(3, 1), Norm::kL1) == 3.0);
  CHECK_THROWS_AS(latent_distance(Eigen::Vector2d(1, 2), Eigen::Vector3d(3, 1, 0), Norm::kL1),
                  ValidationError);
  CHECK(norm_from_string("l2") == Norm::kL2);
  CHECK_THROWS_AS(norm_from_string("linf"), ConfigError);
}

TEST_CASE("dist is a pseudo-metric on random triples") {
  EmbedConfig cfg;
  cfg.seed = 3;
  for (Norm norm : {Norm::kL1, Norm::kL2}) {
    cfg.norm = norm;
    const EmbeddingModel m = EmbeddingModel::initialize(3, cfg);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
      const State a{{u(rng), u(rng), u(rng)}}, b{{u(rng), u(rng), u(rng)}}, c{{u(rng), u(rng), u(rng)}};
      CHECK(m.dist(a, a) == 0.0);
      CHECK(m.dist(a, b) == m.dist(b, a));
      CHECK(m.dist(a, c) <= m.dist(a, b) + m.dist(b, c) + 1e-12);
      CHECK(m.dist(a, b) >= 0.0);
    }
  }
}

TEST_CASE("embedding shape, determinism and zero network") {
  EmbedConfig cfg;
  cfg.seed = 1;
  const EmbeddingModel m = EmbeddingModel::initialize(2, cfg);
  const State s{{0.25, 0.75}};
  CHECK(m.embed(s).size() == 64);
  CHECK(m.embed(s) == m.embed(s));
  CHECK(m.embed_batch(std::vector<State>{s}).col(0) == m.embed(s));
  CHECK_THROWS_AS(m.embed(State{{0.1}}), ValidationError);

  EmbedConfig small;
  small.embed_dim = 4;
  const EmbeddingModel zero(Mlp({2, 8, 4}), small);
  CHECK(zero.embed(s).isZero());
  CHECK_THROWS_AS(EmbeddingModel(Mlp({2, 8, 5}), small), ConfigError);
}

TEST_CASE("pair weights follow 1/d^alpha") {
  CHECK(pair_weight(2, 2.0) == 0.25);
  CHECK(pair_weight(1, 0.5) == 1.0);
  CHECK_THROWS_AS(pair_weight(0, 2.0), ValidationError);
  for (int d = 2; d < 50; ++d) {
    CHECK(pair_weight(d, 0.5) > pair_weight(d, 2.0));
    CHECK(pair_weight(d, 2.0) < pair_weight(d - 1, 2.0));
    CHECK(pair_weight(d, 0.5) < pair_weight(d - 1, 0.5));
  }
  // A fixed residual of 1 costs exactly the weight, with penalty off.
  const std::vector<PairSample> one{pair(0, 0, 4, 0, 3)};
  CHECK(loss_batch(identity_embedding(Norm::kL1, false, 0.5), one).loss ==
        doctest::Approx(std::pow(3.0, -0.5)));
}

TEST_CASE("loss gradients match central differences away from kinks") {
  std::mt19937_64 rng(5);
  int checked = 0;
  for (Norm norm : {Norm::kL1, Norm::kL2}) {
    for (bool penalty : {true, false}) {
      for (double alpha : {2.0, 0.5}) {
        EmbedConfig cfg;
        cfg.embed_dim = 5;
        cfg.hidden = {12, 12};
        cfg.norm = norm;
        cfg.penalty_enabled = penalty;
        cfg.alpha_exponent = alpha;
        cfg.seed = rng();
        EmbeddingModel m = EmbeddingModel::initialize(3, cfg);
        // Scale the output so distances straddle the targets and the hinge is active for some pairs.
        // The small step keeps SELU's kink at zero out of reach.
        m.net().layers().back().weights *= 8.0;
        const auto batch = random_pairs(rng, 6, 3);
        const BatchLoss base = loss_batch(m, batch);
        bool near_kink = false;
        for (std::size_t i = 0; i < batch.size(); ++i) {
          const Eigen::VectorXd dz = m.embed(batch[i].s) - m.embed(batch[i].s_prime);
          if (dz.cwiseAbs().minCoeff() < 1e-3 || std::abs(base.distances[i] - batch[i].d_td) < 1e-3) {
            near_kink = true;
          }
        }
        if (near_kink) continue;
        const auto check = testutil::finite_difference_check(
            [&](const std::vector<double>& p) {
              EmbeddingModel probe = m;
              probe.net().set_flat_parameters(p);
              return loss_batch(probe, batch).loss;
            },
            m.net().flat_parameters(), flatten(base.grads), 1e-6, 1e-5);
        INFO("norm " << static_cast<int>(norm) << " penalty " << penalty << " alpha " << alpha << " worst "
                     << check.worst << " numeric " << check.worst_numeric << " analytic "
                     << check.worst_analytic << " loss " << base.loss);
        CHECK(check.max_rel_error < 1e-3);
        ++checked;
      }
    }
  }
  CHECK(checked >= 6);
}

TEST_CASE("checkpoint round trip preserves outputs bitwise") {
  EmbedConfig cfg;
  cfg.embed_dim = 8;
  cfg.hidden = {16};
  cfg.norm = Norm::kL2;
  cfg.alpha_exponent = 1.5;
  cfg.penalty_enabled = false;
  cfg.seed = 9;
  EmbeddingModel m = EmbeddingModel::initialize(2, cfg);
  m.set_adjacent_distance(0.8125);
  std::stringstream buf;
  m.save(buf);
  const EmbeddingModel back = EmbeddingModel::load(buf, "embed.ckpt");
  CHECK(back.net() == m.net());
  CHECK(back.config().norm == Norm::kL2);
  CHECK(back.config().alpha_exponent == 1.5);
  CHECK_FALSE(back.config().penalty_enabled);
  CHECK(back.adjacent_distance() == 0.8125);
  const State a{{0.1, 0.2}}, b{{0.9, 0.4}};
  CHECK(back.dist(a, b) == m.dist(a, b));

  std::stringstream bad("madspace_embedding 1\nnorm l3\n");
  CHECK_THROWS_WITH_AS(EmbeddingModel::load(bad, "embed.ckpt"), doctest::Contains("embed.ckpt:2"),
                       ParseError);
}

TEST_CASE("training lowers the loss and writes priorities back") {
  const EnvSpec spec = testutil::open_grid(5, 5);
  std::mt19937_64 rng(6);
  std::vector<Trajectory> trajs;
  for (int k = 0; k < 20; ++k) trajs.push_back(testutil::random_walk(spec, reset(spec, k), 20, rng));
  EmbedConfig cfg;
  cfg.embed_dim = 8;
  cfg.hidden = {32, 32};
  cfg.batch_size = 64;
  cfg.train_steps = 300;
  cfg.max_gap = 4;
  cfg.log_every = 50;
  cfg.seed = 2;
  PrioritizedBuffer buffer(cfg.per_alpha, cfg.per_epsilon);
  std::vector<EmbedLogEntry> log;
  const EmbeddingModel m = train_embedding(trajs, cfg, buffer, [&](const EmbedLogEntry& e) { log.push_back(e); });
  REQUIRE(log.size() == 6);
  CHECK(log.front().step == 50);
  CHECK(log.back().step == 300);
  CHECK(log.back().loss < log.front().loss);
  CHECK(buffer.size() == extract_pairs(trajs, 4).size());
  std::size_t rewritten = 0;
  for (std::size_t i = 0; i < buffer.size(); ++i) rewritten += buffer.priority(i) != 1.0 ? 1 : 0;
  CHECK(rewritten > buffer.size() / 2);
  REQUIRE(m.adjacent_distance().has_value());
  CHECK(*m.adjacent_distance() == doctest::Approx(mean_adjacent_distance(m, trajs)));

  PrioritizedBuffer again(cfg.per_alpha, cfg.per_epsilon);
  CHECK(train_embedding(trajs, cfg, again).net() == m.net());

  PrioritizedBuffer empty_buffer;
  std::vector<Trajectory> single{Trajectory{{reset(spec, 0)}, {}}};
  CHECK_THROWS_AS(train_embedding(single, cfg, empty_buffer), ValidationError);
}

TEST_CASE("config validation") {
  EmbedConfig cfg;
  cfg.embed_dim = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.alpha_exponent = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.max_gap = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

}  // TEST_SUITE
