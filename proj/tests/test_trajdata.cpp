#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>

#include "helpers.hpp"
#include "madspace/errors.hpp"
#include "madspace/oracle.hpp"
#include "madspace/replay_buffer.hpp"
#include "madspace/trajectory.hpp"

using namespace madspace;
namespace fs = std::filesystem;

namespace {

Trajectory letters(int n) {
  Trajectory t;
  for (int i = 0; i <= n; ++i) t.states.push_back(State{{static_cast<double>(i)}});
  for (int i = 0; i < n; ++i) t.actions.push_back(Action{i % 4});
  return t;
}

PairSample dummy(int k) { return {State{{static_cast<double>(k)}}, State{{k + 1.0}}, 1}; }

/// Upper-tail probability of the Pearson statistic for observed counts vs expected probabilities.
double chi_square_p(const std::vector<double>& counts, const std::vector<double>& probs) {
  const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
  double stat = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = n * probs[i];
    stat += (counts[i] - e) * (counts[i] - e) / e;
  }
  boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace

TEST_SUITE("trajdata") {

TEST_CASE("extract_pairs enumerates i < j") {
  const Trajectory t = letters(2);
  const auto all = extract_pairs(t);
  REQUIRE(all.size() == 3);
  CHECK(all[0].s == t.states[0]);
  CHECK(all[0].s_prime == t.states[1]);
  CHECK(all[0].d_td == 1);
  CHECK(all[1].s == t.states[1]);
  CHECK(all[1].s_prime == t.states[2]);
  CHECK(all[1].d_td == 1);
  CHECK(all[2].s == t.states[0]);
  CHECK(all[2].s_prime == t.states[2]);
  CHECK(all[2].d_td == 2);
  CHECK(extract_pairs(t, 1).size() == 2);
  CHECK(extract_pairs(letters(50)).size() == 1275);
  CHECK(extract_pairs(letters(0)).empty());
  CHECK_THROWS_AS(extract_pairs(t, 0), ValidationError);
  // Sum over gaps g <= max_gap of (n - g + 1).
  CHECK(extract_pairs(letters(50), 5).size() == 50 + 49 + 48 + 47 + 46);
}

TEST_CASE("pairs re-walk their trajectory and upper-bound MAD") {
  const EnvSpec spec = testutil::open_grid(6, 6);
  const MadTable mad = compute_mad(spec);
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    const Trajectory t = testutil::random_walk(spec, reset(spec, rep), 40, rng);
    for (const PairSample& p : extract_pairs(t)) {
      bool found = false;
      for (std::size_t i = 0; i + p.d_td < t.states.size() && !found; ++i) {
        if (t.states[i] == p.s && t.states[i + p.d_td] == p.s_prime) {
          State s = t.states[i];
          for (int k = 0; k < p.d_td; ++k) s = transition(spec, s, t.actions[i + k]);
          found = s == p.s_prime;
        }
      }
      CHECK(found);
      CHECK(*mad.mad(p.s, p.s_prime) <= p.d_td);
    }
  }
}

TEST_CASE("trajectory validation") {
  Trajectory t = letters(3);
  t.actions.pop_back();
  CHECK_THROWS_AS(t.validate(), ValidationError);
  CHECK_THROWS_AS(Trajectory{}.validate(), ValidationError);
  Trajectory mixed = letters(1);
  mixed.states[1].features.push_back(0.0);
  CHECK_THROWS_AS(mixed.validate(), ValidationError);
  Trajectory nan = letters(1);
  nan.states[0].features[0] = std::nan("");
  CHECK_THROWS_AS(nan.validate(), ValidationError);
}

TEST_CASE("extract_transitions") {
  const auto tr = extract_transitions({letters(3), letters(2)});
  REQUIRE(tr.size() == 5);
  CHECK(tr[2].s == State{{2.0}});
  CHECK(tr[2].a == Action{2});
  CHECK(tr[2].s_next == State{{3.0}});
}

TEST_CASE("dataset round trip is exact") {
  testutil::TempDir dir("dataset");
  save_dataset({}, dir / "empty.jsonl");
  CHECK(fs::file_size(dir / "empty.jsonl") == 0);
  CHECK(load_dataset(dir / "empty.jsonl").empty());

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Trajectory> trajs;
  for (int k = 0; k < 100; ++k) {
    Trajectory t;
    const int n = k % 7;
    for (int i = 0; i <= n; ++i) t.states.push_back(State{{u(rng), u(rng) * 1e-300, u(rng) * 1e300}});
    for (int i = 0; i < n; ++i) t.actions.push_back(Action{i % 3});
    trajs.push_back(std::move(t));
  }
  save_dataset(trajs, dir / "data.jsonl");
  CHECK(load_dataset(dir / "data.jsonl") == trajs);
  std::ifstream in(dir / "data.jsonl");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 100);
}

TEST_CASE("malformed dataset names the offending record") {
  testutil::TempDir dir("dataset_bad");
  save_dataset({letters(2), letters(3), letters(4)}, dir / "data.jsonl");
  std::ifstream in(dir / "data.jsonl");
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  {
    std::ofstream out(dir / "cut.jsonl");
    out << all.substr(0, all.size() - 10);
  }
  try {
    load_dataset(dir / "cut.jsonl");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":3:") != std::string::npos);
    CHECK(msg.find("record 2") != std::string::npos);
  }
  {
    std::ofstream out(dir / "mismatch.jsonl");
    out << "{\"states\": [[0.0], [1.0]], \"actions\": []}\n";
  }
  CHECK_THROWS_AS(load_dataset(dir / "mismatch.jsonl"), ParseError);
  CHECK_THROWS_AS(load_dataset(dir / "missing.jsonl"), ParseError);
}

TEST_CASE("buffer sampling with all priorities zero is uniform") {
  PrioritizedBuffer buf(0.6, 0.1);
  const int n = 8;
  for (int k = 0; k < n; ++k) buf.add(dummy(k));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  buf.update_priorities(idx, std::vector<double>(n, 0.0));
  std::mt19937_64 rng(1);
  std::vector<double> counts(n, 0.0);
  const int draws = 100000;
  for (std::size_t i : buf.sample_indices(draws, rng)) counts[i] += 1.0;
  const double p = 1.0 / n;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (double c : counts) CHECK(std::abs(c - draws * p) < 3 * sigma);
  CHECK(chi_square_p(counts, std::vector<double>(n, p)) > 1e-3);
}

TEST_CASE("buffer follows the (priority + eps)^alpha law") {
  PrioritizedBuffer buf(0.6, 0.1);
  const std::vector<double> pr{0.0, 0.5, 1.0, 2.0, 4.0, 0.25};
  for (std::size_t k = 0; k < pr.size(); ++k) buf.add(dummy(static_cast<int>(k)));
  std::vector<std::size_t> idx(pr.size());
  std::iota(idx.begin(), idx.end(), 0);
  buf.update_priorities(idx, pr);
  std::vector<double> expected;
  double total = 0.0;
  for (double p : pr) total += std::pow(p + 0.1, 0.6);
  for (double p : pr) expected.push_back(std::pow(p + 0.1, 0.6) / total);
  for (std::size_t i = 0; i < pr.size(); ++i) CHECK(buf.probability(i) == doctest::Approx(expected[i]).epsilon(1e-12));
  std::mt19937_64 rng(2);
  std::vector<double> counts(pr.size(), 0.0);
  for (std::size_t i : buf.sample_indices(100000, rng)) counts[i] += 1.0;
  CHECK(chi_square_p(counts, expected) > 1e-3);
}

TEST_CASE("two-item buffer with alpha = 1 converges to the closed form") {
  PrioritizedBuffer buf(1.0, 0.1);
  buf.add(dummy(0));
  buf.add(dummy(1));
  const double p = 0.7;
  const std::vector<std::size_t> idx{0, 1};
  buf.update_priorities(idx, std::vector<double>{p, 0.0});
  std::mt19937_64 rng(9);
  int first = 0;
  const int draws = 200000;
  for (std::size_t i : buf.sample_indices(draws, rng)) first += i == 0 ? 1 : 0;
  const double expected = (p + 0.1) / (p + 0.2);
  const double sigma = std::sqrt(expected * (1 - expected) / draws);
  CHECK(std::abs(first / static_cast<double>(draws) - expected) < 4 * sigma);
}

TEST_CASE("new samples enter at the running maximum priority") {
  PrioritizedBuffer buf;
  buf.add(dummy(0));
  CHECK(buf.priority(0) == 1.0);
  const std::vector<std::size_t> idx{0};
  buf.update_priorities(idx, std::vector<double>{5.0});
  buf.add(dummy(1));
  CHECK(buf.priority(1) == 5.0);
  buf.update_priorities(idx, std::vector<double>{0.0});
  buf.add(dummy(2));
  CHECK(buf.priority(2) == 5.0);
}

TEST_CASE("batch sampling contract and priority updates") {
  PrioritizedBuffer buf;
  for (int k = 0; k < 10; ++k) buf.add(dummy(k));
  std::mt19937_64 rng(4);
  const auto batch = buf.sample_batch(512, rng);
  CHECK(batch.size() == 512);
  for (const PairSample& p : batch) {
    const int k = static_cast<int>(p.s.features[0]);
    CHECK(k >= 0);
    CHECK(k < 10);
    CHECK(p.s == buf.sample(k).s);
  }

  std::vector<std::size_t> idx(10);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> pr(10, 0.01);
  pr[7] = 1000.0;
  buf.update_priorities(idx, pr);
  int sevens = 0;
  for (std::size_t i : buf.sample_indices(512, rng)) sevens += i == 7 ? 1 : 0;
  CHECK(sevens > 400);

  buf.update_priorities(idx, std::vector<double>(10, 3.0));
  for (std::size_t i = 0; i < 10; ++i) CHECK(buf.probability(i) == doctest::Approx(0.1));

  const std::vector<std::size_t> bad{10};
  CHECK_THROWS_AS(buf.update_priorities(bad, std::vector<double>{1.0}), ValidationError);
  const std::vector<std::size_t> one{0};
  CHECK_THROWS_AS(buf.update_priorities(one, std::vector<double>{-1.0}), ValidationError);
  CHECK_THROWS_AS(buf.update_priorities(one, std::vector<double>{std::nan("")}), ValidationError);
  CHECK_THROWS_AS(buf.update_priorities(one, std::vector<double>{1.0, 2.0}), ValidationError);

  PrioritizedBuffer empty;
  CHECK_THROWS_AS(empty.sample_batch(1, rng), ValidationError);
}

TEST_CASE("sum tree tracks totals across growth") {
  SumTree tree;
  double total = 0.0;
  for (int k = 0; k < 37; ++k) {
    tree.push_back(k + 0.5);
    total += k + 0.5;
  }
  CHECK(tree.total() == doctest::Approx(total));
  tree.set(3, 0.0);
  CHECK(tree.total() == doctest::Approx(total - 3.5));
  CHECK(tree.find(0.0) == 0);
  CHECK(tree.find(0.5 + 1.5 + 2.5 + 0.1) == 4);
  CHECK(tree.find(tree.total() - 1e-9) == 36);
}

}  // TEST_SUITE
