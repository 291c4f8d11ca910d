#include "madspace/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <sstream>

#include "madspace/errors.hpp"
#include "madspace/text_io.hpp"

namespace madspace {
namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j - 1);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  return ranks;
}

std::string describe(const State& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.features.size(); ++i) {
    out += (i ? "," : "") + text_io::format_double(s.features[i]);
  }
  return out + ")";
}

}  // namespace

MadTable::MadTable(StateIndexer indexer, std::vector<int> distances)
    : indexer_(std::move(indexer)), dist_(std::move(distances)) {
  if (dist_.size() != size() * size()) throw ValidationError("MAD table has the wrong size");
}

std::optional<int> MadTable::mad(const State& from, const State& to) const {
  const int d = at(indexer_.index(from), indexer_.index(to));
  if (d == kUnreachable) return std::nullopt;
  return d;
}

std::optional<int> MadTable::symmetric(std::size_t a, std::size_t b) const {
  const int ab = at(a, b);
  const int ba = at(b, a);
  if (ab == kUnreachable && ba == kUnreachable) return std::nullopt;
  if (ab == kUnreachable) return ba;
  if (ba == kUnreachable) return ab;
  return std::min(ab, ba);
}

std::optional<int> MadTable::symmetric(const State& a, const State& b) const {
  return symmetric(indexer_.index(a), indexer_.index(b));
}

std::string MadTable::audit(const EnvSpec& spec) const {
  const std::size_t n = size();
  for (std::size_t s = 0; s < n; ++s) {
    if (at(s, s) != 0) return "MAD(s,s) != 0 at " + describe(states()[s]);
  }
  // Bellman consistency: MAD(s,u) = 1 + min_a MAD(step(s,a), u) for s != u.
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<std::size_t> next;
    for (int a = 0; a < spec.num_actions(); ++a) {
      const auto k = indexer_.find(transition(spec, states()[s], Action{a}));
      if (!k) return "successor of " + describe(states()[s]) + " is not enumerated";
      next.push_back(*k);
    }
    for (std::size_t u = 0; u < n; ++u) {
      if (u == s) continue;
      int best = kUnreachable;
      for (std::size_t k : next) {
        const int d = at(k, u);
        if (d != kUnreachable && (best == kUnreachable || d + 1 < best)) best = d + 1;
      }
      if (best != at(s, u)) {
        return "one-step inconsistency from " + describe(states()[s]) + " to " +
               describe(states()[u]);
      }
    }
  }
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t v = 0; v < n; ++v) {
      const int sv = at(s, v);
      if (sv == kUnreachable) continue;
      for (std::size_t u = 0; u < n; ++u) {
        const int vu = at(v, u);
        if (vu == kUnreachable) continue;
        const int su = at(s, u);
        if (su == kUnreachable || su > sv + vu) {
          return "triangle inequality fails for " + describe(states()[s]) + ", " +
                 describe(states()[v]) + ", " + describe(states()[u]);
        }
      }
    }
  }
  return {};
}

MadTable compute_mad(const EnvSpec& spec) {
  if (!spec.is_grid()) {
    throw UnsupportedError("compute_mad: " + std::string(to_string(spec.kind)) +
                           " is not enumerable");
  }
  StateIndexer indexer(spec);
  const std::size_t n = indexer.size();
  std::vector<std::vector<std::size_t>> successors(n);
  for (std::size_t s = 0; s < n; ++s) {
    for (int a = 0; a < spec.num_actions(); ++a) {
      successors[s].push_back(indexer.index(transition(spec, indexer.state(s), Action{a})));
    }
  }
  std::vector<int> dist(n * n, MadTable::kUnreachable);
  std::deque<std::size_t> frontier;
  for (std::size_t source = 0; source < n; ++source) {
    int* row = dist.data() + source * n;
    row[source] = 0;
    frontier.assign(1, source);
    while (!frontier.empty()) {
      const std::size_t s = frontier.front();
      frontier.pop_front();
      for (std::size_t next : successors[s]) {
        if (row[next] == MadTable::kUnreachable) {
          row[next] = row[s] + 1;
          frontier.push_back(next);
        }
      }
    }
  }
  return MadTable(std::move(indexer), std::move(dist));
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("spearman: inputs differ in length");
  if (a.size() < 2) throw ValidationError("spearman: need at least two observations");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  auto put = [&](const char* key, const std::optional<double>& v) {
    out << key << " = " << (v ? text_io::format_double(*v) : std::string("undefined")) << '\n';
  };
  put("mae", mae);
  put("spearman", spearman);
  put("violation_rate", violation_rate);
  put("success_rate", success_rate);
  put("mean_path_ratio", mean_path_ratio);
  out << "pairs_evaluated = " << pairs_evaluated << '\n';
  out << "unreachable_pairs = " << unreachable_pairs << '\n';
  out << "episodes = " << episodes << '\n';
  return out.str();
}

EvalReport evaluate_embedding(
    const EmbeddingModel& embedding, const MadTable& mad,
    std::optional<std::span<const std::pair<std::size_t, std::size_t>>> pairs) {
  const Eigen::MatrixXd z = embedding.embed_batch(mad.states());
  std::vector<double> predicted;
  std::vector<double> target;
  EvalReport report;
  auto visit = [&](std::size_t i, std::size_t j) {
    if (i == j) return;
    const auto m = mad.symmetric(i, j);
    if (!m) {
      ++report.unreachable_pairs;
      return;
    }
    predicted.push_back(embedding.distance(z.col(i), z.col(j)));
    target.push_back(*m);
  };
  if (pairs) {
    for (const auto& [i, j] : *pairs) visit(i, j);
  } else {
    for (std::size_t i = 0; i < mad.size(); ++i) {
      for (std::size_t j = i + 1; j < mad.size(); ++j) visit(i, j);
    }
  }
  if (predicted.empty()) throw ValidationError("evaluate_embedding: no pair has a finite MAD");
  double abs_err = 0.0;
  for (std::size_t k = 0; k < predicted.size(); ++k) abs_err += std::abs(predicted[k] - target[k]);
  report.pairs_evaluated = predicted.size();
  report.mae = abs_err / static_cast<double>(predicted.size());
  if (predicted.size() >= 2) report.spearman = madspace::spearman(predicted, target);
  return report;
}

double violation_rate(const EmbeddingModel& embedding, const std::vector<Trajectory>& trajs,
                      std::optional<int> max_gap, double tolerance) {
  std::size_t total = 0;
  std::size_t violated = 0;
  for (const Trajectory& t : trajs) {
    t.validate();
    const Eigen::MatrixXd z = embedding.embed_batch(t.states);
    const int n = static_cast<int>(t.length());
    const int top = max_gap ? std::min(*max_gap, n) : n;
    for (int gap = 1; gap <= top; ++gap) {
      for (int i = 0; i + gap <= n; ++i) {
        ++total;
        if (embedding.distance(z.col(i), z.col(i + gap)) > gap + tolerance) ++violated;
      }
    }
  }
  if (total == 0) throw ValidationError("violation_rate: the dataset yields no pairs");
  return static_cast<double>(violated) / static_cast<double>(total);
}

EvalReport evaluate_planner(std::span<const EpisodeRecord> episodes, const MadTable& mad) {
  if (episodes.empty()) throw ValidationError("evaluate_planner: no episodes");
  EvalReport report;
  report.episodes = episodes.size();
  std::size_t successes = 0;
  double ratio_sum = 0.0;
  std::size_t ratio_count = 0;
  for (const EpisodeRecord& e : episodes) {
    if (!e.success) continue;
    ++successes;
    const auto m = mad.mad(e.start, e.goal);
    if (!m || *m == 0) continue;
    ratio_sum += static_cast<double>(e.steps) / *m;
    ++ratio_count;
  }
  report.success_rate = static_cast<double>(successes) / static_cast<double>(episodes.size());
  if (ratio_count > 0) report.mean_path_ratio = ratio_sum / static_cast<double>(ratio_count);
  return report;
}

ValueTable value_iteration(const EnvSpec& spec, const State& goal, const RewardFn& reward,
                           double gamma, double tolerance, int max_sweeps) {
  const StateIndexer indexer(spec);
  const std::size_t n = indexer.size();
  const std::size_t goal_index = indexer.index(goal);
  const int actions = spec.num_actions();
  std::vector<std::vector<std::size_t>> next(n, std::vector<std::size_t>(actions));
  std::vector<std::vector<double>> rewards(n, std::vector<double>(actions));
  for (std::size_t s = 0; s < n; ++s) {
    for (int a = 0; a < actions; ++a) {
      const State sn = transition(spec, indexer.state(s), Action{a});
      next[s][a] = indexer.index(sn);
      rewards[s][a] = reward(indexer.state(s), Action{a}, sn);
    }
  }
  ValueTable table;
  table.v.assign(n, 0.0);
  table.q.assign(n, std::vector<double>(actions, 0.0));
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double change = 0.0;
    std::vector<double> v_new(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      if (s == goal_index) continue;
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < actions; ++a) {
        const std::size_t sn = next[s][a];
        const double cont = sn == goal_index ? 0.0 : gamma * table.v[sn];
        table.q[s][a] = rewards[s][a] + cont;
        best = std::max(best, table.q[s][a]);
      }
      v_new[s] = best;
      change = std::max(change, std::abs(best - table.v[s]));
    }
    table.v = std::move(v_new);
    if (change <= tolerance) break;
  }
  return table;
}

std::vector<int> optimal_actions(std::span<const double> q_row, double tolerance) {
  const double best = *std::max_element(q_row.begin(), q_row.end());
  std::vector<int> out;
  for (std::size_t a = 0; a < q_row.size(); ++a) {
    if (q_row[a] >= best - tolerance) out.push_back(static_cast<int>(a));
  }
  return out;
}

}  // namespace madspace
