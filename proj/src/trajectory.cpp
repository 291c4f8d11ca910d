#include "madspace/trajectory.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "madspace/errors.hpp"

namespace madspace {

void Trajectory::validate() const {
  if (states.empty()) throw ValidationError("trajectory has no states");
  if (states.size() != actions.size() + 1) {
    throw ValidationError("trajectory needs exactly one more state than actions (got " +
                          std::to_string(states.size()) + " states, " +
                          std::to_string(actions.size()) + " actions)");
  }
  const std::size_t dim = states.front().dim();
  for (const State& s : states) {
    if (s.dim() != dim) throw ValidationError("trajectory states differ in dimension");
    for (double f : s.features) {
      if (!std::isfinite(f)) throw ValidationError("trajectory state has a non-finite feature");
    }
  }
}

std::vector<PairSample> extract_pairs(const Trajectory& t, std::optional<int> max_gap) {
  t.validate();
  if (max_gap && *max_gap < 1) throw ValidationError("max_gap must be >= 1");
  const int n = static_cast<int>(t.length());
  const int top = max_gap ? std::min(*max_gap, n) : n;
  std::vector<PairSample> out;
  for (int gap = 1; gap <= top; ++gap) {
    for (int i = 0; i + gap <= n; ++i) {
      out.push_back({t.states[i], t.states[i + gap], gap});
    }
  }
  return out;
}

std::vector<PairSample> extract_pairs(const std::vector<Trajectory>& trajs,
                                      std::optional<int> max_gap) {
  std::vector<PairSample> out;
  for (const Trajectory& t : trajs) {
    auto pairs = extract_pairs(t, max_gap);
    out.insert(out.end(), std::make_move_iterator(pairs.begin()),
               std::make_move_iterator(pairs.end()));
  }
  return out;
}

std::vector<TransitionSample> extract_transitions(const std::vector<Trajectory>& trajs) {
  std::vector<TransitionSample> out;
  for (const Trajectory& t : trajs) {
    t.validate();
    for (std::size_t i = 0; i < t.length(); ++i) {
      out.push_back({t.states[i], t.actions[i], t.states[i + 1]});
    }
  }
  return out;
}

void save_dataset(const std::vector<Trajectory>& trajs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  for (const Trajectory& t : trajs) {
    t.validate();
    nlohmann::json record;
    record["states"] = nlohmann::json::array();
    for (const State& s : t.states) record["states"].push_back(s.features);
    record["actions"] = nlohmann::json::array();
    for (Action a : t.actions) record["actions"].push_back(a.index);
    out << record.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing dataset " + path.string());
}

std::vector<Trajectory> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dataset " + path.string());
  std::vector<Trajectory> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": record " +
                              std::to_string(out.size());
    try {
      const auto record = nlohmann::json::parse(line);
      Trajectory t;
      for (const auto& s : record.at("states")) {
        t.states.push_back(State{s.get<std::vector<double>>()});
      }
      for (const auto& a : record.at("actions")) t.actions.push_back(Action{a.get<int>()});
      t.validate();
      out.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return out;
}

}  // namespace madspace
