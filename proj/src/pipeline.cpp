#include "madspace/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <random>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "madspace/errors.hpp"
#include "madspace/replay_buffer.hpp"
#include "madspace/text_io.hpp"

namespace madspace {
namespace {

using nlohmann::json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

json state_json(const State& s) { return s.features; }

State state_from_json(const json& j) { return State{j.get<std::vector<double>>()}; }

json optional_json(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json embed_flags(const EmbedConfig& c) {
  return {{"dim", c.embed_dim},
          {"norm", std::string(to_string(c.norm))},
          {"alpha", c.alpha_exponent},
          {"penalty", c.penalty_enabled},
          {"hidden", c.hidden},
          {"batch", c.batch_size},
          {"lr", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"steps", c.train_steps},
          {"max_gap", optional_json(c.max_gap)},
          {"per_alpha", c.per_alpha},
          {"per_epsilon", c.per_epsilon},
          {"priority", c.priority_mode == PriorityMode::kPenalty ? "penalty" : "loss"}};
}

json dyn_flags(const DynamicsConfig& c) {
  return {{"hidden", c.hidden},     {"batch", c.batch_size},     {"lr", c.learning_rate},
          {"weight_decay", c.weight_decay}, {"steps", c.train_steps}, {"residual", c.residual}};
}

json plan_flags(const PlanConfig& c) {
  return {{"horizon", c.horizon},
          {"samples", c.num_sequences},
          {"budget", c.max_env_steps},
          {"goal_eps", optional_json(c.goal_eps)}};
}

json q_flags(const QConfig& c) {
  return {{"lr", c.learning_rate},          {"gamma", c.gamma},
          {"epsilon_start", c.epsilon_start}, {"epsilon_end", c.epsilon_end},
          {"epsilon_decay", c.epsilon_decay_episodes}, {"initial_q", c.initial_q}};
}

json gcsl_flags(const GcslConfig& c) {
  return {{"horizon_conditioned", c.horizon_conditioned},
          {"hidden", c.hidden},
          {"batch", c.batch_size},
          {"lr", c.learning_rate},
          {"steps", c.train_steps},
          {"max_gap", optional_json(c.max_gap)},
          {"horizon_scale", optional_json(c.horizon_scale)}};
}

std::string path_string(const fs::path& p) { return p.generic_string(); }

json path_json(const std::optional<fs::path>& p) { return p ? json(path_string(*p)) : json(nullptr); }

struct CsvLog {
  std::ostringstream text;
  explicit CsvLog(const std::string& header) { text << header << '\n'; }
  void row(std::initializer_list<std::string> cells) {
    bool first = true;
    for (const auto& c : cells) {
      text << (first ? "" : ",") << c;
      first = false;
    }
    text << '\n';
  }
};

json planner_stats(const EnvSpec& spec, const std::vector<EpisodeRecord>& records) {
  EvalReport r;
  if (spec.is_grid()) {
    r = evaluate_planner(records, compute_mad(spec));
  } else {
    std::size_t wins = 0;
    for (const auto& e : records) wins += e.success ? 1 : 0;
    r.success_rate = static_cast<double>(wins) / static_cast<double>(records.size());
  }
  return {{"success_rate", optional_json(r.success_rate)},
          {"mean_path_ratio", optional_json(r.mean_path_ratio)}};
}

}  // namespace

// ---- data collection ------------------------------------------------------

std::vector<Trajectory> collect(const EnvSpec& spec, const CollectPolicy& policy, int n_traj,
                                std::uint64_t seed) {
  spec.validate();
  if (n_traj < 0) throw ConfigError("number of trajectories must be >= 0");
  if (policy.epsilon < 0.0 || policy.epsilon > 1.0) throw ConfigError("epsilon must lie in [0, 1]");
  if (policy.qtable && policy.qtable->num_actions() != spec.num_actions()) {
    throw ConfigError("Q-table and environment disagree on the action count");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> random_action(0, spec.num_actions() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<Trajectory> out;
  out.reserve(n_traj);
  for (int k = 0; k < n_traj; ++k) {
    Trajectory t;
    State s = reset(spec, rng());
    t.states.push_back(s);
    for (int i = 0; i < spec.max_episode_steps; ++i) {
      Action a{0};
      if (policy.qtable && !(policy.epsilon > 0.0 && coin(rng) < policy.epsilon)) {
        a = policy.qtable->greedy(s);
      } else {
        a = Action{random_action(rng)};
      }
      const StepResult r = step(spec, s, a, std::nullopt);
      t.actions.push_back(a);
      t.states.push_back(r.state);
      s = r.state;
      if (r.done) break;
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::optional<double> coverage(const EnvSpec& spec, const std::vector<Trajectory>& trajs) {
  if (!spec.is_grid()) return std::nullopt;
  const StateIndexer indexer(spec);
  std::vector<bool> seen(indexer.size(), false);
  for (const Trajectory& t : trajs) {
    for (const State& s : t.states) {
      if (const auto i = indexer.find(s)) seen[*i] = true;
    }
  }
  std::size_t visited = 0;
  for (bool b : seen) visited += b ? 1 : 0;
  return static_cast<double>(visited) / static_cast<double>(indexer.size());
}

// ---- goal-reaching episodes -------------------------------------------------

std::vector<GoalTask> sample_tasks(const EnvSpec& spec, int count, std::uint64_t seed) {
  spec.validate();
  if (count < 0) throw ConfigError("number of goals must be >= 0");
  std::mt19937_64 rng(seed);
  std::vector<GoalTask> tasks;
  if (!spec.is_grid()) {
    for (int k = 0; k < count; ++k) tasks.push_back({reset(spec, rng()), State{{0.5, 0.0}}});
    return tasks;
  }
  const auto states = enumerate_states(spec);
  std::uniform_int_distribution<std::size_t> pick(0, states.size() - 1);
  for (int k = 0; k < count; ++k) {
    State start = reset(spec, rng());
    State goal = states[pick(rng)];
    while (states.size() > 1 && goal == start) goal = states[pick(rng)];
    tasks.push_back({std::move(start), std::move(goal)});
  }
  return tasks;
}

std::vector<EpisodeRecord> run_planner_episodes(const EnvSpec& spec, const EmbeddingModel& embedding,
                                                const LatentDynamics& dyn, int goals,
                                                const PlanConfig& config) {
  const auto tasks = sample_tasks(spec, goals, config.seed);
  std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dULL);
  std::vector<EpisodeRecord> records;
  for (const GoalTask& task : tasks) {
    PlanConfig c = config;
    c.seed = rng();
    const PlanEpisode ep = plan_dist_episode(spec, embedding, dyn, task.start, task.goal, c);
    records.push_back({task.start, task.goal, ep.steps(), ep.success, ep.final_distance});
  }
  return records;
}

std::vector<EpisodeRecord> run_gcsl_episodes(const EnvSpec& spec, const GcslPolicy& policy, int goals,
                                             int budget, std::uint64_t seed) {
  std::vector<EpisodeRecord> records;
  for (const GoalTask& task : sample_tasks(spec, goals, seed)) {
    const GcslEpisode ep = gcsl_episode(spec, policy, task.start, task.goal, budget);
    records.push_back({task.start, task.goal, static_cast<int>(ep.trajectory.length()), ep.success,
                       std::numeric_limits<double>::quiet_NaN()});
  }
  return records;
}

void write_episode_report(const std::vector<EpisodeRecord>& records, const fs::path& path) {
  std::ostringstream out;
  for (const EpisodeRecord& e : records) {
    json j{{"start", state_json(e.start)},
           {"goal", state_json(e.goal)},
           {"steps", e.steps},
           {"success", e.success},
           {"final_distance", std::isfinite(e.final_distance) ? json(e.final_distance) : json(nullptr)}};
    out << j.dump() << '\n';
  }
  write_file(path, out.str());
}

std::vector<EpisodeRecord> read_episode_report(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open episode report " + path.string());
  std::vector<EpisodeRecord> records;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      EpisodeRecord e;
      e.start = state_from_json(j.at("start"));
      e.goal = state_from_json(j.at("goal"));
      e.steps = j.at("steps").get<int>();
      e.success = j.at("success").get<bool>();
      const json& d = j.at("final_distance");
      e.final_distance = d.is_null() ? std::numeric_limits<double>::quiet_NaN() : d.get<double>();
      records.push_back(std::move(e));
    } catch (const json::exception& err) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + err.what());
    }
  }
  return records;
}

// ---- manifests ----------------------------------------------------------------

std::string git_blob_hash(const fs::path& path) {
  const std::string content = read_file(path);
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw std::runtime_error("SHA-1 failed for " + path.string());
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

json RunManifest::to_json() const {
  auto files = [](const std::vector<HashedPath>& v) {
    json a = json::array();
    for (const auto& f : v) a.push_back({{"path", f.path}, {"sha1", f.hash}});
    return a;
  };
  return {{"command", command},
          {"flags", flags},
          {"seed", seed},
          {"inputs", files(inputs)},
          {"outputs", files(outputs)},
          {"duration_seconds", duration_seconds},
          {"stats", stats}};
}

RunManifest RunManifest::from_json(const json& j) {
  auto files = [](const json& a) {
    std::vector<HashedPath> v;
    for (const auto& f : a) v.push_back({f.at("path").get<std::string>(), f.at("sha1").get<std::string>()});
    return v;
  };
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.flags = j.at("flags");
  m.seed = j.at("seed").get<std::uint64_t>();
  m.inputs = files(j.at("inputs"));
  m.outputs = files(j.at("outputs"));
  m.duration_seconds = j.at("duration_seconds").get<double>();
  m.stats = j.value("stats", json::object());
  return m;
}

void RunManifest::save(const fs::path& path) const { write_file(path, to_json().dump(2) + "\n"); }

RunManifest RunManifest::load(const fs::path& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

fs::path manifest_path(const fs::path& artifact) {
  fs::path p = artifact;
  p += ".manifest.json";
  return p;
}

bool stage_is_current(const StageSpec& stage) {
  if (stage.outputs.empty()) return false;
  const fs::path mpath = manifest_path(stage.outputs.front());
  if (!fs::exists(mpath)) return false;
  RunManifest m;
  try {
    m = RunManifest::load(mpath);
  } catch (const std::exception&) {
    return false;
  }
  if (m.command != stage.command || m.flags != stage.flags || m.seed != stage.seed) return false;
  if (m.inputs.size() != stage.inputs.size() || m.outputs.size() != stage.outputs.size()) return false;
  auto matches = [](const HashedPath& recorded, const fs::path& p) {
    return recorded.path == path_string(p) && fs::exists(p) && recorded.hash == git_blob_hash(p);
  };
  for (std::size_t i = 0; i < stage.inputs.size(); ++i) {
    if (!matches(m.inputs[i], stage.inputs[i])) return false;
  }
  for (std::size_t i = 0; i < stage.outputs.size(); ++i) {
    if (!matches(m.outputs[i], stage.outputs[i])) return false;
  }
  return true;
}

StageOutcome execute_stage(const StageSpec& stage, bool skip_if_current) {
  if (stage.outputs.empty()) throw ValidationError("stage " + stage.command + " has no outputs");
  StageOutcome outcome{stage.command, false, manifest_path(stage.outputs.front()), json::object()};
  try {
    if (skip_if_current && stage_is_current(stage)) {
      outcome.skipped = true;
      outcome.stats = RunManifest::load(outcome.manifest).stats;
      return outcome;
    }
    RunManifest m;
    m.command = stage.command;
    m.flags = stage.flags;
    m.seed = stage.seed;
    for (const fs::path& p : stage.inputs) m.inputs.push_back({path_string(p), git_blob_hash(p)});
    for (const fs::path& p : stage.outputs) {
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
    }
    const auto t0 = std::chrono::steady_clock::now();
    m.stats = stage.body();
    m.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const fs::path& p : stage.outputs) m.outputs.push_back({path_string(p), git_blob_hash(p)});
    m.save(outcome.manifest);
    outcome.stats = m.stats;
    return outcome;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage.command, e.what());
  }
}

// ---- stages ---------------------------------------------------------------------

StageSpec collect_stage(const CollectOptions& o) {
  StageSpec s;
  s.command = "collect";
  s.flags = {{"env", path_string(o.env)},
             {"policy", o.qtable ? json(path_string(*o.qtable)) : json("random")},
             {"epsilon", o.epsilon},
             {"trajectories", o.trajectories},
             {"out", path_string(o.out)}};
  s.seed = o.seed;
  s.inputs = {o.env};
  if (o.qtable) s.inputs.push_back(*o.qtable);
  s.outputs = {o.out};
  s.body = [o] {
    const EnvSpec spec = load_env_spec(o.env);
    std::optional<QTable> q;
    if (o.qtable) q = QTable::load(spec, *o.qtable);
    const auto trajs = collect(spec, {q ? &*q : nullptr, o.epsilon}, o.trajectories, o.seed);
    save_dataset(trajs, o.out);
    std::size_t transitions = 0;
    for (const auto& t : trajs) transitions += t.length();
    return json{{"trajectories", trajs.size()},
                {"transitions", transitions},
                {"coverage", optional_json(coverage(spec, trajs))}};
  };
  return s;
}

StageSpec train_embed_stage(const TrainEmbedOptions& o) {
  o.config.validate();
  StageSpec s;
  s.command = "train-embed";
  s.flags = embed_flags(o.config);
  s.flags["dataset"] = path_string(o.dataset);
  s.flags["out"] = path_string(o.out);
  s.flags["log"] = path_json(o.log);
  s.seed = o.config.seed;
  s.inputs = {o.dataset};
  s.outputs = {o.out};
  if (o.log) s.outputs.push_back(*o.log);
  s.body = [o] {
    const auto trajs = load_dataset(o.dataset);
    PrioritizedBuffer buffer(o.config.per_alpha, o.config.per_epsilon);
    CsvLog log("step,loss,mean_violation");
    double last_loss = std::numeric_limits<double>::quiet_NaN();
    EmbeddingModel model = train_embedding(trajs, o.config, buffer, [&](const EmbedLogEntry& e) {
      log.row({std::to_string(e.step), text_io::format_double(e.loss),
               text_io::format_double(e.mean_violation)});
      last_loss = e.loss;
    });
    model.save(o.out);
    if (o.log) write_file(*o.log, log.text.str());
    return json{{"pairs", buffer.size()},
                {"adjacent_distance", optional_json(model.adjacent_distance())},
                {"final_logged_loss", std::isfinite(last_loss) ? json(last_loss) : json(nullptr)}};
  };
  return s;
}

StageSpec train_dyn_stage(const TrainDynOptions& o) {
  o.config.validate();
  StageSpec s;
  s.command = "train-dyn";
  s.flags = dyn_flags(o.config);
  s.flags["env"] = path_string(o.env);
  s.flags["dataset"] = path_string(o.dataset);
  s.flags["embed"] = path_string(o.embed);
  s.flags["out"] = path_string(o.out);
  s.flags["log"] = path_json(o.log);
  s.seed = o.config.seed;
  s.inputs = {o.env, o.dataset, o.embed};
  s.outputs = {o.out};
  if (o.log) s.outputs.push_back(*o.log);
  s.body = [o] {
    const EnvSpec spec = load_env_spec(o.env);
    const auto trajs = load_dataset(o.dataset);
    const EmbeddingModel embedding = EmbeddingModel::load(o.embed);
    CsvLog log("step,loss");
    const LatentDynamics dyn =
        train_dynamics(trajs, embedding, spec.num_actions(), o.config, [&](std::int64_t step, double loss) {
          log.row({std::to_string(step), text_io::format_double(loss)});
        });
    dyn.save(o.out);
    if (o.log) write_file(*o.log, log.text.str());
    const double err = mean_one_step_error(dyn, embedding, trajs);
    const double adj = mean_adjacent_distance(embedding, trajs);
    return json{{"one_step_error", err}, {"adjacent_distance", adj}, {"error_ratio", err / adj}};
  };
  return s;
}

StageSpec plan_stage(const PlanOptions& o) {
  o.config.validate();
  StageSpec s;
  s.command = "plan";
  s.flags = plan_flags(o.config);
  s.flags["env"] = path_string(o.env);
  s.flags["embed"] = path_string(o.embed);
  s.flags["dyn"] = path_string(o.dyn);
  s.flags["goals"] = o.goals;
  s.flags["report"] = path_string(o.report);
  s.seed = o.config.seed;
  s.inputs = {o.env, o.embed, o.dyn};
  s.outputs = {o.report};
  s.body = [o] {
    const EnvSpec spec = load_env_spec(o.env);
    const EmbeddingModel embedding = EmbeddingModel::load(o.embed);
    const LatentDynamics dyn = LatentDynamics::load(o.dyn);
    const auto records = run_planner_episodes(spec, embedding, dyn, o.goals, o.config);
    write_episode_report(records, o.report);
    return records.empty() ? json::object() : planner_stats(spec, records);
  };
  return s;
}

StageSpec shape_train_stage(const ShapeTrainOptions& o) {
  o.config.validate();
  if (o.shaped && !o.embed) throw ConfigError("shaped Q-learning needs an embedding");
  StageSpec s;
  s.command = "shape-train";
  s.flags = q_flags(o.config);
  s.flags["env"] = path_string(o.env);
  s.flags["embed"] = o.shaped ? path_json(o.embed) : json(nullptr);
  s.flags["goal"] = {o.goal.x, o.goal.y};
  s.flags["episodes"] = o.episodes;
  s.flags["shaped"] = o.shaped;
  s.flags["curve"] = path_string(o.curve);
  s.flags["qtable_out"] = path_json(o.qtable_out);
  s.seed = o.config.seed;
  s.inputs = {o.env};
  if (o.shaped) s.inputs.push_back(*o.embed);
  s.outputs = {o.curve};
  if (o.qtable_out) s.outputs.push_back(*o.qtable_out);
  s.body = [o] {
    const EnvSpec spec = load_env_spec(o.env);
    if (!spec.is_grid()) throw UnsupportedError("shape-train needs a grid environment");
    if (!spec.in_bounds(o.goal) || spec.is_wall(o.goal)) throw ConfigError("goal cell is not free");
    const State goal = grid_state(spec, o.goal);
    std::optional<ShapedReward> shaping;
    if (o.shaped) {
      shaping.emplace(o.config.gamma, goal,
                      std::make_shared<const EmbeddingModel>(EmbeddingModel::load(*o.embed)));
    }
    const QLearningResult result = q_learn(spec, goal, shaping ? &*shaping : nullptr, o.episodes, o.config);
    CsvLog curve("episode,return,steps,success");
    for (std::size_t e = 0; e < result.curve.size(); ++e) {
      const EpisodeStats& st = result.curve[e];
      curve.row({std::to_string(e + 1), text_io::format_double(st.env_return), std::to_string(st.steps),
                 st.success ? "1" : "0"});
    }
    write_file(o.curve, curve.text.str());
    if (o.qtable_out) result.table.save(*o.qtable_out);
    return json{{"episodes_to_threshold", optional_json(episodes_to_threshold(result.curve))}};
  };
  return s;
}

StageSpec gcsl_train_stage(const GcslTrainOptions& o) {
  o.config.validate();
  StageSpec s;
  s.command = "gcsl-train";
  s.flags = gcsl_flags(o.config);
  s.flags["env"] = path_string(o.env);
  s.flags["dataset"] = path_string(o.dataset);
  s.flags["out"] = path_string(o.out);
  s.flags["log"] = path_json(o.log);
  s.seed = o.config.seed;
  s.inputs = {o.env, o.dataset};
  s.outputs = {o.out};
  if (o.log) s.outputs.push_back(*o.log);
  s.body = [o] {
    const EnvSpec spec = load_env_spec(o.env);
    const auto trajs = load_dataset(o.dataset);
    CsvLog log("step,loss");
    const GcslPolicy policy = gcsl_train(trajs, spec.num_actions(), o.config, [&](std::int64_t step, double loss) {
      log.row({std::to_string(step), text_io::format_double(loss)});
    });
    policy.save(o.out);
    if (o.log) write_file(*o.log, log.text.str());
    return json::object();
  };
  return s;
}

StageSpec gcsl_eval_stage(const GcslEvalOptions& o) {
  if (o.budget < 1) throw ConfigError("budget must be >= 1");
  StageSpec s;
  s.command = "gcsl-eval";
  s.flags = {{"env", path_string(o.env)},   {"policy", path_string(o.policy)},
             {"goals", o.goals},            {"budget", o.budget},
             {"report", path_string(o.report)}};
  s.seed = o.seed;
  s.inputs = {o.env, o.policy};
  s.outputs = {o.report};
  s.body = [o] {
    const EnvSpec spec = load_env_spec(o.env);
    const GcslPolicy policy = GcslPolicy::load(o.policy);
    const auto records = run_gcsl_episodes(spec, policy, o.goals, o.budget, o.seed);
    write_episode_report(records, o.report);
    return records.empty() ? json::object() : planner_stats(spec, records);
  };
  return s;
}

StageSpec eval_stage(const EvalOptions& o) {
  StageSpec s;
  s.command = "eval";
  s.flags = {{"env", path_string(o.env)},
             {"embed", path_string(o.embed)},
             {"dyn", path_json(o.dyn)},
             {"dataset", path_json(o.dataset)},
             {"max_gap", optional_json(o.max_gap)},
             {"episodes", path_json(o.episodes)},
             {"goals", o.goals},
             {"out", path_string(o.out)}};
  s.seed = o.seed;
  s.inputs = {o.env, o.embed};
  for (const auto& p : {o.dyn, o.dataset, o.episodes}) {
    if (p) s.inputs.push_back(*p);
  }
  s.outputs = {o.out};
  s.body = [o] {
    const EnvSpec spec = load_env_spec(o.env);
    const EmbeddingModel embedding = EmbeddingModel::load(o.embed);
    EvalReport report;
    std::optional<MadTable> mad;
    if (spec.is_grid()) {
      mad = compute_mad(spec);
      report = evaluate_embedding(embedding, *mad);
    }
    if (o.dataset) report.violation_rate = violation_rate(embedding, load_dataset(*o.dataset), o.max_gap);
    std::vector<EpisodeRecord> records;
    if (o.episodes) {
      records = read_episode_report(*o.episodes);
    } else if (o.dyn) {
      PlanConfig config;
      config.seed = o.seed;
      config.max_env_steps = spec.max_episode_steps;
      records = run_planner_episodes(spec, embedding, LatentDynamics::load(*o.dyn), o.goals, config);
    }
    if (!records.empty()) {
      report.episodes = records.size();
      if (mad) {
        const EvalReport p = evaluate_planner(records, *mad);
        report.success_rate = p.success_rate;
        report.mean_path_ratio = p.mean_path_ratio;
      } else {
        std::size_t wins = 0;
        for (const auto& e : records) wins += e.success ? 1 : 0;
        report.success_rate = static_cast<double>(wins) / static_cast<double>(records.size());
      }
    }
    write_file(o.out, report.to_text());
    return json{{"mae", optional_json(report.mae)},
                {"spearman", optional_json(report.spearman)},
                {"violation_rate", optional_json(report.violation_rate)},
                {"success_rate", optional_json(report.success_rate)},
                {"mean_path_ratio", optional_json(report.mean_path_ratio)}};
  };
  return s;
}

EvalReport read_eval_report(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open eval report " + path.string());
  EvalReport r;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ParseError(path.string() + ":" + std::to_string(n) + ": expected key = value");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    try {
      auto metric = [&]() -> std::optional<double> {
        if (value == "undefined") return std::nullopt;
        return text_io::parse_double(value);
      };
      if (key == "mae") r.mae = metric();
      else if (key == "spearman") r.spearman = metric();
      else if (key == "violation_rate") r.violation_rate = metric();
      else if (key == "success_rate") r.success_rate = metric();
      else if (key == "mean_path_ratio") r.mean_path_ratio = metric();
      else if (key == "pairs_evaluated") r.pairs_evaluated = static_cast<std::size_t>(text_io::parse_int(value));
      else if (key == "unreachable_pairs") r.unreachable_pairs = static_cast<std::size_t>(text_io::parse_int(value));
      else if (key == "episodes") r.episodes = static_cast<std::size_t>(text_io::parse_int(value));
      else throw ParseError("unknown key '" + key + "'");
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return r;
}

// ---- whole pipeline -----------------------------------------------------------

namespace {

const std::vector<std::string> kStageNames = {"collect",    "train-embed", "train-dyn", "plan",
                                              "shape-train", "gcsl-train",  "gcsl-eval", "eval"};

class Settings {
 public:
  Settings(const json& root, const std::string& stage) : stage_(stage) {
    if (root.contains(stage)) {
      if (!root.at(stage).is_object()) throw ConfigError("pipeline: '" + stage + "' must be an object");
      obj_ = root.at(stage);
    }
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!obj_.contains(key)) return fallback;
    try {
      return obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("pipeline: " + stage_ + "." + key + " has the wrong type");
    }
  }

  template <typename T>
  std::optional<T> optional(const std::string& key, std::optional<T> fallback = std::nullopt) {
    used_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return fallback;
    return get<T>(key, T{});
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!used_.count(key)) throw ConfigError("pipeline: unknown setting " + stage_ + "." + key);
    }
  }

 private:
  std::string stage_;
  json obj_ = json::object();
  std::set<std::string> used_;
};

}  // namespace

PipelineResult run_pipeline(const fs::path& config_path) {
  json root;
  try {
    root = json::parse(read_file(config_path));
  } catch (const json::exception& e) {
    throw ParseError(config_path.string() + ": " + e.what());
  }
  if (!root.is_object()) throw ConfigError("pipeline: config must be a JSON object");
  for (const auto& [key, value] : root.items()) {
    const bool known = key == "env" || key == "out_dir" || key == "seed" || key == "stages" ||
                       std::find(kStageNames.begin(), kStageNames.end(), key) != kStageNames.end();
    if (!known) throw ConfigError("pipeline: unknown key '" + key + "'");
  }
  for (const char* key : {"env", "out_dir", "seed", "stages"}) {
    if (!root.contains(key)) throw ConfigError(std::string("pipeline: missing '") + key + "'");
  }
  const fs::path base = config_path.has_parent_path() ? config_path.parent_path() : fs::path(".");
  auto resolve = [&](const std::string& p) {
    return (fs::path(p).is_absolute() ? fs::path(p) : base / p).lexically_normal();
  };

  std::vector<std::string> stages;
  std::uint64_t seed = 0;
  fs::path env, out;
  try {
    stages = root.at("stages").get<std::vector<std::string>>();
    seed = root.at("seed").get<std::uint64_t>();
    env = resolve(root.at("env").get<std::string>());
    out = resolve(root.at("out_dir").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("pipeline: ") + e.what());
  }
  if (stages.empty()) throw ConfigError("pipeline: no stages listed");
  for (const auto& name : stages) {
    if (std::find(kStageNames.begin(), kStageNames.end(), name) == kStageNames.end()) {
      throw ConfigError("pipeline: unknown stage '" + name + "'");
    }
  }
  auto listed = [&](const std::string& name) {
    return std::find(stages.begin(), stages.end(), name) != stages.end();
  };

  const fs::path dataset = out / "dataset.jsonl";
  const fs::path embed_ckpt = out / "embedding.ckpt";
  const fs::path dyn_ckpt = out / "dynamics.ckpt";
  const fs::path plan_report = out / "plan_report.jsonl";
  const fs::path gcsl_ckpt = out / "gcsl.ckpt";
  const fs::path gcsl_report = out / "gcsl_report.jsonl";

  // Settings are read up front so a typo fails before any work runs.
  std::vector<StageSpec> specs;
  std::optional<int> embed_max_gap;
  for (const std::string& name : stages) {
    Settings st(root, name);
    if (name == "collect") {
      CollectOptions o;
      o.env = env;
      o.seed = seed;
      o.out = dataset;
      o.trajectories = st.get<int>("trajectories", 200);
      o.epsilon = st.get<double>("epsilon", 0.0);
      if (auto q = st.optional<std::string>("qtable")) o.qtable = resolve(*q);
      specs.push_back(collect_stage(o));
    } else if (name == "train-embed") {
      TrainEmbedOptions o;
      o.dataset = dataset;
      o.out = embed_ckpt;
      o.log = out / "embed_log.csv";
      EmbedConfig& c = o.config;
      c.seed = seed;
      c.embed_dim = st.get<int>("dim", c.embed_dim);
      c.norm = norm_from_string(st.get<std::string>("norm", "l1"));
      c.alpha_exponent = st.get<double>("alpha", c.alpha_exponent);
      c.penalty_enabled = st.get<bool>("penalty", c.penalty_enabled);
      c.hidden = st.get<std::vector<int>>("hidden", c.hidden);
      c.batch_size = st.get<int>("batch", c.batch_size);
      c.learning_rate = st.get<double>("lr", c.learning_rate);
      c.weight_decay = st.get<double>("weight_decay", c.weight_decay);
      c.train_steps = st.get<std::int64_t>("steps", c.train_steps);
      c.max_gap = st.optional<int>("max_gap");
      c.log_every = st.get<int>("log_every", c.log_every);
      embed_max_gap = c.max_gap;
      specs.push_back(train_embed_stage(o));
    } else if (name == "train-dyn") {
      TrainDynOptions o;
      o.env = env;
      o.dataset = dataset;
      o.embed = embed_ckpt;
      o.out = dyn_ckpt;
      o.log = out / "dyn_log.csv";
      DynamicsConfig& c = o.config;
      c.seed = seed;
      c.hidden = st.get<int>("hidden", c.hidden);
      c.batch_size = st.get<int>("batch", c.batch_size);
      c.learning_rate = st.get<double>("lr", c.learning_rate);
      c.weight_decay = st.get<double>("weight_decay", c.weight_decay);
      c.train_steps = st.get<std::int64_t>("steps", c.train_steps);
      c.residual = st.get<bool>("residual", c.residual);
      c.log_every = st.get<int>("log_every", c.log_every);
      specs.push_back(train_dyn_stage(o));
    } else if (name == "plan") {
      PlanOptions o;
      o.env = env;
      o.embed = embed_ckpt;
      o.dyn = dyn_ckpt;
      o.report = plan_report;
      o.goals = st.get<int>("goals", o.goals);
      PlanConfig& c = o.config;
      c.seed = seed;
      c.horizon = st.get<int>("horizon", c.horizon);
      c.num_sequences = st.get<int>("samples", c.num_sequences);
      c.max_env_steps = st.get<int>("budget", c.max_env_steps);
      c.goal_eps = st.optional<double>("goal_eps");
      specs.push_back(plan_stage(o));
    } else if (name == "shape-train") {
      ShapeTrainOptions o;
      o.env = env;
      o.embed = embed_ckpt;
      const auto goal = st.get<std::vector<int>>("goal", {});
      if (goal.size() != 2) throw ConfigError("pipeline: shape-train.goal must be [x, y]");
      o.goal = Cell{goal[0], goal[1]};
      o.episodes = st.get<int>("episodes", o.episodes);
      o.shaped = st.get<bool>("shaped", true);
      if (!o.shaped) o.embed.reset();
      o.config.seed = seed;
      o.curve = out / (o.shaped ? "shaped_curve.csv" : "unshaped_curve.csv");
      o.qtable_out = out / (o.shaped ? "shaped_qtable.txt" : "unshaped_qtable.txt");
      specs.push_back(shape_train_stage(o));
    } else if (name == "gcsl-train") {
      GcslTrainOptions o;
      o.env = env;
      o.dataset = dataset;
      o.out = gcsl_ckpt;
      o.log = out / "gcsl_log.csv";
      GcslConfig& c = o.config;
      c.seed = seed;
      c.horizon_conditioned = st.get<bool>("horizon", c.horizon_conditioned);
      c.hidden = st.get<std::vector<int>>("hidden", c.hidden);
      c.batch_size = st.get<int>("batch", c.batch_size);
      c.learning_rate = st.get<double>("lr", c.learning_rate);
      c.train_steps = st.get<std::int64_t>("steps", c.train_steps);
      c.max_gap = st.optional<int>("max_gap");
      c.log_every = st.get<int>("log_every", c.log_every);
      specs.push_back(gcsl_train_stage(o));
    } else if (name == "gcsl-eval") {
      GcslEvalOptions o;
      o.env = env;
      o.policy = gcsl_ckpt;
      o.report = gcsl_report;
      o.seed = seed;
      o.goals = st.get<int>("goals", o.goals);
      o.budget = st.get<int>("budget", o.budget);
      specs.push_back(gcsl_eval_stage(o));
    } else if (name == "eval") {
      EvalOptions o;
      o.env = env;
      o.embed = embed_ckpt;
      o.dataset = dataset;
      o.max_gap = st.optional<int>("max_gap", embed_max_gap);
      if (listed("plan")) o.episodes = plan_report;
      o.seed = seed;
      o.out = out / "eval_report.txt";
      specs.push_back(eval_stage(o));
    }
    st.finish();
  }

  fs::create_directories(out);
  PipelineResult result{out, {}};
  for (const StageSpec& stage : specs) result.stages.push_back(execute_stage(stage, true));
  return result;
}

}  // namespace madspace
