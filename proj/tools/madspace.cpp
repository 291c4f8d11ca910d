#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "madspace/allocator.hpp"
#include "madspace/errors.hpp"
#include "madspace/pipeline.hpp"
#include "madspace/text_io.hpp"

namespace {

using namespace madspace;

Cell parse_goal(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ConfigError("--goal expects \"x,y\"");
  return Cell{static_cast<int>(text_io::parse_int(text.substr(0, comma))),
              static_cast<int>(text_io::parse_int(text.substr(comma + 1)))};
}

void report(const StageOutcome& o) {
  std::cout << o.command << (o.skipped ? " (skipped, up to date)" : "") << ": " << o.stats.dump()
            << "\n  manifest: " << o.manifest.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  madspace::retain_heap_memory();
  CLI::App app{"Distance-aware state embeddings, latent planning and reward shaping"};
  app.require_subcommand(1);

  CollectOptions collect;
  std::string collect_policy = "random";
  auto* c = app.add_subcommand("collect", "Roll out a behavior policy and write a trajectory dataset");
  c->add_option("--env", collect.env, "Environment config")->required()->check(CLI::ExistingFile);
  c->add_option("--policy", collect_policy, "'random' or a Q-table checkpoint");
  c->add_option("--epsilon", collect.epsilon, "Random-action probability with a Q-table policy");
  c->add_option("--trajectories,-n", collect.trajectories, "Number of trajectories")->capture_default_str();
  c->add_option("--seed", collect.seed)->required();
  c->add_option("--out", collect.out, "Dataset path (JSONL)")->required();

  TrainEmbedOptions embed;
  std::string embed_norm = "l1";
  bool no_penalty = false;
  std::string embed_log;
  int embed_max_gap = 0;
  auto* te = app.add_subcommand("train-embed", "Fit the distance-preserving state embedding");
  te->add_option("--dataset", embed.dataset)->required()->check(CLI::ExistingFile);
  te->add_option("--out", embed.out, "Embedding checkpoint")->required();
  te->add_option("--dim", embed.config.embed_dim)->capture_default_str();
  te->add_option("--norm", embed_norm, "l1 or l2")->capture_default_str();
  te->add_option("--alpha", embed.config.alpha_exponent, "Pair weight exponent")->capture_default_str();
  te->add_option("--steps", embed.config.train_steps)->capture_default_str();
  te->add_option("--batch", embed.config.batch_size)->capture_default_str();
  te->add_option("--lr", embed.config.learning_rate)->capture_default_str();
  te->add_option("--weight-decay", embed.config.weight_decay)->capture_default_str();
  te->add_option("--max-gap", embed_max_gap, "Largest trajectory gap used for pairs (0 = all)");
  te->add_flag("--no-penalty", no_penalty, "Drop the constraint penalty term");
  te->add_option("--seed", embed.config.seed)->required();
  te->add_option("--log", embed_log, "CSV training log");

  TrainDynOptions dyn;
  std::string dyn_log;
  bool no_residual = false;
  auto* td = app.add_subcommand("train-dyn", "Fit the latent transition model on a frozen embedding");
  td->add_option("--env", dyn.env)->required()->check(CLI::ExistingFile);
  td->add_option("--dataset", dyn.dataset)->required()->check(CLI::ExistingFile);
  td->add_option("--embed", dyn.embed)->required()->check(CLI::ExistingFile);
  td->add_option("--out", dyn.out, "Dynamics checkpoint")->required();
  td->add_option("--steps", dyn.config.train_steps)->capture_default_str();
  td->add_option("--batch", dyn.config.batch_size)->capture_default_str();
  td->add_option("--lr", dyn.config.learning_rate)->capture_default_str();
  td->add_option("--hidden", dyn.config.hidden)->capture_default_str();
  td->add_flag("--no-residual", no_residual, "Predict the next embedding directly");
  td->add_option("--seed", dyn.config.seed)->required();
  td->add_option("--log", dyn_log, "CSV training log");

  PlanOptions plan;
  double goal_eps = -1.0;
  auto* pl = app.add_subcommand("plan", "Run latent random-shooting planning toward random goals");
  pl->add_option("--env", plan.env)->required()->check(CLI::ExistingFile);
  pl->add_option("--embed", plan.embed)->required()->check(CLI::ExistingFile);
  pl->add_option("--dyn", plan.dyn)->required()->check(CLI::ExistingFile);
  pl->add_option("--goals", plan.goals)->capture_default_str();
  pl->add_option("--horizon", plan.config.horizon)->capture_default_str();
  pl->add_option("--samples", plan.config.num_sequences)->capture_default_str();
  pl->add_option("--budget", plan.config.max_env_steps)->capture_default_str();
  pl->add_option("--goal-eps", goal_eps, "Latent goal tolerance for continuous envs");
  pl->add_option("--seed", plan.config.seed)->required();
  pl->add_option("--report", plan.report, "Per-episode JSONL report")->required();

  ShapeTrainOptions shape;
  std::string shape_embed, shape_goal, shape_qtable;
  bool shaped = false, unshaped = false;
  auto* st = app.add_subcommand("shape-train", "Tabular Q-learning with or without embedding shaping");
  st->add_option("--env", shape.env)->required()->check(CLI::ExistingFile);
  st->add_option("--embed", shape_embed, "Embedding checkpoint (needed with --shaped)");
  st->add_option("--goal", shape_goal, "Goal cell \"x,y\"")->required();
  st->add_option("--episodes", shape.episodes)->capture_default_str();
  auto* shaped_flag = st->add_flag("--shaped", shaped);
  st->add_flag("--unshaped", unshaped)->excludes(shaped_flag);
  st->add_option("--gamma", shape.config.gamma)->capture_default_str();
  st->add_option("--lr", shape.config.learning_rate)->capture_default_str();
  st->add_option("--seed", shape.config.seed)->required();
  st->add_option("--curve", shape.curve, "Per-episode CSV")->required();
  st->add_option("--qtable-out", shape_qtable, "Write the learned Q-table");

  GcslTrainOptions gcsl;
  std::string gcsl_log;
  bool no_horizon = false;
  int gcsl_max_gap = 0;
  auto* gt = app.add_subcommand("gcsl-train", "Train the hindsight-relabeled behavior cloning baseline");
  gt->add_option("--env", gcsl.env)->required()->check(CLI::ExistingFile);
  gt->add_option("--dataset", gcsl.dataset)->required()->check(CLI::ExistingFile);
  gt->add_option("--out", gcsl.out, "Policy checkpoint")->required();
  gt->add_option("--steps", gcsl.config.train_steps)->capture_default_str();
  gt->add_option("--batch", gcsl.config.batch_size)->capture_default_str();
  gt->add_option("--lr", gcsl.config.learning_rate)->capture_default_str();
  gt->add_option("--max-gap", gcsl_max_gap, "Largest relabeling gap (0 = all)");
  gt->add_flag("--no-horizon", no_horizon, "Drop the remaining-horizon input");
  gt->add_option("--seed", gcsl.config.seed)->required();
  gt->add_option("--log", gcsl_log, "CSV training log");

  GcslEvalOptions gcsl_eval;
  auto* ge = app.add_subcommand("gcsl-eval", "Roll out a GCSL policy toward random goals");
  ge->add_option("--env", gcsl_eval.env)->required()->check(CLI::ExistingFile);
  ge->add_option("--policy", gcsl_eval.policy)->required()->check(CLI::ExistingFile);
  ge->add_option("--goals", gcsl_eval.goals)->capture_default_str();
  ge->add_option("--budget", gcsl_eval.budget)->capture_default_str();
  ge->add_option("--seed", gcsl_eval.seed)->required();
  ge->add_option("--report", gcsl_eval.report, "Per-episode JSONL report")->required();

  EvalOptions eval;
  std::string eval_dyn, eval_dataset, eval_episodes;
  int eval_max_gap = 0;
  auto* ev = app.add_subcommand("eval", "Score an embedding (and optionally planning) against exact distances");
  ev->add_option("--env", eval.env)->required()->check(CLI::ExistingFile);
  ev->add_option("--embed", eval.embed)->required()->check(CLI::ExistingFile);
  ev->add_option("--dyn", eval_dyn, "Dynamics checkpoint; runs planner episodes");
  ev->add_option("--dataset", eval_dataset, "Dataset for the training-pair violation rate");
  ev->add_option("--max-gap", eval_max_gap, "Largest gap for the violation rate (0 = all)");
  ev->add_option("--episodes", eval_episodes, "Score an existing plan or gcsl-eval report");
  ev->add_option("--goals", eval.goals)->capture_default_str();
  ev->add_option("--seed", eval.seed)->capture_default_str();
  ev->add_option("--out", eval.out, "Key-value report")->required();

  std::string pipeline_config;
  auto* pp = app.add_subcommand("pipeline", "Run the stages named in a JSON config, skipping current ones");
  pp->add_option("config", pipeline_config)->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  auto opt_path = [](const std::string& s) -> std::optional<fs::path> {
    if (s.empty()) return std::nullopt;
    return fs::path(s);
  };
  auto opt_gap = [](int g) -> std::optional<int> {
    if (g <= 0) return std::nullopt;
    return g;
  };

  try {
    if (*c) {
      if (collect_policy != "random") collect.qtable = collect_policy;
      report(execute_stage(collect_stage(collect)));
    } else if (*te) {
      embed.config.norm = norm_from_string(embed_norm);
      embed.config.penalty_enabled = !no_penalty;
      embed.config.max_gap = opt_gap(embed_max_gap);
      embed.log = opt_path(embed_log);
      report(execute_stage(train_embed_stage(embed)));
    } else if (*td) {
      dyn.config.residual = !no_residual;
      dyn.log = opt_path(dyn_log);
      report(execute_stage(train_dyn_stage(dyn)));
    } else if (*pl) {
      if (goal_eps >= 0.0) plan.config.goal_eps = goal_eps;
      report(execute_stage(plan_stage(plan)));
    } else if (*st) {
      if (!shaped && !unshaped) throw ConfigError("shape-train needs --shaped or --unshaped");
      shape.shaped = shaped;
      shape.embed = opt_path(shape_embed);
      shape.goal = parse_goal(shape_goal);
      shape.qtable_out = opt_path(shape_qtable);
      report(execute_stage(shape_train_stage(shape)));
    } else if (*gt) {
      gcsl.config.horizon_conditioned = !no_horizon;
      gcsl.config.max_gap = opt_gap(gcsl_max_gap);
      gcsl.log = opt_path(gcsl_log);
      report(execute_stage(gcsl_train_stage(gcsl)));
    } else if (*ge) {
      report(execute_stage(gcsl_eval_stage(gcsl_eval)));
    } else if (*ev) {
      eval.dyn = opt_path(eval_dyn);
      eval.dataset = opt_path(eval_dataset);
      eval.episodes = opt_path(eval_episodes);
      eval.max_gap = opt_gap(eval_max_gap);
      report(execute_stage(eval_stage(eval)));
    } else if (*pp) {
      const PipelineResult result = run_pipeline(pipeline_config);
      for (const StageOutcome& o : result.stages) report(o);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
