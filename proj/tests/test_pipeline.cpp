#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "madspace/errors.hpp"
#include "madspace/pipeline.hpp"

using namespace madspace;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

fs::path write_env(const testutil::TempDir& dir, const EnvSpec& spec) {
  const fs::path p = dir / "env.cfg";
  write_text(p, format_env_spec(spec));
  return p;
}

const char* kSmallPipeline = R"({
  "env": "env.cfg",
  "out_dir": "run",
  "seed": 3,
  "stages": ["collect", "train-embed", "train-dyn", "plan", "gcsl-train", "gcsl-eval", "eval"],
  "collect": {"trajectories": 20},
  "train-embed": {"steps": 40, "batch": 32, "max_gap": 4, "dim": 8, "hidden": [16, 16]},
  "train-dyn": {"steps": 40, "batch": 32, "hidden": 16},
  "plan": {"goals": 5},
  "gcsl-train": {"steps": 40, "batch": 32, "hidden": [16]},
  "gcsl-eval": {"goals": 5}
})";

int run_cli(const std::string& args, const fs::path& stderr_file) {
  const std::string cmd = std::string(MADSPACE_CLI_PATH) + " " + args + " > /dev/null 2> " + stderr_file.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("collection is deterministic and covers a small grid") {
  const EnvSpec spec = testutil::open_grid(5, 5, 50);
  const auto a = collect(spec, {}, 200, 7);
  const auto b = collect(spec, {}, 200, 7);
  CHECK(a == b);
  CHECK(collect(spec, {}, 200, 8) != a);
  REQUIRE(a.size() == 200);
  for (const Trajectory& t : a) {
    CHECK(t.length() <= 50);
    CHECK_NOTHROW(t.validate());
  }
  CHECK(*coverage(spec, a) >= 0.99);

  testutil::TempDir dir("collect");
  save_dataset(a, dir / "a.jsonl");
  save_dataset(b, dir / "b.jsonl");
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
  CHECK(load_dataset(dir / "a.jsonl") == a);

  EnvSpec hill;
  hill.kind = EnvKind::kMountainHill;
  hill.max_episode_steps = 30;
  const auto cont = collect(hill, {}, 3, 1);
  CHECK_FALSE(coverage(hill, cont).has_value());
}

TEST_CASE("greedy collection follows the Q-table") {
  const EnvSpec spec = testutil::open_grid(4, 4, 10);
  QTable q(spec, 0.0);
  for (std::size_t s = 0; s < q.indexer().size(); ++s) q.at(s, kRight.index) = 1.0;
  const auto trajs = collect(spec, {&q, 0.0}, 5, 2);
  for (const Trajectory& t : trajs) {
    for (Action a : t.actions) CHECK(a == kRight);
  }
}

TEST_CASE("task sampling") {
  const EnvSpec spec = testutil::open_grid(5, 5);
  const auto tasks = sample_tasks(spec, 100, 4);
  REQUIRE(tasks.size() == 100);
  for (const GoalTask& t : tasks) CHECK(t.start != t.goal);
  const auto again = sample_tasks(spec, 100, 4);
  for (std::size_t i = 0; i < tasks.size(); ++i) CHECK(again[i].goal == tasks[i].goal);
}

TEST_CASE("git blob hashes match known values") {
  testutil::TempDir dir("hash");
  write_text(dir / "hello.txt", "hello\n");
  write_text(dir / "empty.txt", "");
  CHECK(git_blob_hash(dir / "hello.txt") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(git_blob_hash(dir / "empty.txt") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK_THROWS(git_blob_hash(dir / "missing.txt"));
}

TEST_CASE("episode reports round trip") {
  const EnvSpec spec = testutil::open_grid(5, 5);
  const std::vector<EpisodeRecord> records{
      {testutil::cell(spec, 0, 0), testutil::cell(spec, 4, 4), 9, true, 0.0},
      {testutil::cell(spec, 1, 0), testutil::cell(spec, 2, 4), 50, false, 1.0 / 3.0},
      {testutil::cell(spec, 1, 0), testutil::cell(spec, 2, 4), 50, false, std::nan("")},
  };
  testutil::TempDir dir("report");
  write_episode_report(records, dir / "r.jsonl");
  const auto back = read_episode_report(dir / "r.jsonl");
  REQUIRE(back.size() == 3);
  CHECK(back[1].final_distance == 1.0 / 3.0);
  CHECK(back[0].goal == records[0].goal);
  CHECK(back[0].steps == 9);
  CHECK(std::isnan(back[2].final_distance));
}

TEST_CASE("manifests record hashes and stages skip when current") {
  testutil::TempDir dir("stage");
  write_text(dir / "in.txt", "input\n");
  int runs = 0;
  StageSpec stage;
  stage.command = "copy";
  stage.flags = {{"upper", false}};
  stage.seed = 5;
  stage.inputs = {dir / "in.txt"};
  stage.outputs = {dir / "out.txt"};
  stage.body = [&] {
    ++runs;
    write_text(dir / "out.txt", slurp(dir / "in.txt"));
    return nlohmann::json{{"bytes", 6}};
  };
  const StageOutcome first = execute_stage(stage, true);
  CHECK_FALSE(first.skipped);
  CHECK(runs == 1);
  const RunManifest m = RunManifest::load(manifest_path(dir / "out.txt"));
  CHECK(m.command == "copy");
  CHECK(m.seed == 5);
  REQUIRE(m.inputs.size() == 1);
  CHECK(m.inputs[0].hash == git_blob_hash(dir / "in.txt"));
  CHECK(m.outputs[0].hash == git_blob_hash(dir / "out.txt"));
  CHECK(m.stats["bytes"] == 6);
  CHECK(RunManifest::from_json(m.to_json()).to_json() == m.to_json());

  const StageOutcome second = execute_stage(stage, true);
  CHECK(second.skipped);
  CHECK(second.stats["bytes"] == 6);
  CHECK(runs == 1);

  execute_stage(stage, false);
  CHECK(runs == 2);

  write_text(dir / "in.txt", "changed\n");
  CHECK_FALSE(stage_is_current(stage));
  execute_stage(stage, true);
  CHECK(runs == 3);

  stage.flags["upper"] = true;
  CHECK_FALSE(stage_is_current(stage));
  execute_stage(stage, true);
  write_text(dir / "out.txt", "tampered\n");
  CHECK_FALSE(stage_is_current(stage));
}

TEST_CASE("stage failures name the stage and the offending file") {
  testutil::TempDir dir("fail");
  const fs::path env = write_env(dir, testutil::open_grid(4, 4, 20));
  CollectOptions c;
  c.env = env;
  c.trajectories = 10;
  c.seed = 1;
  c.out = dir / "data.jsonl";
  execute_stage(collect_stage(c));
  write_text(dir / "embed.ckpt", "madspace_embedding 1\nnorm l1\nalpha_exponent two\n");
  TrainDynOptions d;
  d.env = env;
  d.dataset = dir / "data.jsonl";
  d.embed = dir / "embed.ckpt";
  d.out = dir / "dyn.ckpt";
  try {
    execute_stage(train_dyn_stage(d));
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    const std::string what = e.what();
    CHECK(e.stage() == "train-dyn");
    CHECK(what.rfind("stage train-dyn: ", 0) == 0);
    CHECK(what.find("embed.ckpt") != std::string::npos);
  }

  TrainEmbedOptions te;
  te.dataset = dir / "nope.jsonl";
  te.out = dir / "e.ckpt";
  CHECK_THROWS_WITH_AS(execute_stage(train_embed_stage(te)), doctest::Contains("stage train-embed"),
                       StageError);
}

TEST_CASE("a whole pipeline reruns as a no-op and reproduces bitwise") {
  testutil::TempDir dir("pipeline");
  write_env(dir, testutil::open_grid(5, 5, 40));
  write_text(dir / "pipeline.json", kSmallPipeline);
  const PipelineResult first = run_pipeline(dir / "pipeline.json");
  REQUIRE(first.stages.size() == 7);
  for (const StageOutcome& s : first.stages) CHECK_FALSE(s.skipped);
  for (const char* name : {"dataset.jsonl", "embedding.ckpt", "dynamics.ckpt", "plan_report.jsonl", "gcsl.ckpt",
                           "gcsl_report.jsonl", "eval_report.txt"}) {
    CHECK(fs::exists(first.out_dir / name));
    CHECK(fs::exists(manifest_path(first.out_dir / name)));
  }
  const std::string embed_bytes = slurp(first.out_dir / "embedding.ckpt");
  const PipelineResult second = run_pipeline(dir / "pipeline.json");
  for (const StageOutcome& s : second.stages) CHECK(s.skipped);

  fs::remove_all(first.out_dir);
  run_pipeline(dir / "pipeline.json");
  CHECK(slurp(first.out_dir / "embedding.ckpt") == embed_bytes);

  const EvalReport report = read_eval_report(first.out_dir / "eval_report.txt");
  CHECK(report.mae.has_value());
  CHECK(report.success_rate.has_value());

  write_text(dir / "bad.json", R"({"env": "env.cfg", "out_dir": "x", "seed": 1, "stages": ["collect"], "collect": {"trajectorys": 3}})");
  CHECK_THROWS_WITH_AS(run_pipeline(dir / "bad.json"), doctest::Contains("trajectorys"), ConfigError);
  write_text(dir / "bad2.json", R"({"env": "env.cfg", "out_dir": "x", "seed": 1, "stages": ["dance"]})");
  CHECK_THROWS_AS(run_pipeline(dir / "bad2.json"), ConfigError);
}

TEST_CASE("command-line tool") {
  testutil::TempDir dir("cli");
  const fs::path env = write_env(dir, testutil::open_grid(4, 4, 20));
  const fs::path err = dir / "stderr.txt";
  CHECK(run_cli("collect --env " + env.string() + " -n 5 --seed 2 --out " + (dir / "d.jsonl").string(), err) == 0);
  CHECK(load_dataset(dir / "d.jsonl").size() == 5);
  CHECK(fs::exists(manifest_path(dir / "d.jsonl")));

  CHECK(run_cli("collect --env " + (dir / "missing.cfg").string() + " -n 5 --seed 2 --out " +
                    (dir / "e.jsonl").string(),
                err) != 0);
  CHECK(slurp(err).find("missing.cfg") != std::string::npos);
  write_text(dir / "broken.cfg", "env = \"open_grid\"\nwidth = [\n");
  CHECK(run_cli("collect --env " + (dir / "broken.cfg").string() + " -n 5 --seed 2 --out " +
                    (dir / "e.jsonl").string(),
                err) == 1);
  CHECK(slurp(err).rfind("error: ", 0) == 0);
  CHECK(slurp(err).find("broken.cfg") != std::string::npos);
  CHECK(run_cli("collect --env " + env.string() + " -n 5 --out " + (dir / "e.jsonl").string(), err) != 0);
}

}  // TEST_SUITE
