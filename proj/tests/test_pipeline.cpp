#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pare/archive.h"
#include "pare/checkpoint.h"
#include "pare/error.h"
#include "pare/pipeline.h"
#include "pare/surgery.h"

using namespace pare;
namespace fs = std::filesystem;

namespace {

// Small enough that the whole pipeline runs in a few seconds.
nlohmann::json tiny_document(const fs::path& out) {
  auto doc = nlohmann::json::parse(R"({
    "seed": 3,
    "model": {"n_blocks": 4, "model_dim": 16, "sa_heads": 4, "ca_heads": 4, "head_dim": 4,
              "ffn_dim": 32, "temporal_slices": 2, "spatial_h": 2, "spatial_w": 2, "channels": 4,
              "cond_text_len": 2, "cond_dim": 8, "time_embed_dim": 8},
    "calibration": {"n_samples": 2, "n_bins": 2},
    "pruning": {"k_min_heads": 1},
    "routing": {"k_min": 2, "k_max": 3, "hidden": 8, "sin_dim": 8, "content_dim": 8},
    "teacher": {"steps": 40, "warmup": 4, "batch_size": 2},
    "training": {"steps": 12, "warmup": 2, "batch_size": 2, "checkpoint_every": 5},
    "report": {"heldout_clips": 2, "t_grid": [100, 900], "content_samples": 3}
  })");
  doc["paths"]["out_dir"] = out.string();
  return doc;
}

PipelineConfig tiny(const fs::path& out) { return pipeline_config_from_json(tiny_document(out)); }

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pare_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

void run_through_prune(const PipelineConfig& c) {
  cmd_teach(c, {});
  cmd_calibrate(c, {});
  cmd_prune(c, {});
}

int cli(const std::string& args) {
  const int status = std::system((std::string(PARE_CLI) + " -q " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config defaults, overrides and validation") {
  PipelineConfig d = pipeline_config_from_json(nlohmann::json::object());
  CHECK(d.pruning.p_sa == 0.3);
  CHECK(d.pruning.alpha_temp == 1.5);
  CHECK(d.routing.k_min == 4);
  CHECK(d.routing.k_max == 7);
  CHECK(d.training.weights.temp == 4.0);
  CHECK(pipeline_config_from_json({{"mode", "t2v"}}).training.weights.temp == 8.0);
  CHECK_FALSE(pipeline_config_from_json({{"mode", "t2v"}}).model.image_stream);

  nlohmann::json doc = nlohmann::json::object();
  apply_override(doc, "training.steps=50");
  apply_override(doc, "mode=t2v");
  apply_override(doc, "pruning.alpha_temp=2");
  PipelineConfig c = pipeline_config_from_json(doc);
  CHECK(c.training.steps == 50);
  CHECK(c.mode == Mode::t2v);
  CHECK(c.pruning.alpha_temp == 2.0);
  CHECK_THROWS_AS(apply_override(doc, "no_equals_sign"), ConfigError);

  CHECK_THROWS_AS(pipeline_config_from_json({{"trainig", {{"steps", 3}}}}), ConfigError);
  CHECK_THROWS_AS(pipeline_config_from_json({{"training", {{"stepz", 3}}}}), ConfigError);
  CHECK_THROWS_AS(pipeline_config_from_json({{"pruning", {{"p_sa", 1.0}}}}).validate(), ConfigError);
  CHECK_THROWS_AS(pipeline_config_from_json({{"routing", {{"k_max", 9}}}}).validate(), ConfigError);
  CHECK_THROWS_AS(pipeline_config_from_json({{"mode", "t2v"}, {"model", {{"image_stream", true}}}}),
                  ConfigError);

  const PipelineConfig round = pipeline_config_from_json(to_json(c));
  CHECK(to_json(round) == to_json(c));
}

TEST_CASE("tiny pipeline end to end") {
  const fs::path dir = fresh_dir("e2e");
  const PipelineConfig c = tiny(dir);
  const auto teach = cmd_teach(c, {});
  CHECK(line_count(dir / artifact::kTeachLog) == 40);
  CHECK(teach["final_loss"].get<double>() < teach["initial_loss"].get<double>());
  CHECK(fs::exists(dir / "teach.config.json"));

  cmd_calibrate(c, {});
  CHECK(line_count(dir / artifact::kHeadReports) == 1 + 4 * (4 + 4));
  const std::string csv = slurp(dir / artifact::kHeadReports);
  CHECK(csv.rfind("block,head,kind,raw_score,intra_ratio,type,adjusted_score", 0) == 0);
  CHECK_THROWS_AS(cmd_calibrate(c, {}), IoError);
  cmd_calibrate(c, {.force = true});
  CHECK(slurp(dir / artifact::kHeadReports) == csv);

  const auto prune = cmd_prune(c, {});
  const double reduction = prune["reduction_percent"].get<double>();
  CHECK(reduction > 0.0);
  const auto plan_doc = nlohmann::json::parse(slurp(dir / artifact::kPlan));
  CHECK(to_json(pruning_plan_from_json(plan_doc))["heads"] == plan_doc["heads"]);

  CHECK_THROWS_AS(cmd_train(c, 2, {}), ContractError);  // no stage-1 checkpoint
  cmd_train(c, 1, {});
  CHECK(line_count(dir / artifact::kStage1Log) == 12);
  cmd_train(c, 2, {});
  const auto raw = cmd_train(c, 2, {.allow_raw = true});
  CHECK_FALSE(raw["from_stage1"].get<bool>());
  std::ifstream raw_log(dir / artifact::kStage2RawLog);
  std::string first;
  std::getline(raw_log, first);
  CHECK(first.find("warning") != std::string::npos);

  const auto summary = cmd_report(c, {});
  CHECK(summary.contains("heldout_mse"));
  const auto cost = nlohmann::json::parse(slurp(dir / artifact::kCost));
  CHECK(std::abs(cost["reference_projection"]["total"].get<double>() - 52.91005291005291) <= 1e-9);
  CHECK(cost["max_relative_delta"].get<double>() <= 0.01);
  std::ifstream freq(dir / artifact::kRouting);
  std::string header, line;
  std::getline(freq, header);
  CHECK(header == "block,t100,t900");
  std::getline(freq, line);
  CHECK(line == "0,1,1");
}

TEST_CASE("zero pruning ratios keep the teacher") {
  const fs::path dir = fresh_dir("zero");
  auto doc = tiny_document(dir);
  doc["pruning"] = {{"p_sa", 0.0}, {"p_ca", 0.0}, {"p_ffn", 0.0}, {"k_min_heads", 1}};
  const PipelineConfig c = pipeline_config_from_json(doc);
  cmd_teach(c, {});
  cmd_calibrate(c, {});
  const auto r = cmd_prune(c, {});
  CHECK(r["reduction_percent"].get<double>() == 0.0);
  const DiTParams teacher = read_model(TensorArchive::load(dir / artifact::kTeacher));
  const DiTParams student = read_model(TensorArchive::load(dir / artifact::kStudentRaw));
  CHECK(student.parameter_count() == teacher.parameter_count());
}

TEST_CASE("teacher checkpoints are byte-identical across runs") {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  cmd_teach(tiny(a), {});
  cmd_teach(tiny(b), {});
  CHECK(slurp(a / artifact::kTeacher) == slurp(b / artifact::kTeacher));
}

TEST_CASE("resume matches an uninterrupted run") {
  const fs::path a = fresh_dir("resume_a"), b = fresh_dir("resume_b");
  const PipelineConfig ca = tiny(a), cb = tiny(b);
  run_through_prune(ca);
  run_through_prune(cb);
  cmd_train(ca, 1, {});

  const auto stopped = cmd_train(cb, 1, {.stop_at = 7});
  CHECK_FALSE(stopped["complete"].get<bool>());
  CHECK(read_state(TensorArchive::load(b / artifact::kStage1)).step == 7);
  CHECK_THROWS_AS(cmd_train(cb, 2, {}), ContractError);  // stage 1 incomplete
  const auto resumed = cmd_train(cb, 1, {.resume = true});
  CHECK(resumed["steps"].get<std::size_t>() == 12);
  CHECK(slurp(a / artifact::kStage1) == slurp(b / artifact::kStage1));
  CHECK(slurp(a / artifact::kStage1Log) == slurp(b / artifact::kStage1Log));
}

TEST_CASE("CLI exit codes") {
  const fs::path dir = fresh_dir("cli");
  const fs::path cfg = dir / "tiny.json";
  std::ofstream(cfg) << tiny_document(dir / "out").dump(2);
  const std::string base = "-c " + cfg.string() + " ";
  CHECK(cli(base + "teach") == 0);
  CHECK(cli(base + "teach") == 4);  // refuses to overwrite
  CHECK(cli(base + "--force teach") == 0);
  CHECK(cli(base + "--set training.bogus=1 teach") == 2);
  CHECK(cli(base + "--set pruning.p_sa=1.5 calibrate") == 2);
  CHECK(cli("-c " + (dir / "missing.json").string() + " teach") == 4);
  CHECK(cli(base + "calibrate") == 0);
  CHECK(cli(base + "prune") == 0);
  CHECK(cli(base + "train --stage 2") == 3);
  CHECK(cli(base + "train --stage 3") == 2);
  CHECK(cli(base + "train --stage 1") == 0);
  CHECK(cli(base + "train --stage 2") == 0);
  CHECK(cli(base + "report") == 0);
  CHECK(fs::exists(dir / "out" / artifact::kSummary));
  CHECK(fs::exists(dir / "out" / "report.config.json"));
}
