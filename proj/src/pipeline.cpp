#include "pare/pipeline.h"

#include <fstream>
#include <ostream>
#include <sstream>

#include "json_util.h"
#include "pare/analysis.h"
#include "pare/archive.h"
#include "pare/checkpoint.h"
#include "pare/costmodel.h"
#include "pare/error.h"
#include "pare/ffnprune.h"
#include "pare/rng.h"
#include "pare/surgery.h"

namespace pare {
namespace fs = std::filesystem;
using nlohmann::json;
using detail::read_key;
using detail::reject_unknown_keys;

namespace {

enum Stream : std::uint64_t {
  kTeacherInit = 1,
  kTeacherTrain,
  kCalibration,
  kRouterInit,
  kStage1,
  kStage2,
  kHeldout,
  kContent
};

std::uint64_t stream_seed(const PipelineConfig& c, Stream s) { return mix_seed(c.seed, s); }

void say(const RunOptions& o, const std::string& msg) {
  if (o.log) *o.log << msg << '\n';
}

fs::path out(const PipelineConfig& c, const char* name) { return c.out_dir / name; }

// Refuses to clobber existing outputs unless forced.
void claim_outputs(const std::vector<fs::path>& paths, bool force) {
  for (const fs::path& p : paths) {
    if (!force && fs::exists(p)) {
      throw IoError(p.string() + " already exists; pass --force to overwrite");
    }
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

TensorArchive require_archive(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw ContractError(what + " not found at " + path.string());
  return TensorArchive::load(path);
}

void echo_config(const PipelineConfig& c, const std::string& command) {
  write_text(c.out_dir / (command + ".config.json"), to_json(c).dump(2) + "\n");
}

std::string csv_matrix(const std::vector<std::vector<double>>& m, const std::vector<int>& cols,
                       const char* row_label) {
  std::ostringstream os;
  os << row_label;
  for (int t : cols) os << ",t" << t;
  os << '\n';
  os.precision(10);
  for (std::size_t i = 0; i < m.size(); ++i) {
    os << i;
    for (double v : m[i]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

json weights_json(const LossWeights& w) {
  return {{"feat", w.feat}, {"tfm", w.tfm}, {"dfm", w.dfm}, {"temp", w.temp}};
}

}  // namespace

void PipelineConfig::validate() const {
  model.validate();
  if ((mode == Mode::i2v) != model.image_stream) {
    throw ConfigError("model.image_stream must be true for i2v and false for t2v");
  }
  if (calibration.n_samples < 1) throw ConfigError("calibration.n_samples must be >= 1");
  if (calibration.n_bins < 1 || calibration.n_bins > static_cast<std::size_t>(model.t_max)) {
    throw ConfigError("calibration.n_bins must be in [1, T]");
  }
  if (calibration.max_queries < 1) throw ConfigError("calibration.max_queries must be >= 1");

  retained_head_count(model.sa_heads, pruning.p_sa, pruning.k_min_heads);
  retained_head_count(model.ca_heads, pruning.p_ca, pruning.k_min_heads);
  if (!(pruning.alpha_temp >= 1.0)) throw ConfigError("pruning.alpha_temp must be >= 1");
  classify_head(0.5, pruning.tau_s, pruning.tau_t);
  if (!(pruning.tau_ffn > 0.0 && pruning.tau_ffn <= 1.0)) {
    throw ConfigError("pruning.tau_ffn must be in (0, 1]");
  }
  ffn_target_budget(model.ffn_dim, pruning.p_ffn, pruning.align_unit);

  routing.validate(model.n_blocks);

  if (teacher.steps < 1 || teacher.warmup >= teacher.steps) {
    throw ConfigError("teacher: need steps >= 1 and warmup < steps");
  }
  if (!(teacher.lr > 0.0) || teacher.batch_size < 1) throw ConfigError("teacher: bad lr or batch");

  training.weights.validate();
  if (training.steps < 1 || training.warmup >= training.steps) {
    throw ConfigError("training: need steps >= 1 and warmup < steps");
  }
  if (!(training.lr_student >= 0.0) || !(training.lr_router >= 0.0)) {
    throw ConfigError("training: learning rates must be >= 0");
  }
  if (training.batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
  if (training.sampled_blocks < 1 || training.sampled_blocks > model.n_blocks) {
    throw ConfigError("training.sampled_blocks must be in [1, N]");
  }
  if (!(training.max_grad_norm >= 0.0)) throw ConfigError("training.max_grad_norm must be >= 0");
  if (training.checkpoint_every < 1) throw ConfigError("training.checkpoint_every must be >= 1");

  if (!(cost.s_orig > 0.0 && cost.s_distill > 0.0)) throw ConfigError("cost: step counts must be > 0");
  if (cost.guidance != 1 && cost.guidance != 2) throw ConfigError("cost.guidance must be 1 or 2");

  if (report.t_grid.empty()) throw ConfigError("report.t_grid must not be empty");
  for (int t : report.t_grid) {
    if (t < 0 || t > model.t_max) throw ConfigError("report.t_grid entries must lie in [0, T]");
  }
  if (report.heldout_clips < 1 || report.content_samples < 1) {
    throw ConfigError("report: heldout_clips and content_samples must be >= 1");
  }
  if (out_dir.empty()) throw ConfigError("paths.out_dir must not be empty");
}

TrainOptions PipelineConfig::train_options(std::size_t stage) const {
  TrainOptions o;
  o.mode = mode;
  o.weights = training.weights;
  o.student_lr = {training.lr_student, training.warmup, training.steps};
  o.router_lr = {training.lr_router, training.warmup, training.steps};
  o.batch_size = training.batch_size;
  o.sampled_blocks = training.sampled_blocks;
  o.seed = stream_seed(*this, stage == 1 ? kStage1 : kStage2);
  o.max_grad_norm = training.max_grad_norm;
  return o;
}

TrainOptions PipelineConfig::teacher_options() const {
  TrainOptions o;
  o.mode = mode;
  o.student_lr = {teacher.lr, teacher.warmup, teacher.steps};
  o.batch_size = teacher.batch_size;
  o.seed = stream_seed(*this, kTeacherTrain);
  return o;
}

json to_json(const PipelineConfig& c) {
  return {
      {"mode", mode_name(c.mode)},
      {"seed", c.seed},
      {"model", to_json(c.model)},
      {"calibration",
       {{"n_samples", c.calibration.n_samples},
        {"n_bins", c.calibration.n_bins},
        {"max_queries", c.calibration.max_queries}}},
      {"pruning",
       {{"p_sa", c.pruning.p_sa},
        {"p_ca", c.pruning.p_ca},
        {"p_ffn", c.pruning.p_ffn},
        {"k_min_heads", c.pruning.k_min_heads},
        {"alpha_temp", c.pruning.alpha_temp},
        {"tau_s", c.pruning.tau_s},
        {"tau_t", c.pruning.tau_t},
        {"tau_ffn", c.pruning.tau_ffn},
        {"align_unit", c.pruning.align_unit}}},
      {"routing", to_json(c.routing)},
      {"teacher",
       {{"steps", c.teacher.steps},
        {"lr", c.teacher.lr},
        {"warmup", c.teacher.warmup},
        {"batch_size", c.teacher.batch_size}}},
      {"training",
       {{"weights", weights_json(c.training.weights)},
        {"lr_student", c.training.lr_student},
        {"lr_router", c.training.lr_router},
        {"steps", c.training.steps},
        {"warmup", c.training.warmup},
        {"batch_size", c.training.batch_size},
        {"sampled_blocks", c.training.sampled_blocks},
        {"max_grad_norm", c.training.max_grad_norm},
        {"checkpoint_every", c.training.checkpoint_every}}},
      {"cost",
       {{"s_orig", c.cost.s_orig}, {"s_distill", c.cost.s_distill}, {"guidance", c.cost.guidance}}},
      {"report",
       {{"heldout_clips", c.report.heldout_clips},
        {"t_grid", c.report.t_grid},
        {"content_samples", c.report.content_samples}}},
      {"paths", {{"out_dir", c.out_dir.string()}}},
  };
}

PipelineConfig pipeline_config_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"mode", "seed", "model", "calibration", "pruning", "routing", "teacher",
                       "training", "cost", "report", "paths"},
                      "config");
  PipelineConfig c;
  if (j.contains("mode")) {
    if (!j.at("mode").is_string()) throw ConfigError("config.mode must be a string");
    c.mode = parse_mode(j.at("mode").get<std::string>());
  }
  read_key(j, "seed", c.seed, "config");
  c.model.image_stream = c.mode == Mode::i2v;
  if (j.contains("model")) {
    const json& m = j.at("model");
    const bool explicit_stream = m.is_object() && m.contains("image_stream");
    json filled = m;
    if (!explicit_stream && m.is_object()) filled["image_stream"] = c.mode == Mode::i2v;
    c.model = dit_config_from_json(filled);
  }
  if (j.contains("calibration")) {
    const json& s = j.at("calibration");
    reject_unknown_keys(s, {"n_samples", "n_bins", "max_queries"}, "calibration");
    read_key(s, "n_samples", c.calibration.n_samples, "calibration");
    read_key(s, "n_bins", c.calibration.n_bins, "calibration");
    read_key(s, "max_queries", c.calibration.max_queries, "calibration");
  }
  if (j.contains("pruning")) {
    const json& s = j.at("pruning");
    reject_unknown_keys(s,
                        {"p_sa", "p_ca", "p_ffn", "k_min_heads", "alpha_temp", "tau_s", "tau_t",
                         "tau_ffn", "align_unit"},
                        "pruning");
    read_key(s, "p_sa", c.pruning.p_sa, "pruning");
    read_key(s, "p_ca", c.pruning.p_ca, "pruning");
    read_key(s, "p_ffn", c.pruning.p_ffn, "pruning");
    read_key(s, "k_min_heads", c.pruning.k_min_heads, "pruning");
    read_key(s, "alpha_temp", c.pruning.alpha_temp, "pruning");
    read_key(s, "tau_s", c.pruning.tau_s, "pruning");
    read_key(s, "tau_t", c.pruning.tau_t, "pruning");
    read_key(s, "tau_ffn", c.pruning.tau_ffn, "pruning");
    read_key(s, "align_unit", c.pruning.align_unit, "pruning");
  }
  if (j.contains("routing")) c.routing = router_config_from_json(j.at("routing"));
  if (j.contains("teacher")) {
    const json& s = j.at("teacher");
    reject_unknown_keys(s, {"steps", "lr", "warmup", "batch_size"}, "teacher");
    read_key(s, "steps", c.teacher.steps, "teacher");
    read_key(s, "lr", c.teacher.lr, "teacher");
    read_key(s, "warmup", c.teacher.warmup, "teacher");
    read_key(s, "batch_size", c.teacher.batch_size, "teacher");
  }
  c.training.weights = LossWeights::for_mode(c.mode);
  if (j.contains("training")) {
    const json& s = j.at("training");
    reject_unknown_keys(s,
                        {"weights", "lr_student", "lr_router", "steps", "warmup", "batch_size",
                         "sampled_blocks", "max_grad_norm", "checkpoint_every"},
                        "training");
    if (s.contains("weights")) {
      const json& w = s.at("weights");
      reject_unknown_keys(w, {"feat", "tfm", "dfm", "temp"}, "training.weights");
      read_key(w, "feat", c.training.weights.feat, "training.weights");
      read_key(w, "tfm", c.training.weights.tfm, "training.weights");
      read_key(w, "dfm", c.training.weights.dfm, "training.weights");
      read_key(w, "temp", c.training.weights.temp, "training.weights");
    }
    read_key(s, "lr_student", c.training.lr_student, "training");
    read_key(s, "lr_router", c.training.lr_router, "training");
    read_key(s, "steps", c.training.steps, "training");
    read_key(s, "warmup", c.training.warmup, "training");
    read_key(s, "batch_size", c.training.batch_size, "training");
    read_key(s, "sampled_blocks", c.training.sampled_blocks, "training");
    read_key(s, "max_grad_norm", c.training.max_grad_norm, "training");
    read_key(s, "checkpoint_every", c.training.checkpoint_every, "training");
  }
  if (j.contains("cost")) {
    const json& s = j.at("cost");
    reject_unknown_keys(s, {"s_orig", "s_distill", "guidance"}, "cost");
    read_key(s, "s_orig", c.cost.s_orig, "cost");
    read_key(s, "s_distill", c.cost.s_distill, "cost");
    read_key(s, "guidance", c.cost.guidance, "cost");
  }
  if (j.contains("report")) {
    const json& s = j.at("report");
    reject_unknown_keys(s, {"heldout_clips", "t_grid", "content_samples"}, "report");
    read_key(s, "heldout_clips", c.report.heldout_clips, "report");
    read_key(s, "t_grid", c.report.t_grid, "report");
    read_key(s, "content_samples", c.report.content_samples, "report");
  }
  if (j.contains("paths")) {
    const json& s = j.at("paths");
    reject_unknown_keys(s, {"out_dir"}, "paths");
    std::string dir = c.out_dir.string();
    read_key(s, "out_dir", dir, "paths");
    c.out_dir = dir;
  }
  c.validate();
  return c;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) throw ConfigError("override '" + assignment + "' descends into a value");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

std::vector<FlowSample> heldout_samples(const PipelineConfig& c) {
  return heldout_set(c.model, c.mode, stream_seed(c, kHeldout), c.report.heldout_clips,
                     c.report.t_grid);
}

json cmd_teach(const PipelineConfig& c, const RunOptions& o) {
  c.validate();
  const fs::path ckpt = out(c, artifact::kTeacher), log_path = out(c, artifact::kTeachLog);
  claim_outputs({ckpt, log_path}, o.force);
  fs::create_directories(c.out_dir);
  echo_config(c, "teach");

  const TrainOptions opts = c.teacher_options();
  TrainState state = make_train_state(init_dit(c.model, stream_seed(c, kTeacherInit)));
  std::ostringstream log;
  for (std::size_t s = 0; s < c.teacher.steps; ++s) {
    StepReport r = teacher_step(state, training_batch(c.model, opts, s), opts);
    log << r.to_json().dump() << '\n';
    if (r.step % 50 == 0 || r.step == c.teacher.steps) {
      say(o, "teach step " + std::to_string(r.step) + " loss " + std::to_string(r.total));
    }
  }
  TensorArchive ar;
  add_model(ar, state.student);
  ar.meta()["kind"] = "teacher";
  ar.save(ckpt);
  write_text(log_path, log.str());
  return {{"steps", state.step},
          {"initial_loss", smoothed_initial(state.loss_history)},
          {"final_loss", smoothed_final(state.loss_history)},
          {"checkpoint", ckpt.string()}};
}

json cmd_calibrate(const PipelineConfig& c, const RunOptions& o) {
  c.validate();
  const fs::path reports_path = out(c, artifact::kHeadReports);
  const fs::path hist_path = out(c, artifact::kHistogram);
  const fs::path norms_path = out(c, artifact::kResidualNorms);
  claim_outputs({reports_path, hist_path, norms_path}, o.force);
  const DiTParams teacher = read_model(require_archive(out(c, artifact::kTeacher), "teacher checkpoint"));
  echo_config(c, "calibrate");

  const CalibrationSet calib =
      build_calibration_set(c.model, c.calibration.n_samples, c.calibration.n_bins,
                            stream_seed(c, kCalibration), c.mode);
  say(o, "calibrating on " + std::to_string(calib.samples.size()) + " samples x " +
             std::to_string(calib.t_bins.size()) + " timestep bins");
  const HeadStatistics stats = collect_head_statistics(teacher, calib, c.calibration.max_queries);
  const HeadReports reports = build_head_reports(stats, c.pruning.tau_s, c.pruning.tau_t);
  const auto hist = head_type_histogram(reports);

  std::vector<FlowSample> samples;
  for (const CalibrationSample& s : calib.samples) {
    samples.push_back({s.clip.x0, s.eps, 0, s.cond, s.clip.motion_level});
  }
  const auto norms = block_residual_norms(teacher, samples, c.report.t_grid, true);

  write_text(reports_path, head_reports_csv(reports));
  write_text(hist_path, histogram_csv(hist));
  write_text(norms_path, csv_matrix(norms, c.report.t_grid, "block"));
  json types = json::array();
  for (const TypeCounts& t : hist) {
    types.push_back({{"spatial", t.spatial}, {"mixed", t.mixed}, {"temporal", t.temporal}});
  }
  return {{"rows", reports.rows.size()}, {"head_types", types}};
}

json cmd_prune(const PipelineConfig& c, const RunOptions& o) {
  c.validate();
  const fs::path plan_path = out(c, artifact::kPlan), student_path = out(c, artifact::kStudentRaw);
  claim_outputs({plan_path, student_path}, o.force);
  const DiTParams teacher = read_model(require_archive(out(c, artifact::kTeacher), "teacher checkpoint"));
  if (!fs::exists(out(c, artifact::kHeadReports))) {
    throw ContractError("head reports not found; run calibrate first");
  }
  const HeadReports reports = parse_head_reports_csv(read_text(out(c, artifact::kHeadReports)));
  if (reports.n_blocks != teacher.blocks.size() || reports.sa_heads != c.model.sa_heads ||
      reports.ca_heads != c.model.ca_heads) {
    throw ContractError("head reports do not match the teacher configuration");
  }
  echo_config(c, "prune");

  const HeadReports adjusted = apply_temporal_protection(reports, c.pruning.alpha_temp);
  PruningPlan plan;
  plan.heads = select_heads(adjusted, c.pruning.p_sa, c.pruning.p_ca, c.pruning.k_min_heads);
  plan.ffn = select_ffn(teacher, c.pruning.p_ffn, c.pruning.tau_ffn, c.pruning.align_unit);
  const PlanReport check = validate_plan(teacher.config, plan);
  if (!check.ok()) {
    std::string msg = "pruning plan failed validation:";
    for (const auto& v : check.violations) msg += "\n  " + v;
    throw PlanError(msg);
  }
  const DiTParams student = extract_student(teacher, plan);

  const double total_before = static_cast<double>(teacher.parameter_count());
  const double total_after = static_cast<double>(student.parameter_count());
  const double prunable_before = static_cast<double>(prunable_parameter_count(teacher));
  const double prunable_after = static_cast<double>(prunable_parameter_count(student));
  const double reduction = 100.0 * (1.0 - total_after / total_before);
  const double prunable_reduction = 100.0 * (1.0 - prunable_after / prunable_before);
  char line[160];
  std::snprintf(line, sizeof line,
                "parameter reduction: %.2f%% of all parameters, %.2f%% of SA/CA/FFN parameters",
                reduction, prunable_reduction);
  say(o, line);

  json doc = to_json(plan);
  doc["parameters"] = {{"teacher", teacher.parameter_count()},
                       {"student", student.parameter_count()},
                       {"reduction_percent", reduction},
                       {"prunable_reduction_percent", prunable_reduction}};
  write_text(plan_path, doc.dump(2) + "\n");
  TensorArchive ar;
  add_model(ar, student);
  ar.meta()["kind"] = "student_raw";
  ar.meta()["plan"] = to_json(plan);
  ar.save(student_path);
  return doc["parameters"];
}

json cmd_train(const PipelineConfig& c, int stage, const RunOptions& o) {
  c.validate();
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  const bool raw = stage == 2 && o.allow_raw;
  const fs::path ckpt = out(c, stage == 1 ? artifact::kStage1
                                          : (raw ? artifact::kStage2Raw : artifact::kStage2));
  const fs::path log_path =
      out(c, stage == 1 ? artifact::kStage1Log : (raw ? artifact::kStage2RawLog : artifact::kStage2Log));
  const bool resuming = o.resume && fs::exists(ckpt);
  if (!resuming) claim_outputs({ckpt, log_path}, o.force);
  const DiTParams teacher = read_model(require_archive(out(c, artifact::kTeacher), "teacher checkpoint"));

  TrainState state;
  if (resuming) {
    const TensorArchive ar = TensorArchive::load(ckpt);
    state = read_state(ar);
    say(o, "resuming from step " + std::to_string(state.step));
  } else if (stage == 1) {
    state = make_train_state(
        read_model(require_archive(out(c, artifact::kStudentRaw), "pruned student (run prune)")));
  } else {
    DiTParams student;
    bool from_stage1 = false;
    if (raw) {
      student = read_model(require_archive(out(c, artifact::kStudentRaw), "pruned student"));
      say(o, "warning: Stage II starts from the raw pruned student (--allow-raw)");
    } else {
      if (!fs::exists(out(c, artifact::kStage1))) {
        throw ContractError(
            "stage 2 needs a Stage I checkpoint; run train --stage 1 or pass --allow-raw");
      }
      const TensorArchive s1 = TensorArchive::load(out(c, artifact::kStage1));
      if (!s1.meta().value("complete", false)) {
        throw ContractError("Stage I checkpoint is incomplete; resume stage 1 first");
      }
      student = read_model(s1);
      from_stage1 = true;
    }
    state = make_train_state(std::move(student),
                             init_router(c.model, c.routing, c.mode, stream_seed(c, kRouterInit)),
                             from_stage1);
  }
  if ((stage == 2) != state.router.has_value()) {
    throw ContractError("checkpoint does not belong to stage " + std::to_string(stage));
  }

  const TrainOptions opts = c.train_options(static_cast<std::size_t>(stage));
  echo_config(c, raw ? "train_stage2_raw" : "train_stage" + std::to_string(stage));
  if (!resuming) {
    write_text(log_path, "");
  } else {
    // Drop log lines written after the checkpoint.
    std::ifstream in(log_path);
    std::string kept, line;
    for (std::size_t n = 0; n < state.step && std::getline(in, line); ++n) kept += line + '\n';
    in.close();
    write_text(log_path, kept);
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot open " + log_path.string());

  auto save = [&](bool complete) {
    TensorArchive ar = state_archive(state);
    ar.meta()["kind"] = raw ? "stage2_raw" : "stage" + std::to_string(stage);
    ar.meta()["complete"] = complete;
    ar.save(ckpt);
  };
  while (state.step < c.training.steps) {
    const auto batch = training_batch(c.model, opts, state.step);
    StepReport r = stage == 1 ? stage1_step(state, teacher, batch, opts)
                              : stage2_step(state, teacher, batch, opts);
    log << r.to_json().dump() << '\n';
    if (r.step % 50 == 0 || r.step == c.training.steps) {
      say(o, "stage " + std::to_string(stage) + " step " + std::to_string(r.step) + " loss " +
                 std::to_string(r.total));
    }
    if (o.stop_at && r.step >= o.stop_at && r.step < c.training.steps) {
      log.flush();
      save(false);
      say(o, "stopped at step " + std::to_string(r.step));
      return {{"steps", state.step}, {"complete", false}, {"checkpoint", ckpt.string()}};
    }
    if (r.step % c.training.checkpoint_every == 0 && r.step < c.training.steps) {
      log.flush();
      save(false);
    }
  }
  save(true);
  return {{"steps", state.step},
          {"initial_loss", smoothed_initial(state.loss_history)},
          {"final_loss", smoothed_final(state.loss_history)},
          {"from_stage1", state.from_stage1},
          {"checkpoint", ckpt.string()}};
}

json cmd_report(const PipelineConfig& c, const RunOptions& o) {
  c.validate();
  const fs::path routing_path = out(c, artifact::kRouting), cost_path = out(c, artifact::kCost),
                 summary_path = out(c, artifact::kSummary);
  claim_outputs({routing_path, cost_path, summary_path}, o.force);
  const DiTParams teacher = read_model(require_archive(out(c, artifact::kTeacher), "teacher checkpoint"));
  const DiTParams raw = read_model(require_archive(out(c, artifact::kStudentRaw), "pruned student"));
  const TensorArchive s2 = require_archive(out(c, artifact::kStage2), "Stage II checkpoint");
  const DiTParams student = read_model(s2);
  const RouterParams router = *read_router(s2);
  echo_config(c, "report");

  const auto heldout = heldout_samples(c);
  json mse = {{"raw_pruned", output_mse(teacher, raw, heldout)},
              {"stage2", output_mse(teacher, student, heldout, &router)}};
  if (fs::exists(out(c, artifact::kStage1))) {
    mse["stage1"] = output_mse(teacher, read_model(TensorArchive::load(out(c, artifact::kStage1))), heldout);
  }
  if (fs::exists(out(c, artifact::kStage2Raw))) {
    const TensorArchive ar = TensorArchive::load(out(c, artifact::kStage2Raw));
    const RouterParams rr = *read_router(ar);
    mse["stage2_raw"] = output_mse(teacher, read_model(ar), heldout, &rr);
  }

  const auto content = sample_batch(c.model, c.mode, stream_seed(c, kContent), c.report.content_samples);
  const auto freq = activation_frequency(router, c.report.t_grid, content, c.model.t_max);
  const CostLedger ledger = build_cost_ledger(student, router, c.report.t_grid, content,
                                              c.cost.s_orig, c.cost.s_distill, c.cost.guidance);
  json cost = ledger.to_json();
  cost["reference_projection"] = {{"per_step", speedup(40, 0.7, 27, 50, 50, 1)},
                                  {"total", speedup(40, 0.7, 27, 50, 4, 2)}};

  json summary = {{"heldout_mse", mse},
                  {"projected_speedup", ledger.projected_speedup},
                  {"exact_speedup", ledger.exact_speedup},
                  {"k_bar", ledger.k_bar},
                  {"rho_bar", ledger.rho_bar},
                  {"cost_max_relative_delta", ledger.max_relative_delta}};
  write_text(routing_path, activation_frequency_csv(freq, c.report.t_grid));
  write_text(cost_path, cost.dump(2) + "\n");
  write_text(summary_path, summary.dump(2) + "\n");
  say(o, "held-out MSE vs teacher: " + mse.dump());
  return summary;
}

}  // namespace pare
