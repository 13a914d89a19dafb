#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pare/datagen.h"
#include "pare/distill.h"
#include "pare/model.h"
#include "pare/router.h"

namespace pare {

struct CalibrationConfig {
  std::size_t n_samples = 16;
  std::size_t n_bins = 5;
  std::size_t max_queries = 64;
};

struct PruningConfig {
  double p_sa = 0.3;
  double p_ca = 0.3;
  double p_ffn = 0.3;
  std::size_t k_min_heads = 2;
  double alpha_temp = 1.5;
  double tau_s = 0.7;
  double tau_t = 0.3;
  double tau_ffn = 0.95;
  std::size_t align_unit = 8;
};

struct TeacherConfig {
  std::size_t steps = 300;
  double lr = 1e-3;
  std::size_t warmup = 30;
  std::size_t batch_size = 4;
};

struct TrainingConfig {
  LossWeights weights;
  double lr_student = 3e-4;
  double lr_router = 5e-4;
  std::size_t steps = 300;
  std::size_t warmup = 30;
  std::size_t batch_size = 4;
  std::size_t sampled_blocks = 2;
  double max_grad_norm = 0.0;
  std::size_t checkpoint_every = 100;
};

struct CostConfig {
  double s_orig = 50.0;
  double s_distill = 50.0;
  int guidance = 1;
};

struct ReportConfig {
  std::size_t heldout_clips = 8;
  std::vector<int> t_grid = {50, 150, 250, 350, 450, 550, 650, 750, 850, 950};
  std::size_t content_samples = 16;
};

struct PipelineConfig {
  Mode mode = Mode::i2v;
  std::uint64_t seed = 0;
  DiTConfig model;
  CalibrationConfig calibration;
  PruningConfig pruning;
  RouterConfig routing;
  TeacherConfig teacher;
  TrainingConfig training;
  CostConfig cost;
  ReportConfig report;
  std::filesystem::path out_dir = "runs/default";

  // Checks every field against the owning module's contracts.
  void validate() const;
  TrainOptions train_options(std::size_t stage) const;
  TrainOptions teacher_options() const;
};

nlohmann::json to_json(const PipelineConfig& c);
// Missing keys take defaults (loss weights follow the mode); unknown keys
// are a ConfigError.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

// Applies "a.b.c=value" to a config document. The value is parsed as JSON
// when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

struct RunOptions {
  bool force = false;
  bool resume = false;
  bool allow_raw = false;
  // Training stops after this step with an incomplete checkpoint (0 = off).
  std::size_t stop_at = 0;
  std::ostream* log = nullptr;  // progress messages
};

// Artifact names inside out_dir.
namespace artifact {
inline constexpr const char* kTeacher = "teacher.ckpt";
inline constexpr const char* kTeachLog = "teach.log.jsonl";
inline constexpr const char* kHeadReports = "head_reports.csv";
inline constexpr const char* kHistogram = "head_types.csv";
inline constexpr const char* kResidualNorms = "residual_norms.csv";
inline constexpr const char* kPlan = "plan.json";
inline constexpr const char* kStudentRaw = "student_raw.ckpt";
inline constexpr const char* kStage1 = "stage1.ckpt";
inline constexpr const char* kStage1Log = "stage1.log.jsonl";
inline constexpr const char* kStage2 = "stage2.ckpt";
inline constexpr const char* kStage2Log = "stage2.log.jsonl";
inline constexpr const char* kStage2Raw = "stage2_raw.ckpt";
inline constexpr const char* kStage2RawLog = "stage2_raw.log.jsonl";
inline constexpr const char* kRouting = "routing_frequency.csv";
inline constexpr const char* kCost = "cost.json";
inline constexpr const char* kSummary = "summary.json";
}  // namespace artifact

nlohmann::json cmd_teach(const PipelineConfig& config, const RunOptions& options);
nlohmann::json cmd_calibrate(const PipelineConfig& config, const RunOptions& options);
nlohmann::json cmd_prune(const PipelineConfig& config, const RunOptions& options);
// Stage 2 reads stage1.ckpt, or student_raw.ckpt with allow_raw (written to
// stage2_raw.* so both runs can be compared).
nlohmann::json cmd_train(const PipelineConfig& config, int stage, const RunOptions& options);
nlohmann::json cmd_report(const PipelineConfig& config, const RunOptions& options);

std::vector<FlowSample> heldout_samples(const PipelineConfig& config);

}  // namespace pare
