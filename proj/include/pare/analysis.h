#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pare/datagen.h"
#include "pare/model.h"

namespace pare {

enum class HeadKind { sa, ca };
enum class HeadType { spatial, mixed, temporal };

std::string head_type_name(HeadType type);

struct HeadReport {
  std::size_t block = 0;
  std::size_t head = 0;
  HeadKind kind = HeadKind::sa;
  double raw_score = 0.0;
  std::optional<double> intra_ratio;  // SA only
  std::optional<HeadType> type;       // SA only
  double adjusted_score = 0.0;
};

struct HeadReports {
  std::size_t n_blocks = 0;
  std::size_t sa_heads = 0;
  std::size_t ca_heads = 0;
  bool protection_applied = false;
  double alpha_temp = 1.0;
  std::vector<HeadReport> rows;  // SA rows then CA rows, block-major
};

using BlockHeadMatrix = std::vector<std::vector<double>>;  // [block][head]

// w(t) = ln(1 + t/T).
double timestep_weight(double t, double t_max);

// Up to `max_queries` query positions spread uniformly across slices (an
// equal, evenly strided share of each slice).
std::vector<std::size_t> query_sample(const DiTConfig& config, std::size_t max_queries = 64);

// Mean over q of (attention mass on q's own slice) / (total row mass).
double intra_slice_ratio(const ForwardTaps& taps, std::size_t block, std::size_t head,
                         const std::vector<std::size_t>& queries, std::size_t spatial_tokens);

// Spatial iff r > tau_s, temporal iff r < tau_t, mixed otherwise.
HeadType classify_head(double r, double tau_s = 0.7, double tau_t = 0.3);

// ‖ṽ_j‖_F · ‖W_O,j‖_F for one forward; CA sums text and image streams.
double sa_head_contribution(const ForwardTaps& taps, const DiTParams& params, std::size_t block,
                            std::size_t head);
double ca_head_contribution(const ForwardTaps& taps, const DiTParams& params, std::size_t block,
                            std::size_t head);

struct HeadStatistics {
  BlockHeadMatrix sa_scores;
  BlockHeadMatrix ca_scores;
  BlockHeadMatrix intra_ratio;  // mean over calibration forwards
};

// One instrumented forward per (sample, t_bin). Scores are
// (1/|D|) Σ_samples Σ_bins w(t)·contribution, summed in a fixed order.
HeadStatistics collect_head_statistics(const DiTParams& teacher, const CalibrationSet& calib,
                                       std::size_t max_queries = 64);

BlockHeadMatrix score_sa_heads(const DiTParams& teacher, const CalibrationSet& calib);
BlockHeadMatrix score_ca_heads(const DiTParams& teacher, const CalibrationSet& calib);

HeadReports build_head_reports(const HeadStatistics& stats, double tau_s, double tau_t);

// Multiplies temporal SA scores by alpha. Refuses reports already adjusted.
HeadReports apply_temporal_protection(const HeadReports& reports, double alpha_temp);

struct HeadSelection {
  std::size_t k_sa = 0;
  std::size_t k_ca = 0;
  std::vector<std::vector<std::size_t>> sa;  // per block, ascending
  std::vector<std::vector<std::size_t>> ca;
};

nlohmann::json to_json(const HeadSelection& s);
HeadSelection head_selection_from_json(const nlohmann::json& j);

// K = max(K_min, ceil(H(1-p))).
std::size_t retained_head_count(std::size_t heads, double p, std::size_t k_min);

// Top-K by adjusted score per block, ties to the lower head index; retained
// indices are returned in ascending order. CA heads use their raw scores.
HeadSelection select_heads(const HeadReports& reports, double p_sa, double p_ca,
                           std::size_t k_min);

struct TypeCounts {
  std::size_t spatial = 0;
  std::size_t mixed = 0;
  std::size_t temporal = 0;
};

std::vector<TypeCounts> head_type_histogram(const HeadReports& reports);

std::string head_reports_csv(const HeadReports& reports);
HeadReports parse_head_reports_csv(const std::string& text);
std::string histogram_csv(const std::vector<TypeCounts>& counts);

}  // namespace pare
