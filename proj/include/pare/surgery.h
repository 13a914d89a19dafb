#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "pare/analysis.h"
#include "pare/ffnprune.h"
#include "pare/model.h"

namespace pare {

struct PruningPlan {
  HeadSelection heads;
  FFNSelection ffn;
};

nlohmann::json to_json(const PruningPlan& plan);
PruningPlan pruning_plan_from_json(const nlohmann::json& j);

// Retains every head and neuron of `config`.
PruningPlan identity_plan(const DiTConfig& config);

struct PlanReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Collects every violation rather than stopping at the first.
PlanReport validate_plan(const DiTConfig& teacher_config, const PruningPlan& plan);

// Throws PlanError listing all violations when the plan is invalid.
DiTParams extract_student(const DiTParams& teacher, const PruningPlan& plan);

// Closed-form parameter count of the student described by `plan`.
std::size_t plan_parameter_count(const DiTConfig& config, const PruningPlan& plan);

// Parameters in SA, CA and FFN projections only.
std::size_t prunable_parameter_count(const DiTParams& params);

}  // namespace pare
