#pragma once

#include <vector>

#include "json.hpp"
#include "pare/model.h"

namespace pare {

struct NeuronRecord {
  std::size_t block = 0;
  std::size_t neuron = 0;
  double importance = 0.0;
  std::vector<double> signature;  // [W_up row ; W_down column], length 2d
};

struct BlockFFNSelection {
  std::vector<std::size_t> retained;  // ascending
  std::size_t target_budget = 0;
  std::size_t achieved_budget = 0;
  std::vector<double> relaxation_trace;  // every τ tried, strictly increasing
  bool terminal_pass = false;            // similarity test disabled to finish
};

struct FFNSelection {
  std::size_t align_unit = 8;
  std::vector<BlockFFNSelection> blocks;
};

nlohmann::json to_json(const BlockFFNSelection& s);
nlohmann::json to_json(const FFNSelection& s);
FFNSelection ffn_selection_from_json(const nlohmann::json& j);

inline constexpr double kTauStep = 0.05;

// ‖W_up[k,:]‖₂ · ‖W_down[:,k]‖₂.
double ffn_importance(const Tensor& w_up, const Tensor& w_down, std::size_t k);

std::vector<NeuronRecord> neuron_records(const BlockParams& block, std::size_t block_index);

// Cosine similarity clamped to [-1, 1]; 0 when either vector is zero.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

BlockFFNSelection greedy_diverse_select(const std::vector<NeuronRecord>& records,
                                        std::size_t budget, double tau_ffn);

// unit·⌈raw/unit⌉, at least one unit.
std::size_t align_budget(std::size_t raw_budget, std::size_t unit, std::size_t ffn_dim);

// Aligned target for retaining a fraction (1-p) of ffn_dim neurons.
std::size_t ffn_target_budget(std::size_t ffn_dim, double p, std::size_t unit);

FFNSelection select_ffn(const DiTParams& teacher, double p_ffn, double tau_ffn = 0.95,
                        std::size_t unit = 8);

}  // namespace pare
