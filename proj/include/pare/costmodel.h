#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "pare/model.h"
#include "pare/router.h"

namespace pare {

// FLOPs (2 per multiply-accumulate) of one block's matrix products. Norms,
// activations and softmax are not counted. `image_tokens` is 0 without an
// image stream.
double block_flops(const DiTConfig& config, std::size_t sa_heads, std::size_t ca_heads,
                   std::size_t ffn_width, std::size_t seq_len, std::size_t image_tokens);

double block_flops(const DiTConfig& config, const BlockParams& block, bool image_present);

// Input/output projections, time MLP and shared modulation; plus the router
// (content projection and MLP) when given.
double embed_flops(const DiTConfig& config, const RouterParams* router = nullptr);

// C(t) = C_embed + Σ_i m_i(t)·ρ^i·C_B for every mask row.
std::vector<double> step_cost(const std::vector<std::vector<double>>& masks,
                              const std::vector<double>& rho, double c_embed, double c_b);

// N/(ρ̄·K̄) · S_orig/S_distill · G.
double speedup(double n_blocks, double rho_bar, double k_bar, double s_orig, double s_distill,
               int guidance);

struct CostLedger {
  double c_embed = 0.0;
  double c_b = 0.0;                  // unpruned per-block cost
  std::vector<double> block_cost;    // student C_B^i
  std::vector<double> rho;
  std::vector<int> t_grid;
  std::vector<double> step_cost;     // mean C(t) over content samples
  std::vector<double> measured_cost; // mean instrumented FLOPs per t
  double rho_bar = 0.0;
  double k_bar = 0.0;
  double s_orig = 50.0;
  double s_distill = 50.0;
  int guidance = 1;
  double projected_speedup = 0.0;  // closed form from ρ̄ and K̄
  double exact_speedup = 0.0;      // teacher cost / mean routed cost, times S and G factors
  double max_relative_delta = 0.0; // measured vs analytic

  nlohmann::json to_json() const;
};

// Routed inference over t_grid × samples with instrumented counters.
CostLedger build_cost_ledger(const DiTParams& student, const RouterParams& router,
                             const std::vector<int>& t_grid,
                             const std::vector<FlowSample>& samples, double s_orig,
                             double s_distill, int guidance);

}  // namespace pare
