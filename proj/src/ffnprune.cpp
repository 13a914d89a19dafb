#include "pare/ffnprune.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pare/error.h"

namespace pare {

double ffn_importance(const Tensor& w_up, const Tensor& w_down, std::size_t k) {
  const std::size_t n = w_up.dim(0), d = w_up.dim(1);
  if (w_down.dim(0) != d || w_down.dim(1) != n) {
    throw DimensionError("ffn_importance: W_up " + shape_str(w_up.shape()) + " vs W_down " +
                         shape_str(w_down.shape()));
  }
  if (k >= n) throw ContractError("ffn_importance: neuron " + std::to_string(k) + " out of range");
  double up = 0.0, down = 0.0;
  for (std::size_t c = 0; c < d; ++c) up += w_up.at(k, c) * w_up.at(k, c);
  for (std::size_t r = 0; r < d; ++r) down += w_down.at(r, k) * w_down.at(r, k);
  return std::sqrt(up) * std::sqrt(down);
}

std::vector<NeuronRecord> neuron_records(const BlockParams& block, std::size_t block_index) {
  const std::size_t n = block.ffn_width(), d = block.ffn_up.dim(1);
  std::vector<NeuronRecord> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    NeuronRecord& r = out[k];
    r.block = block_index;
    r.neuron = k;
    r.importance = ffn_importance(block.ffn_up, block.ffn_down, k);
    r.signature.resize(2 * d);
    for (std::size_t c = 0; c < d; ++c) r.signature[c] = block.ffn_up.at(k, c);
    for (std::size_t c = 0; c < d; ++c) r.signature[d + c] = block.ffn_down.at(c, k);
  }
  return out;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("cosine_similarity: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  // sqrt(aa * aa) == aa, so identical vectors give exactly 1.
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

BlockFFNSelection greedy_diverse_select(const std::vector<NeuronRecord>& records,
                                        std::size_t budget, double tau_ffn) {
  if (budget > records.size()) {
    throw ContractError("greedy_diverse_select: budget " + std::to_string(budget) + " exceeds " +
                        std::to_string(records.size()) + " neurons");
  }
  if (!(tau_ffn > 0.0 && tau_ffn <= 1.0)) throw ConfigError("tau_ffn must be in (0, 1]");

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return records[a].importance > records[b].importance;
  });

  BlockFFNSelection sel;
  sel.target_budget = budget;
  std::vector<std::size_t> chosen;  // positions into `records`
  auto too_similar = [&](std::size_t k, double tau) {
    for (std::size_t s : chosen) {
      // Exact duplicates stay excluded even at tau = 1.
      const double sim = cosine_similarity(records[k].signature, records[s].signature);
      if (sim > tau || sim >= 1.0) return true;
    }
    return false;
  };
  auto pass = [&](const std::vector<std::size_t>& candidates, double tau) {
    std::vector<std::size_t> skipped;
    for (std::size_t k : candidates) {
      if (chosen.size() == budget) {
        skipped.push_back(k);
        continue;
      }
      if (too_similar(k, tau)) {
        skipped.push_back(k);
      } else {
        chosen.push_back(k);
      }
    }
    return skipped;
  };

  double tau = tau_ffn;
  sel.relaxation_trace.push_back(tau);
  std::vector<std::size_t> skipped = pass(order, tau);
  for (std::size_t step = 1; chosen.size() < budget; ++step) {
    const double next = std::min(1.0, tau_ffn + static_cast<double>(step) * kTauStep);
    if (next <= tau) {
      sel.terminal_pass = true;
      for (std::size_t k : skipped) {
        if (chosen.size() == budget) break;
        chosen.push_back(k);
      }
      break;
    }
    tau = next;
    sel.relaxation_trace.push_back(tau);
    skipped = pass(skipped, tau);
  }

  for (std::size_t k : chosen) sel.retained.push_back(records[k].neuron);
  std::sort(sel.retained.begin(), sel.retained.end());
  sel.achieved_budget = sel.retained.size();
  return sel;
}

std::size_t align_budget(std::size_t raw_budget, std::size_t unit, std::size_t ffn_dim) {
  if (unit < 1) throw ConfigError("alignment unit must be >= 1");
  const std::size_t units = std::max<std::size_t>(1, (raw_budget + unit - 1) / unit);
  const std::size_t aligned = units * unit;
  if (aligned > ffn_dim) {
    throw ContractError("aligned FFN budget " + std::to_string(aligned) + " exceeds width " +
                        std::to_string(ffn_dim));
  }
  return aligned;
}

std::size_t ffn_target_budget(std::size_t ffn_dim, double p, std::size_t unit) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("FFN pruning ratio must be in [0, 1)");
  const double raw = static_cast<double>(ffn_dim) * (1.0 - p);
  return align_budget(static_cast<std::size_t>(std::ceil(raw - 1e-9)), unit, ffn_dim);
}

FFNSelection select_ffn(const DiTParams& teacher, double p_ffn, double tau_ffn, std::size_t unit) {
  FFNSelection out;
  out.align_unit = unit;
  for (std::size_t i = 0; i < teacher.blocks.size(); ++i) {
    const BlockParams& b = teacher.blocks[i];
    const std::size_t budget = ffn_target_budget(b.ffn_width(), p_ffn, unit);
    out.blocks.push_back(greedy_diverse_select(neuron_records(b, i), budget, tau_ffn));
  }
  return out;
}

nlohmann::json to_json(const BlockFFNSelection& s) {
  return {{"retained", s.retained},
          {"target_budget", s.target_budget},
          {"achieved_budget", s.achieved_budget},
          {"relaxation_trace", s.relaxation_trace},
          {"terminal_pass", s.terminal_pass}};
}

nlohmann::json to_json(const FFNSelection& s) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : s.blocks) blocks.push_back(to_json(b));
  return {{"align_unit", s.align_unit}, {"blocks", blocks}};
}

FFNSelection ffn_selection_from_json(const nlohmann::json& j) {
  FFNSelection s;
  s.align_unit = j.at("align_unit").get<std::size_t>();
  for (const auto& b : j.at("blocks")) {
    BlockFFNSelection x;
    x.retained = b.at("retained").get<std::vector<std::size_t>>();
    x.target_budget = b.at("target_budget").get<std::size_t>();
    x.achieved_budget = b.at("achieved_budget").get<std::size_t>();
    x.relaxation_trace = b.at("relaxation_trace").get<std::vector<double>>();
    x.terminal_pass = b.value("terminal_pass", false);
    s.blocks.push_back(std::move(x));
  }
  return s;
}

}  // namespace pare
