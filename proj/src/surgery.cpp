#include "pare/surgery.h"

#include <set>

#include "pare/error.h"

namespace pare {
namespace {

Tensor take_rows(const Tensor& w, const std::vector<std::size_t>& groups, std::size_t group) {
  const std::size_t cols = w.dim(1);
  std::vector<double> out;
  out.reserve(groups.size() * group * cols);
  auto d = w.data();
  for (std::size_t g : groups) {
    const auto* src = d.data() + g * group * cols;
    out.insert(out.end(), src, src + group * cols);
  }
  return Tensor({groups.size() * group, cols}, std::move(out));
}

Tensor take_cols(const Tensor& w, const std::vector<std::size_t>& groups, std::size_t group) {
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  std::vector<double> out;
  out.reserve(rows * groups.size() * group);
  auto d = w.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t g : groups) {
      const auto* src = d.data() + r * cols + g * group;
      out.insert(out.end(), src, src + group);
    }
  }
  return Tensor({rows, groups.size() * group}, std::move(out));
}

AttentionParams slice_heads(const AttentionParams& a, const std::vector<std::size_t>& heads,
                            std::size_t hd) {
  return {take_rows(a.wq, heads, hd), take_rows(a.wk, heads, hd), take_rows(a.wv, heads, hd),
          take_cols(a.wo, heads, hd)};
}

void check_indices(std::vector<std::string>& out, const std::string& where,
                   const std::vector<std::size_t>& idx, std::size_t limit,
                   std::size_t expected_count) {
  if (idx.empty()) {
    out.push_back(where + ": retains nothing");
    return;
  }
  if (idx.size() != expected_count) {
    out.push_back(where + ": retains " + std::to_string(idx.size()) + ", expected " +
                  std::to_string(expected_count));
  }
  std::set<std::size_t> seen;
  for (std::size_t k : idx) {
    if (k >= limit) {
      out.push_back(where + ": index " + std::to_string(k) + " out of range [0, " +
                    std::to_string(limit) + ")");
    }
    if (!seen.insert(k).second) out.push_back(where + ": duplicate index " + std::to_string(k));
  }
  for (std::size_t i = 1; i < idx.size(); ++i) {
    if (idx[i - 1] >= idx[i]) {
      out.push_back(where + ": indices not in ascending order");
      break;
    }
  }
}

}  // namespace

nlohmann::json to_json(const PruningPlan& plan) {
  nlohmann::json widths = nlohmann::json::array();
  for (std::size_t i = 0; i < plan.heads.sa.size(); ++i) {
    nlohmann::json w = {{"sa_heads", plan.heads.sa[i].size()}, {"ca_heads", plan.heads.ca[i].size()}};
    if (i < plan.ffn.blocks.size()) w["ffn"] = plan.ffn.blocks[i].retained.size();
    widths.push_back(w);
  }
  return {{"heads", to_json(plan.heads)}, {"ffn", to_json(plan.ffn)}, {"block_widths", widths}};
}

PruningPlan pruning_plan_from_json(const nlohmann::json& j) {
  try {
    return {head_selection_from_json(j.at("heads")), ffn_selection_from_json(j.at("ffn"))};
  } catch (const nlohmann::json::exception& e) {
    throw PlanError(std::string("malformed plan JSON: ") + e.what());
  }
}

PruningPlan identity_plan(const DiTConfig& c) {
  PruningPlan p;
  p.heads.k_sa = c.sa_heads;
  p.heads.k_ca = c.ca_heads;
  std::vector<std::size_t> sa(c.sa_heads), ca(c.ca_heads), ffn(c.ffn_dim);
  for (std::size_t i = 0; i < sa.size(); ++i) sa[i] = i;
  for (std::size_t i = 0; i < ca.size(); ++i) ca[i] = i;
  for (std::size_t i = 0; i < ffn.size(); ++i) ffn[i] = i;
  p.ffn.align_unit = 1;
  for (std::size_t b = 0; b < c.n_blocks; ++b) {
    p.heads.sa.push_back(sa);
    p.heads.ca.push_back(ca);
    BlockFFNSelection f;
    f.retained = ffn;
    f.target_budget = f.achieved_budget = c.ffn_dim;
    p.ffn.blocks.push_back(f);
  }
  return p;
}

PlanReport validate_plan(const DiTConfig& c, const PruningPlan& plan) {
  PlanReport r;
  auto& v = r.violations;
  const std::size_t n = c.n_blocks;
  if (plan.heads.sa.size() != n) {
    v.push_back("plan has " + std::to_string(plan.heads.sa.size()) + " SA block entries, teacher has " +
                std::to_string(n));
  }
  if (plan.heads.ca.size() != n) {
    v.push_back("plan has " + std::to_string(plan.heads.ca.size()) + " CA block entries, teacher has " +
                std::to_string(n));
  }
  if (plan.ffn.blocks.size() != n) {
    v.push_back("plan has " + std::to_string(plan.ffn.blocks.size()) +
                " FFN block entries, teacher has " + std::to_string(n));
  }
  if (plan.heads.k_sa < 1 || plan.heads.k_sa > c.sa_heads) v.push_back("K_sa out of range");
  if (plan.heads.k_ca < 1 || plan.heads.k_ca > c.ca_heads) v.push_back("K_ca out of range");
  if (plan.ffn.align_unit < 1) v.push_back("FFN alignment unit must be >= 1");
  for (std::size_t i = 0; i < plan.heads.sa.size(); ++i) {
    check_indices(v, "block " + std::to_string(i) + " SA heads", plan.heads.sa[i], c.sa_heads,
                  plan.heads.k_sa);
  }
  for (std::size_t i = 0; i < plan.heads.ca.size(); ++i) {
    check_indices(v, "block " + std::to_string(i) + " CA heads", plan.heads.ca[i], c.ca_heads,
                  plan.heads.k_ca);
  }
  for (std::size_t i = 0; i < plan.ffn.blocks.size(); ++i) {
    const BlockFFNSelection& f = plan.ffn.blocks[i];
    const std::string where = "block " + std::to_string(i) + " FFN";
    check_indices(v, where, f.retained, c.ffn_dim, f.target_budget);
    if (f.achieved_budget != f.target_budget) {
      v.push_back(where + ": achieved budget " + std::to_string(f.achieved_budget) +
                  " != target " + std::to_string(f.target_budget));
    }
    if (plan.ffn.align_unit >= 1 && f.target_budget % plan.ffn.align_unit != 0) {
      v.push_back(where + ": target " + std::to_string(f.target_budget) +
                  " not a multiple of " + std::to_string(plan.ffn.align_unit));
    }
  }
  return r;
}

DiTParams extract_student(const DiTParams& teacher, const PruningPlan& plan) {
  for (const BlockParams& b : teacher.blocks) {
    if (b.self_attn.heads(teacher.config.head_dim) != teacher.config.sa_heads ||
        b.cross_text.heads(teacher.config.head_dim) != teacher.config.ca_heads ||
        b.ffn_width() != teacher.config.ffn_dim) {
      throw PlanError("extract_student: teacher is already pruned");
    }
  }
  const PlanReport report = validate_plan(teacher.config, plan);
  if (!report.ok()) {
    std::string msg = "invalid pruning plan:";
    for (const auto& s : report.violations) msg += "\n  " + s;
    throw PlanError(msg);
  }
  const std::size_t hd = teacher.config.head_dim;
  DiTParams s = teacher;
  for (std::size_t i = 0; i < s.blocks.size(); ++i) {
    BlockParams& b = s.blocks[i];
    const BlockParams& t = teacher.blocks[i];
    b.self_attn = slice_heads(t.self_attn, plan.heads.sa[i], hd);
    b.cross_text = slice_heads(t.cross_text, plan.heads.ca[i], hd);
    if (t.cross_image) b.cross_image = slice_heads(*t.cross_image, plan.heads.ca[i], hd);
    b.ffn_up = take_rows(t.ffn_up, plan.ffn.blocks[i].retained, 1);
    b.ffn_down = take_cols(t.ffn_down, plan.ffn.blocks[i].retained, 1);
  }
  return s;
}

std::size_t plan_parameter_count(const DiTConfig& c, const PruningPlan& plan) {
  const std::size_t d = c.model_dim, hd = c.head_dim, cd = c.cond_dim, ch = c.channels;
  std::size_t n = d * ch + d;                     // g1
  n += d * c.time_embed_dim + d + d * d + d;      // time MLP
  n += 7 * d * d + 7 * d;                         // shared modulation
  n += d + ch * d + ch;                           // g2
  const std::size_t streams = c.image_stream ? 2 : 1;
  for (std::size_t i = 0; i < plan.heads.sa.size(); ++i) {
    const std::size_t ksa = plan.heads.sa[i].size(), kca = plan.heads.ca[i].size();
    const std::size_t nf = plan.ffn.blocks[i].retained.size();
    n += 3 * d + 7 * d;                                  // norms, modulation offsets
    n += 3 * ksa * hd * d + ksa * hd * d;                // SA Q,K,V + O
    n += streams * (kca * hd * d + 2 * kca * hd * cd + d * kca * hd);  // CA Q, K/V, O
    n += d * nf + nf * d;                                // FFN
  }
  return n;
}

std::size_t prunable_parameter_count(const DiTParams& p) {
  std::size_t n = 0;
  for (const BlockParams& b : p.blocks) {
    for (const AttentionParams* a : {&b.self_attn, &b.cross_text}) {
      n += a->wq.numel() + a->wk.numel() + a->wv.numel() + a->wo.numel();
    }
    if (b.cross_image) {
      n += b.cross_image->wq.numel() + b.cross_image->wk.numel() + b.cross_image->wv.numel() +
           b.cross_image->wo.numel();
    }
    n += b.ffn_up.numel() + b.ffn_down.numel();
  }
  return n;
}

}  // namespace pare
