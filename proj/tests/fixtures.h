#pragma once
// Synthetic inputs shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include "pare/analysis.h"
#include "pare/model.h"
#include "pare/rng.h"
#include "pare/surgery.h"

namespace fixtures {

enum class Pattern { uniform, block_diagonal, random };

// One block, `heads` SA heads, attention of the given pattern.
inline pare::ForwardTaps attention_taps(const pare::DiTConfig& c, std::size_t heads, Pattern pattern,
                                        std::uint64_t seed = 0) {
  const std::size_t n = c.tokens(), l = c.spatial_tokens();
  pare::Rng rng(seed);
  pare::BlockTaps block;
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<double> a(n * n);
    for (std::size_t q = 0; q < n; ++q) {
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        double v = 1.0;
        if (pattern == Pattern::block_diagonal) v = q / l == k / l ? 1.0 : 0.0;
        if (pattern == Pattern::random) v = rng.uniform();
        a[q * n + k] = v;
        total += v;
      }
      for (std::size_t k = 0; k < n; ++k) a[q * n + k] /= total;
    }
    block.sa.push_back({pare::Tensor({n, n}, a), pare::Tensor({n, c.head_dim})});
  }
  return {{block}};
}

// SA rows with the given raw scores and types, adjusted == raw. CA rows mirror
// the SA scores.
inline pare::HeadReports sa_reports(const std::vector<std::vector<double>>& scores,
                                    const std::vector<std::vector<pare::HeadType>>& types) {
  pare::HeadReports r;
  r.n_blocks = scores.size();
  r.sa_heads = scores.empty() ? 0 : scores[0].size();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t j = 0; j < scores[i].size(); ++j) {
      pare::HeadReport h;
      h.block = i;
      h.head = j;
      h.raw_score = h.adjusted_score = scores[i][j];
      h.type = types[i][j];
      h.intra_ratio = types[i][j] == pare::HeadType::temporal ? 0.1
                      : types[i][j] == pare::HeadType::spatial ? 0.9
                                                               : 0.5;
      r.rows.push_back(h);
    }
  }
  r.ca_heads = r.sa_heads;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t j = 0; j < scores[i].size(); ++j) {
      pare::HeadReport h;
      h.block = i;
      h.head = j;
      h.kind = pare::HeadKind::ca;
      h.raw_score = h.adjusted_score = scores[i][j];
      r.rows.push_back(h);
    }
  }
  return r;
}

// Random SA reports: scores in (0, 1), each type equally likely.
inline pare::HeadReports random_reports(std::size_t blocks, std::size_t heads, std::uint64_t seed) {
  pare::Rng rng(seed);
  std::vector<std::vector<double>> s(blocks, std::vector<double>(heads));
  std::vector<std::vector<pare::HeadType>> t(blocks, std::vector<pare::HeadType>(heads));
  for (std::size_t i = 0; i < blocks; ++i) {
    for (std::size_t j = 0; j < heads; ++j) {
      s[i][j] = rng.uniform();
      t[i][j] = static_cast<pare::HeadType>(rng.index(3));
    }
  }
  return sa_reports(s, t);
}

// Random valid plan: uniform K per kind, random index sets per block, FFN
// budget a random multiple of `unit`.
inline pare::PruningPlan random_plan(const pare::DiTConfig& c, std::uint64_t seed, std::size_t unit = 4) {
  pare::Rng rng(seed);
  auto subset = [&](std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
  };
  pare::PruningPlan plan;
  plan.heads.k_sa = 1 + rng.index(c.sa_heads);
  plan.heads.k_ca = 1 + rng.index(c.ca_heads);
  plan.ffn.align_unit = unit;
  const std::size_t budget = unit * (1 + rng.index(c.ffn_dim / unit));
  for (std::size_t i = 0; i < c.n_blocks; ++i) {
    plan.heads.sa.push_back(subset(c.sa_heads, plan.heads.k_sa));
    plan.heads.ca.push_back(subset(c.ca_heads, plan.heads.k_ca));
    pare::BlockFFNSelection f;
    f.retained = subset(c.ffn_dim, budget);
    f.target_budget = f.achieved_budget = budget;
    plan.ffn.blocks.push_back(f);
  }
  return plan;
}

inline bool contains(const std::vector<std::size_t>& v, std::size_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

inline pare::Tensor zero_cols(const pare::Tensor& t, const std::vector<std::size_t>& keep, std::size_t group) {
  std::vector<double> v = t.to_vector();
  const std::size_t cols = t.dim(1);
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t k = 0; k < cols; ++k)
      if (!contains(keep, k / group)) v[r * cols + k] = 0.0;
  return pare::Tensor(t.shape(), v);
}

inline pare::Tensor zero_rows(const pare::Tensor& t, const std::vector<std::size_t>& keep) {
  std::vector<double> v = t.to_vector();
  const std::size_t cols = t.dim(1);
  for (std::size_t r = 0; r < t.dim(0); ++r)
    if (!contains(keep, r))
      for (std::size_t k = 0; k < cols; ++k) v[r * cols + k] = 0.0;
  return pare::Tensor(t.shape(), v);
}

// Teacher with every pruned head's W_O columns and every pruned neuron's
// W_up row / W_down column zeroed.
inline pare::DiTParams masked_teacher(const pare::DiTParams& teacher, const pare::PruningPlan& plan) {
  pare::DiTParams m = teacher;
  const std::size_t hd = teacher.config.head_dim;
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    b.self_attn.wo = zero_cols(b.self_attn.wo, plan.heads.sa[i], hd);
    b.cross_text.wo = zero_cols(b.cross_text.wo, plan.heads.ca[i], hd);
    if (b.cross_image) b.cross_image->wo = zero_cols(b.cross_image->wo, plan.heads.ca[i], hd);
    b.ffn_up = zero_rows(b.ffn_up, plan.ffn.blocks[i].retained);
    b.ffn_down = zero_cols(b.ffn_down, plan.ffn.blocks[i].retained, 1);
  }
  return m;
}

inline double max_abs_diff(const pare::Tensor& a, const pare::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace fixtures
