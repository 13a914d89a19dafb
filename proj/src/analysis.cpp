#include "pare/analysis.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "pare/error.h"

namespace pare {
namespace {

double frobenius(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

double column_block_norm(const Tensor& w, std::size_t start, std::size_t count) {
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  auto d = w.data();
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = start; c < start + count; ++c) acc += d[r * cols + c] * d[r * cols + c];
  return std::sqrt(acc);
}

const BlockTaps& block_taps(const ForwardTaps& taps, std::size_t block) {
  if (block >= taps.blocks.size()) {
    throw ContractError("head scoring: no taps for block " + std::to_string(block));
  }
  return taps.blocks[block];
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::size_t> top_k(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::string head_type_name(HeadType type) {
  switch (type) {
    case HeadType::spatial:
      return "spatial";
    case HeadType::mixed:
      return "mixed";
    case HeadType::temporal:
      return "temporal";
  }
  return "mixed";
}

double timestep_weight(double t, double t_max) {
  if (t < 0 || t > t_max) throw ContractError("timestep_weight: t outside [0, T]");
  return std::log(1.0 + t / t_max);
}

std::vector<std::size_t> query_sample(const DiTConfig& c, std::size_t max_queries) {
  const std::size_t slices = c.temporal_slices, per_slice = c.spatial_tokens();
  const std::size_t take = std::max<std::size_t>(1, std::min(per_slice, max_queries / slices));
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < slices; ++f) {
    for (std::size_t k = 0; k < take; ++k) out.push_back(f * per_slice + (k * per_slice) / take);
  }
  return out;
}

double intra_slice_ratio(const ForwardTaps& taps, std::size_t block, std::size_t head,
                         const std::vector<std::size_t>& queries, std::size_t spatial_tokens) {
  if (queries.empty()) throw ContractError("intra_slice_ratio: empty query set");
  const BlockTaps& bt = block_taps(taps, block);
  if (head >= bt.sa.size() || bt.sa[head].attention.rank() != 2) {
    throw ContractError("intra_slice_ratio: no attention tap for head " + std::to_string(head));
  }
  const Tensor& a = bt.sa[head].attention;
  const std::size_t n = a.dim(1);
  auto d = a.data();
  double acc = 0.0;
  for (std::size_t q : queries) {
    if (q >= a.dim(0)) throw ContractError("intra_slice_ratio: query index out of range");
    const std::size_t slice = q / spatial_tokens;
    double inside = 0.0, total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double v = d[q * n + k];
      total += v;
      if (k / spatial_tokens == slice) inside += v;
    }
    acc += total > 0.0 ? inside / total : 0.0;
  }
  return acc / static_cast<double>(queries.size());
}

HeadType classify_head(double r, double tau_s, double tau_t) {
  if (!(0.0 <= tau_t && tau_t < tau_s && tau_s <= 1.0)) {
    throw ConfigError("classify_head: thresholds must satisfy 0 <= tau_t < tau_s <= 1");
  }
  if (r > tau_s) return HeadType::spatial;
  if (r < tau_t) return HeadType::temporal;
  return HeadType::mixed;
}

double sa_head_contribution(const ForwardTaps& taps, const DiTParams& params, std::size_t block,
                            std::size_t head) {
  const BlockTaps& bt = block_taps(taps, block);
  if (head >= bt.sa.size()) throw ContractError("sa head tap missing");
  const std::size_t hd = params.config.head_dim;
  return frobenius(bt.sa[head].weighted_value.data()) *
         column_block_norm(params.blocks[block].self_attn.wo, head * hd, hd);
}

double ca_head_contribution(const ForwardTaps& taps, const DiTParams& params, std::size_t block,
                            std::size_t head) {
  const BlockTaps& bt = block_taps(taps, block);
  if (head >= bt.ca_text_values.size()) throw ContractError("ca head tap missing");
  const std::size_t hd = params.config.head_dim;
  const BlockParams& b = params.blocks[block];
  double s = frobenius(bt.ca_text_values[head].data()) *
             column_block_norm(b.cross_text.wo, head * hd, hd);
  if (!bt.ca_image_values.empty() && b.cross_image) {
    s += frobenius(bt.ca_image_values[head].data()) *
         column_block_norm(b.cross_image->wo, head * hd, hd);
  }
  return s;
}

HeadStatistics collect_head_statistics(const DiTParams& teacher, const CalibrationSet& calib,
                                       std::size_t max_queries) {
  if (calib.samples.empty()) throw ContractError("calibration set is empty");
  const DiTConfig& c = teacher.config;
  const std::size_t n = teacher.blocks.size();
  HeadStatistics st;
  st.sa_scores.assign(n, {});
  st.ca_scores.assign(n, {});
  st.intra_ratio.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    st.sa_scores[i].assign(teacher.blocks[i].self_attn.heads(c.head_dim), 0.0);
    st.ca_scores[i].assign(teacher.blocks[i].cross_text.heads(c.head_dim), 0.0);
    st.intra_ratio[i].assign(st.sa_scores[i].size(), 0.0);
  }
  const auto queries = query_sample(c, max_queries);
  const double inv_d = 1.0 / static_cast<double>(calib.samples.size());
  const double inv_forwards = inv_d / static_cast<double>(calib.t_bins.size());
  for (const CalibrationSample& s : calib.samples) {
    for (int t : calib.t_bins) {
      const double w = timestep_weight(t, c.t_max);
      Tensor x_t = forward_process(s.clip.x0, s.eps, t, c.t_max);
      ForwardResult r = dit_forward(teacher, x_t, t, s.cond, {.taps = true});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < st.sa_scores[i].size(); ++j) {
          st.sa_scores[i][j] += w * sa_head_contribution(*r.taps, teacher, i, j) * inv_d;
          st.intra_ratio[i][j] +=
              intra_slice_ratio(*r.taps, i, j, queries, c.spatial_tokens()) * inv_forwards;
        }
        for (std::size_t j = 0; j < st.ca_scores[i].size(); ++j) {
          st.ca_scores[i][j] += w * ca_head_contribution(*r.taps, teacher, i, j) * inv_d;
        }
      }
    }
  }
  return st;
}

BlockHeadMatrix score_sa_heads(const DiTParams& teacher, const CalibrationSet& calib) {
  return collect_head_statistics(teacher, calib).sa_scores;
}

BlockHeadMatrix score_ca_heads(const DiTParams& teacher, const CalibrationSet& calib) {
  return collect_head_statistics(teacher, calib).ca_scores;
}

HeadReports build_head_reports(const HeadStatistics& stats, double tau_s, double tau_t) {
  HeadReports out;
  out.n_blocks = stats.sa_scores.size();
  out.sa_heads = out.n_blocks ? stats.sa_scores[0].size() : 0;
  out.ca_heads = out.n_blocks ? stats.ca_scores[0].size() : 0;
  for (std::size_t i = 0; i < out.n_blocks; ++i) {
    for (std::size_t j = 0; j < stats.sa_scores[i].size(); ++j) {
      HeadReport r;
      r.block = i;
      r.head = j;
      r.kind = HeadKind::sa;
      r.raw_score = stats.sa_scores[i][j];
      r.intra_ratio = stats.intra_ratio[i][j];
      r.type = classify_head(*r.intra_ratio, tau_s, tau_t);
      r.adjusted_score = r.raw_score;
      out.rows.push_back(r);
    }
  }
  for (std::size_t i = 0; i < out.n_blocks; ++i) {
    for (std::size_t j = 0; j < stats.ca_scores[i].size(); ++j) {
      HeadReport r;
      r.block = i;
      r.head = j;
      r.kind = HeadKind::ca;
      r.raw_score = stats.ca_scores[i][j];
      r.adjusted_score = r.raw_score;
      out.rows.push_back(r);
    }
  }
  return out;
}

HeadReports apply_temporal_protection(const HeadReports& reports, double alpha_temp) {
  if (reports.protection_applied) {
    throw ContractError("temporal protection already applied to these reports");
  }
  if (!(alpha_temp >= 1.0)) throw ConfigError("alpha_temp must be >= 1");
  HeadReports out = reports;
  for (HeadReport& r : out.rows) {
    const bool temporal = r.kind == HeadKind::sa && r.type == HeadType::temporal;
    r.adjusted_score = temporal ? alpha_temp * r.raw_score : r.raw_score;
  }
  out.protection_applied = true;
  out.alpha_temp = alpha_temp;
  return out;
}

std::size_t retained_head_count(std::size_t heads, double p, std::size_t k_min) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("pruning ratio must be in [0, 1)");
  if (k_min < 1) throw ConfigError("K_min must be >= 1");
  // Guard against representation error, e.g. 40 * (1 - 0.3) = 28.000000000000004.
  const double raw = static_cast<double>(heads) * (1.0 - p);
  const auto ceil_k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  const std::size_t k = std::max(k_min, ceil_k);
  if (k > heads) {
    throw ContractError("retained head count " + std::to_string(k) + " exceeds " +
                        std::to_string(heads) + " heads");
  }
  return k;
}

HeadSelection select_heads(const HeadReports& reports, double p_sa, double p_ca,
                           std::size_t k_min) {
  HeadSelection sel;
  sel.k_sa = retained_head_count(reports.sa_heads, p_sa, k_min);
  sel.k_ca = retained_head_count(reports.ca_heads, p_ca, k_min);
  BlockHeadMatrix sa(reports.n_blocks, std::vector<double>(reports.sa_heads, 0.0));
  BlockHeadMatrix ca(reports.n_blocks, std::vector<double>(reports.ca_heads, 0.0));
  for (const HeadReport& r : reports.rows) {
    if (r.block >= reports.n_blocks) throw ContractError("head report block out of range");
    auto& dst = r.kind == HeadKind::sa ? sa : ca;
    if (r.head >= dst[r.block].size()) throw ContractError("head report head out of range");
    dst[r.block][r.head] = r.kind == HeadKind::sa ? r.adjusted_score : r.raw_score;
  }
  for (std::size_t i = 0; i < reports.n_blocks; ++i) {
    sel.sa.push_back(top_k(sa[i], sel.k_sa));
    sel.ca.push_back(top_k(ca[i], sel.k_ca));
  }
  return sel;
}

nlohmann::json to_json(const HeadSelection& s) {
  return {{"k_sa", s.k_sa}, {"k_ca", s.k_ca}, {"sa", s.sa}, {"ca", s.ca}};
}

HeadSelection head_selection_from_json(const nlohmann::json& j) {
  HeadSelection s;
  s.k_sa = j.at("k_sa").get<std::size_t>();
  s.k_ca = j.at("k_ca").get<std::size_t>();
  s.sa = j.at("sa").get<std::vector<std::vector<std::size_t>>>();
  s.ca = j.at("ca").get<std::vector<std::vector<std::size_t>>>();
  return s;
}

std::vector<TypeCounts> head_type_histogram(const HeadReports& reports) {
  std::vector<TypeCounts> out(reports.n_blocks);
  for (const HeadReport& r : reports.rows) {
    if (r.kind != HeadKind::sa || !r.type) continue;
    switch (*r.type) {
      case HeadType::spatial:
        ++out[r.block].spatial;
        break;
      case HeadType::mixed:
        ++out[r.block].mixed;
        break;
      case HeadType::temporal:
        ++out[r.block].temporal;
        break;
    }
  }
  return out;
}

std::string head_reports_csv(const HeadReports& reports) {
  std::ostringstream os;
  os << "block,head,kind,raw_score,intra_ratio,type,adjusted_score\n";
  for (const HeadReport& r : reports.rows) {
    os << r.block << ',' << r.head << ',' << (r.kind == HeadKind::sa ? "sa" : "ca") << ','
       << fmt(r.raw_score) << ',' << (r.intra_ratio ? fmt(*r.intra_ratio) : "") << ','
       << (r.type ? head_type_name(*r.type) : "") << ',' << fmt(r.adjusted_score) << '\n';
  }
  return os.str();
}

HeadReports parse_head_reports_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "block,head,kind,raw_score,intra_ratio,type,adjusted_score") {
    throw IoError("head report CSV: unexpected header");
  }
  HeadReports out;
  std::size_t max_block = 0, max_sa = 0, max_ca = 0;
  bool any_sa = false, any_ca = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 7) throw IoError("head report CSV: malformed row '" + line + "'");
    HeadReport r;
    try {
      r.block = std::stoul(f[0]);
      r.head = std::stoul(f[1]);
      r.raw_score = std::stod(f[3]);
      r.adjusted_score = std::stod(f[6]);
      if (!f[4].empty()) r.intra_ratio = std::stod(f[4]);
    } catch (const std::exception&) {
      throw IoError("head report CSV: bad number in row '" + line + "'");
    }
    if (f[2] == "sa") {
      r.kind = HeadKind::sa;
      any_sa = true;
      max_sa = std::max(max_sa, r.head);
    } else if (f[2] == "ca") {
      r.kind = HeadKind::ca;
      any_ca = true;
      max_ca = std::max(max_ca, r.head);
    } else {
      throw IoError("head report CSV: unknown kind '" + f[2] + "'");
    }
    if (f[5] == "spatial") r.type = HeadType::spatial;
    else if (f[5] == "mixed") r.type = HeadType::mixed;
    else if (f[5] == "temporal") r.type = HeadType::temporal;
    else if (!f[5].empty()) throw IoError("head report CSV: unknown type '" + f[5] + "'");
    if (r.adjusted_score != r.raw_score) out.protection_applied = true;
    max_block = std::max(max_block, r.block);
    out.rows.push_back(r);
  }
  if (out.rows.empty()) throw IoError("head report CSV: no rows");
  out.n_blocks = max_block + 1;
  out.sa_heads = any_sa ? max_sa + 1 : 0;
  out.ca_heads = any_ca ? max_ca + 1 : 0;
  return out;
}

std::string histogram_csv(const std::vector<TypeCounts>& counts) {
  std::ostringstream os;
  os << "block,spatial,mixed,temporal\n";
  for (std::size_t i = 0; i < counts.size(); ++i) {
    os << i << ',' << counts[i].spatial << ',' << counts[i].mixed << ',' << counts[i].temporal
       << '\n';
  }
  return os.str();
}

}  // namespace pare
