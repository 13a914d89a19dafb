#include "pare/costmodel.h"

#include <algorithm>
#include <cmath>

#include "pare/error.h"

namespace pare {

double block_flops(const DiTConfig& c, std::size_t sa_heads, std::size_t ca_heads,
                   std::size_t ffn_width, std::size_t seq, std::size_t image_tokens) {
  if (sa_heads > c.sa_heads || ca_heads > c.ca_heads || ffn_width > c.ffn_dim) {
    throw ContractError("block_flops: retained counts exceed the configuration");
  }
  const double d = static_cast<double>(c.model_dim);
  const double hd = static_cast<double>(c.head_dim);
  const double cd = static_cast<double>(c.cond_dim);
  const double s = static_cast<double>(seq);
  const double ksa = static_cast<double>(sa_heads) * hd;
  const double kca = static_cast<double>(ca_heads) * hd;
  double macs = 4.0 * s * ksa * d + 2.0 * ksa * s * s;
  auto stream = [&](double lc) { return 2.0 * s * kca * d + 2.0 * lc * cd * kca + 2.0 * kca * s * lc; };
  macs += stream(static_cast<double>(c.cond_text_len));
  if (image_tokens > 0) macs += stream(static_cast<double>(image_tokens));
  macs += 2.0 * s * d * static_cast<double>(ffn_width);
  return 2.0 * macs;
}

double block_flops(const DiTConfig& c, const BlockParams& b, bool image_present) {
  return block_flops(c, b.self_attn.heads(c.head_dim), b.cross_text.heads(c.head_dim),
                     b.ffn_width(), c.tokens(), image_present && b.cross_image ? 1 : 0);
}

double embed_flops(const DiTConfig& c, const RouterParams* router) {
  const double d = static_cast<double>(c.model_dim);
  const double s = static_cast<double>(c.tokens());
  const double ch = static_cast<double>(c.channels);
  double macs = 2.0 * s * ch * d;                                       // g1, g2
  macs += static_cast<double>(c.time_embed_dim) * d + d * d + 7.0 * d * d;  // time MLP, modulation
  if (router) {
    const RouterConfig& r = router->config;
    const double h = static_cast<double>(r.hidden);
    macs += static_cast<double>(router->content_w.numel());
    macs += static_cast<double>(r.sin_dim + r.content_dim) * h + h * h +
            h * static_cast<double>(router->n_blocks());
  }
  return 2.0 * macs;
}

std::vector<double> step_cost(const std::vector<std::vector<double>>& masks,
                              const std::vector<double>& rho, double c_embed, double c_b) {
  std::vector<double> out;
  out.reserve(masks.size());
  for (const auto& m : masks) {
    if (m.size() != rho.size()) throw DimensionError("step_cost: mask length differs from ρ");
    double c = c_embed;
    for (std::size_t i = 0; i < m.size(); ++i) c += m[i] * rho[i] * c_b;
    out.push_back(c);
  }
  return out;
}

double speedup(double n, double rho_bar, double k_bar, double s_orig, double s_distill,
               int guidance) {
  if (!(n > 0 && rho_bar > 0 && k_bar > 0 && s_orig > 0 && s_distill > 0)) {
    throw ConfigError("speedup: all factors must be positive");
  }
  if (guidance != 1 && guidance != 2) throw ConfigError("speedup: G must be 1 or 2");
  return n / (rho_bar * k_bar) * (s_orig / s_distill) * guidance;
}

nlohmann::json CostLedger::to_json() const {
  return {{"c_embed", c_embed},
          {"c_b", c_b},
          {"block_cost", block_cost},
          {"rho", rho},
          {"t_grid", t_grid},
          {"step_cost", step_cost},
          {"measured_cost", measured_cost},
          {"rho_bar", rho_bar},
          {"k_bar", k_bar},
          {"s_orig", s_orig},
          {"s_distill", s_distill},
          {"guidance", guidance},
          {"projected_speedup", projected_speedup},
          {"exact_speedup", exact_speedup},
          {"max_relative_delta", max_relative_delta}};
}

CostLedger build_cost_ledger(const DiTParams& student, const RouterParams& router,
                             const std::vector<int>& t_grid,
                             const std::vector<FlowSample>& samples, double s_orig,
                             double s_distill, int guidance) {
  if (samples.empty() || t_grid.empty()) throw ContractError("cost ledger: empty evaluation grid");
  const DiTConfig& c = student.config;
  const bool image = samples.front().cond.image.has_value();
  CostLedger L;
  L.s_orig = s_orig;
  L.s_distill = s_distill;
  L.guidance = guidance;
  L.t_grid = t_grid;
  L.c_embed = embed_flops(c, &router);
  L.c_b = block_flops(c, c.sa_heads, c.ca_heads, c.ffn_dim, c.tokens(), image ? 1 : 0);
  for (const BlockParams& b : student.blocks) {
    L.block_cost.push_back(block_flops(c, b, image));
    L.rho.push_back(L.block_cost.back() / L.c_b);
  }
  const std::size_t n = student.blocks.size();
  L.rho_bar = 0.0;
  for (double r : L.rho) L.rho_bar += r / static_cast<double>(n);

  double k_sum = 0.0, cost_sum = 0.0;
  for (int t : t_grid) {
    std::vector<std::vector<double>> masks;
    double measured = 0.0;
    for (const FlowSample& s : samples) {
      Tensor x_t = forward_process(s.x0, s.eps, t, c.t_max);
      RoutedResult r = routed_forward(student, router, x_t, t, s.cond, RouteMode::inference);
      double macs = static_cast<double>(r.stats.embed_macs);
      for (auto m : r.stats.block_macs) macs += static_cast<double>(m);
      const double flops = 2.0 * macs;
      const double analytic = step_cost({r.mask.hard}, L.rho, L.c_embed, L.c_b).front();
      L.max_relative_delta =
          std::max(L.max_relative_delta, std::abs(flops - analytic) / analytic);
      measured += flops / static_cast<double>(samples.size());
      for (double v : r.mask.hard) k_sum += v;
      masks.push_back(r.mask.hard);
    }
    double mean_cost = 0.0;
    for (double v : step_cost(masks, L.rho, L.c_embed, L.c_b)) {
      mean_cost += v / static_cast<double>(samples.size());
    }
    L.step_cost.push_back(mean_cost);
    L.measured_cost.push_back(measured);
    cost_sum += mean_cost;
  }
  L.k_bar = k_sum / static_cast<double>(t_grid.size() * samples.size());
  L.projected_speedup = speedup(static_cast<double>(n), L.rho_bar, L.k_bar, s_orig, s_distill,
                                guidance);
  const double teacher_cost = embed_flops(c) + static_cast<double>(n) * L.c_b;
  const double routed = cost_sum / static_cast<double>(t_grid.size());
  L.exact_speedup = teacher_cost / routed * (s_orig / s_distill) * guidance;
  return L;
}

}  // namespace pare
