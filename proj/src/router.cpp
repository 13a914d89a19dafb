#include "pare/router.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json_util.h"
#include "pare/error.h"
#include "pare/ops.h"
#include "pare/rng.h"

namespace pare {
namespace {

Tensor gaussian(Rng& rng, std::size_t rows, std::size_t cols) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(cols));
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.normal() * sd;
  return Tensor({rows, cols}, std::move(v));
}

std::size_t content_input_dim(const DiTConfig& m, Mode mode) {
  return mode == Mode::i2v ? m.cond_dim : 2 * m.channels;
}

}  // namespace

void RouterConfig::validate(std::size_t n_blocks) const {
  if (hidden == 0 || content_dim == 0) throw ConfigError("router dims must be positive");
  if (sin_dim == 0 || sin_dim % 2 != 0) throw ConfigError("router sin_dim must be even and positive");
  if (k_min < 2) throw ConfigError("K_min must be >= 2 (boundary blocks are always active)");
  if (k_min > k_max) throw ConfigError("K_min must not exceed K_max");
  if (static_cast<std::size_t>(k_max) > n_blocks) throw ConfigError("K_max exceeds block count");
}

nlohmann::json to_json(const RouterConfig& c) {
  return {{"hidden", c.hidden},   {"sin_dim", c.sin_dim}, {"content_dim", c.content_dim},
          {"k_min", c.k_min},     {"k_max", c.k_max}};
}

RouterConfig router_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"hidden", "sin_dim", "content_dim", "k_min", "k_max"}, "routing");
  RouterConfig c;
  detail::read_key(j, "hidden", c.hidden, "routing");
  detail::read_key(j, "sin_dim", c.sin_dim, "routing");
  detail::read_key(j, "content_dim", c.content_dim, "routing");
  detail::read_key(j, "k_min", c.k_min, "routing");
  detail::read_key(j, "k_max", c.k_max, "routing");
  return c;
}

RouterParams init_router(const DiTConfig& m, const RouterConfig& c, Mode mode,
                         std::uint64_t seed) {
  c.validate(m.n_blocks);
  Rng rng(seed);
  RouterParams p;
  p.config = c;
  p.mode = mode;
  p.content_w = gaussian(rng, c.content_dim, content_input_dim(m, mode));
  p.content_b = Tensor({c.content_dim});
  p.w1 = gaussian(rng, c.hidden, c.sin_dim + c.content_dim);
  p.b1 = Tensor({c.hidden});
  p.w2 = gaussian(rng, c.hidden, c.hidden);
  p.b2 = Tensor({c.hidden});
  p.w3 = gaussian(rng, m.n_blocks, c.hidden);
  p.b3 = Tensor({m.n_blocks});
  return p;
}

int budget(int t, int t_max, int k_min, int k_max) {
  if (t_max <= 0) throw ConfigError("budget: T must be positive");
  if (k_min < 2 || k_min > k_max) throw ConfigError("budget: need 2 <= K_min <= K_max");
  if (t < 0 || t > t_max) throw ConfigError("budget: t outside [0, T]");
  // round-half-up of K_min + ΔK·t/T in exact integer arithmetic
  const long long num = 2LL * (static_cast<long long>(k_min) * t_max +
                               static_cast<long long>(k_max - k_min) * t) + t_max;
  const int k = static_cast<int>(num / (2LL * t_max));
  return std::clamp(k, k_min, k_max);
}

std::vector<double> sin_embed(double t, std::size_t dim) { return sinusoidal_embedding(t, dim); }

std::vector<double> latent_statistics(const Tensor& x_t) {
  if (x_t.rank() < 1 || x_t.numel() == 0) throw ContractError("latent_statistics: empty latent");
  const std::size_t c = x_t.shape().back();
  const std::size_t n = x_t.numel() / c;
  auto d = x_t.data();
  std::vector<double> out(2 * c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += d[i * c + ch];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (d[i * c + ch] - mean) * (d[i * c + ch] - mean);
    out[ch] = mean;
    out[c + ch] = std::sqrt(var / static_cast<double>(n));
  }
  return out;
}

Tensor content_embedding(const RouterParams& p, const Tensor& x_t, const Condition& cond) {
  Tensor input;
  if (p.mode == Mode::i2v) {
    if (!cond.image) throw ContractError("content_embedding: I2V router needs an image embedding");
    input = cond.image->detached();
  } else {
    if (x_t.numel() == 0) throw ContractError("content_embedding: T2V router needs x_t");
    std::vector<double> s = latent_statistics(x_t);
    const std::size_t n = s.size();
    input = Tensor({1, n}, std::move(s));
  }
  if (input.dim(1) != p.content_w.dim(1)) {
    throw DimensionError("content_embedding: input width " + std::to_string(input.dim(1)) +
                         " expected " + std::to_string(p.content_w.dim(1)));
  }
  return add_bias(linear(input, p.content_w), p.content_b);
}

Tensor router_forward(const RouterParams& p, int t, const Tensor& e_c) {
  const RouterConfig& c = p.config;
  if (e_c.rank() != 2 || e_c.dim(0) != 1 || e_c.dim(1) != c.content_dim) {
    throw DimensionError("router_forward: e_c " + shape_str(e_c.shape()) + " expected [1, " +
                         std::to_string(c.content_dim) + "]");
  }
  Tensor temb({1, c.sin_dim}, sin_embed(static_cast<double>(t), c.sin_dim));
  Tensor in = concat_cols({temb, e_c});
  Tensor h = silu(add_bias(linear(in, p.w1), p.b1));
  h = silu(add_bias(linear(h, p.w2), p.b2));
  Tensor r = add_bias(linear(h, p.w3), p.b3);
  return reshape(r, {p.n_blocks()});
}

std::vector<double> topk_mask(std::span<const double> logits, int k) {
  const std::size_t n = logits.size();
  if (k < 2) throw ConfigError("topk_mask: K must be >= 2");
  if (static_cast<std::size_t>(k) > n) throw ConfigError("topk_mask: K exceeds block count");
  std::vector<double> mask(n, 0.0);
  mask[0] = mask[n - 1] = 1.0;
  std::vector<std::size_t> interior;
  for (std::size_t i = 1; i + 1 < n; ++i) interior.push_back(i);
  std::stable_sort(interior.begin(), interior.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  for (int s = 0; s < k - 2; ++s) mask[interior[s]] = 1.0;
  return mask;
}

RoutingMask ste_mask(const Tensor& logits, int k) {
  if (logits.rank() != 1) throw DimensionError("ste_mask: logits must be a vector");
  const std::size_t n = logits.numel();
  RoutingMask m;
  m.k = k;
  m.hard = topk_mask(logits.data(), k);
  Tensor soft = sigmoid(logits);
  m.soft = soft.to_vector();
  std::vector<double> interior(n, 1.0);
  interior[0] = interior[n - 1] = 0.0;
  Tensor surrogate = mul(sub(soft, stop_gradient(soft)), Tensor({n}, std::move(interior)));
  m.ste = add(Tensor({n}, m.hard), surrogate);
  return m;
}

RoutedResult routed_forward(const DiTParams& student, const RouterParams& router,
                            const Tensor& x_t, int t, const Condition& cond, RouteMode mode,
                            bool taps) {
  if (router.n_blocks() != student.blocks.size()) {
    throw DimensionError("routed_forward: router has " + std::to_string(router.n_blocks()) +
                         " outputs for " + std::to_string(student.blocks.size()) + " blocks");
  }
  RoutedResult out;
  std::uint64_t router_macs = 0;
  {
    MacCounter counter;
    out.logits = router_forward(router, t, content_embedding(router, x_t, cond));
    router_macs = counter.count();
  }
  const int k = budget(t, student.config.t_max, router.config.k_min, router.config.k_max);
  out.mask = ste_mask(out.logits, k);
  out.mask.t = t;
  BlockGate gate{out.mask.hard, std::nullopt};
  if (mode == RouteMode::training) gate.blend = out.mask.ste;
  out.forward = dit_forward(student, x_t, t, cond, {.taps = taps, .gate = &gate, .stats = &out.stats});
  out.stats.embed_macs += router_macs;
  return out;
}

std::vector<std::vector<double>> activation_frequency(const RouterParams& router,
                                                      const std::vector<int>& t_grid,
                                                      const std::vector<FlowSample>& samples,
                                                      int t_max) {
  if (samples.empty()) throw ContractError("activation_frequency: no content samples");
  const std::size_t n = router.n_blocks();
  std::vector<std::vector<double>> freq(n, std::vector<double>(t_grid.size(), 0.0));
  for (std::size_t col = 0; col < t_grid.size(); ++col) {
    const int t = t_grid[col];
    const int k = budget(t, t_max, router.config.k_min, router.config.k_max);
    std::vector<std::size_t> counts(n, 0);
    for (const FlowSample& s : samples) {
      Tensor x_t = forward_process(s.x0, s.eps, t, t_max);
      Tensor r = router_forward(router, t, content_embedding(router, x_t, s.cond));
      auto m = topk_mask(r.data(), k);
      for (std::size_t i = 0; i < n; ++i) counts[i] += m[i] != 0.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
      freq[i][col] = static_cast<double>(counts[i]) / static_cast<double>(samples.size());
    }
  }
  return freq;
}

std::string activation_frequency_csv(const std::vector<std::vector<double>>& freq,
                                     const std::vector<int>& t_grid) {
  std::ostringstream os;
  os << "block";
  for (int t : t_grid) os << ",t" << t;
  os << '\n';
  for (std::size_t i = 0; i < freq.size(); ++i) {
    os << i;
    for (double v : freq[i]) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace pare
