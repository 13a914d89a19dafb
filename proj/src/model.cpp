#include "pare/model.h"

#include <cmath>

#include "json_util.h"
#include "pare/error.h"
#include "pare/ops.h"
#include "pare/rng.h"

namespace pare {
namespace {

struct RopeTables {
  Tensor cos, sin;
};

// Axis-factored rotary tables: head_dim/2 rotation pairs split 2:1:1 across
// (slice, row, column) coordinates of each token.
RopeTables rope_tables(const DiTConfig& c) {
  const std::size_t pairs = c.head_dim / 2;
  const std::size_t pt = pairs / 2;
  const std::size_t ph = (pairs - pt) / 2;
  const std::size_t pw = pairs - pt - ph;
  const std::size_t n = c.tokens();
  std::vector<double> cs(n * pairs), sn(n * pairs);
  for (std::size_t tok = 0; tok < n; ++tok) {
    const std::size_t f = tok / c.spatial_tokens();
    const std::size_t y = (tok % c.spatial_tokens()) / c.spatial_w;
    const std::size_t x = tok % c.spatial_w;
    for (std::size_t p = 0; p < pairs; ++p) {
      double pos;
      std::size_t k, axis_pairs;
      if (p < pt) {
        pos = static_cast<double>(f), k = p, axis_pairs = pt;
      } else if (p < pt + ph) {
        pos = static_cast<double>(y), k = p - pt, axis_pairs = ph;
      } else {
        pos = static_cast<double>(x), k = p - pt - ph, axis_pairs = pw;
      }
      const double freq =
          std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(axis_pairs));
      cs[tok * pairs + p] = std::cos(pos * freq);
      sn[tok * pairs + p] = std::sin(pos * freq);
    }
  }
  return {Tensor({n, pairs}, std::move(cs)), Tensor({n, pairs}, std::move(sn))};
}

Tensor mod_row(const Tensor& mod, ModRow row, std::size_t d) {
  return reshape(slice_rows(mod, row, 1), {d});
}

// Multi-head attention over precomputed projections. Returns the per-head
// attention-weighted values; attention matrices go to `taps` when given.
std::vector<Tensor> attend(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                           std::size_t head_dim, const RopeTables* rope,
                           std::vector<HeadTap>* taps) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> out;
  out.reserve(heads);
  for (std::size_t j = 0; j < heads; ++j) {
    Tensor qj = slice_cols(q, j * head_dim, head_dim);
    Tensor kj = slice_cols(k, j * head_dim, head_dim);
    if (rope) {
      qj = rotate_pairs(qj, rope->cos, rope->sin);
      kj = rotate_pairs(kj, rope->cos, rope->sin);
    }
    Tensor attn = softmax_lastdim(scale(linear(qj, kj), inv_sqrt));
    Tensor vt = matmul(attn, slice_cols(v, j * head_dim, head_dim));
    if (taps) taps->push_back({attn.detached(), vt.detached()});
    out.push_back(std::move(vt));
  }
  return out;
}

Tensor cross_stream(const Tensor& x, const Tensor& cond, const AttentionParams& p,
                    std::size_t head_dim, std::vector<Tensor>* value_taps) {
  const std::size_t heads = p.heads(head_dim);
  std::vector<Tensor> vt = attend(linear(x, p.wq), linear(cond, p.wk), linear(cond, p.wv), heads,
                                  head_dim, nullptr, nullptr);
  if (value_taps) {
    for (const Tensor& t : vt) value_taps->push_back(t.detached());
  }
  return linear(concat_cols(vt), p.wo);
}

Tensor run_block(const BlockParams& b, const DiTConfig& c, const Tensor& x, const Tensor& mod,
                 const Condition& cond, const RopeTables& rope, BlockTaps* taps) {
  const std::size_t d = c.model_dim;
  const std::size_t hd = c.head_dim;

  Tensor a = mul_rows(rms_norm(x), b.norm_sa);
  a = add_bias(mul_rows(a, add_scalar(mod_row(mod, kScaleSa, d), 1.0)), mod_row(mod, kShiftSa, d));
  std::vector<Tensor> heads =
      attend(linear(a, b.self_attn.wq), linear(a, b.self_attn.wk), linear(a, b.self_attn.wv),
             b.self_attn.heads(hd), hd, &rope, taps ? &taps->sa : nullptr);
  Tensor sa = linear(concat_cols(heads), b.self_attn.wo);
  Tensor h = add(x, mul_rows(sa, mod_row(mod, kGateSa, d)));

  Tensor cn = mul_rows(rms_norm(h), b.norm_ca);
  Tensor ca = cross_stream(cn, cond.text, b.cross_text, hd, taps ? &taps->ca_text_values : nullptr);
  if (b.cross_image && cond.image) {
    ca = add(ca, cross_stream(cn, *cond.image, *b.cross_image, hd,
                              taps ? &taps->ca_image_values : nullptr));
  }
  h = add(h, mul_rows(ca, mod_row(mod, kGateCa, d)));

  Tensor f = mul_rows(rms_norm(h), b.norm_ffn);
  f = add_bias(mul_rows(f, add_scalar(mod_row(mod, kScaleFfn, d), 1.0)),
               mod_row(mod, kShiftFfn, d));
  Tensor o = linear(silu(linear(f, b.ffn_up)), b.ffn_down);
  return add(h, mul_rows(o, mod_row(mod, kGateFfn, d)));
}

Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.normal() * stddev;
  return Tensor({rows, cols}, std::move(v));
}

AttentionParams random_attention(Rng& rng, std::size_t heads, std::size_t head_dim,
                                 std::size_t in_dim, std::size_t model_dim) {
  const std::size_t w = heads * head_dim;
  const double s_in = 1.0 / std::sqrt(static_cast<double>(in_dim));
  const double s_out = 1.0 / std::sqrt(static_cast<double>(w));
  AttentionParams a;
  a.wq = random_matrix(rng, w, model_dim, 1.0 / std::sqrt(static_cast<double>(model_dim)));
  a.wk = random_matrix(rng, w, in_dim, s_in);
  a.wv = random_matrix(rng, w, in_dim, s_in);
  a.wo = random_matrix(rng, model_dim, w, s_out);
  return a;
}

void check_condition(const DiTConfig& c, const Condition& cond) {
  if (cond.text.rank() != 2 || cond.text.dim(1) != c.cond_dim || cond.text.dim(0) == 0) {
    throw DimensionError("condition text must be [L, " + std::to_string(c.cond_dim) + "], got " +
                         shape_str(cond.text.shape()));
  }
  if (cond.image && (cond.image->rank() != 2 || cond.image->dim(1) != c.cond_dim)) {
    throw DimensionError("condition image must be [1, " + std::to_string(c.cond_dim) + "], got " +
                         shape_str(cond.image->shape()));
  }
}

}  // namespace

void DiTConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model: " + m); };
  if (n_blocks == 0 || model_dim == 0 || sa_heads == 0 || ca_heads == 0 || head_dim == 0 ||
      ffn_dim == 0 || temporal_slices == 0 || spatial_h == 0 || spatial_w == 0 || channels == 0 ||
      cond_text_len == 0 || cond_dim == 0 || time_embed_dim == 0) {
    fail("all extents must be positive");
  }
  if (sa_heads * head_dim != model_dim) fail("sa_heads * head_dim must equal model_dim");
  if (ca_heads * head_dim != model_dim) fail("ca_heads * head_dim must equal model_dim");
  if (head_dim % 2 != 0) fail("head_dim must be even for rotary embedding");
  if (time_embed_dim % 2 != 0) fail("time_embed_dim must be even");
  if (t_max < 1) fail("t_max must be >= 1");
}

DiTConfig DiTConfig::toy() {
  DiTConfig c;
  c.n_blocks = 2;
  c.model_dim = 16;
  c.sa_heads = 2;
  c.ca_heads = 2;
  c.head_dim = 8;
  c.ffn_dim = 32;
  c.temporal_slices = 2;
  c.spatial_h = 2;
  c.spatial_w = 2;
  c.channels = 4;
  c.cond_text_len = 2;
  c.cond_dim = 16;
  c.time_embed_dim = 8;
  return c;
}

nlohmann::json to_json(const DiTConfig& c) {
  return {{"n_blocks", c.n_blocks},
          {"model_dim", c.model_dim},
          {"sa_heads", c.sa_heads},
          {"ca_heads", c.ca_heads},
          {"head_dim", c.head_dim},
          {"ffn_dim", c.ffn_dim},
          {"temporal_slices", c.temporal_slices},
          {"spatial_h", c.spatial_h},
          {"spatial_w", c.spatial_w},
          {"channels", c.channels},
          {"cond_text_len", c.cond_text_len},
          {"cond_dim", c.cond_dim},
          {"t_max", c.t_max},
          {"time_embed_dim", c.time_embed_dim},
          {"image_stream", c.image_stream}};
}

DiTConfig dit_config_from_json(const nlohmann::json& j) {
  using detail::read_key;
  detail::reject_unknown_keys(
      j,
      {"n_blocks", "model_dim", "sa_heads", "ca_heads", "head_dim", "ffn_dim", "temporal_slices",
       "spatial_h", "spatial_w", "channels", "cond_text_len", "cond_dim", "t_max",
       "time_embed_dim", "image_stream"},
      "model");
  DiTConfig c;
  read_key(j, "n_blocks", c.n_blocks, "model");
  read_key(j, "model_dim", c.model_dim, "model");
  read_key(j, "sa_heads", c.sa_heads, "model");
  read_key(j, "ca_heads", c.ca_heads, "model");
  read_key(j, "head_dim", c.head_dim, "model");
  read_key(j, "ffn_dim", c.ffn_dim, "model");
  read_key(j, "temporal_slices", c.temporal_slices, "model");
  read_key(j, "spatial_h", c.spatial_h, "model");
  read_key(j, "spatial_w", c.spatial_w, "model");
  read_key(j, "channels", c.channels, "model");
  read_key(j, "cond_text_len", c.cond_text_len, "model");
  read_key(j, "cond_dim", c.cond_dim, "model");
  read_key(j, "t_max", c.t_max, "model");
  read_key(j, "time_embed_dim", c.time_embed_dim, "model");
  read_key(j, "image_stream", c.image_stream, "model");
  return c;
}

std::size_t DiTParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

DiTParams init_dit(const DiTConfig& c, std::uint64_t seed, bool zero_gates) {
  c.validate();
  Rng rng(seed);
  const std::size_t d = c.model_dim;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  auto is_gate = [](std::size_t row) { return row == kGateSa || row == kGateCa || row == kGateFfn; };

  DiTParams p;
  p.config = c;
  p.in_proj = random_matrix(rng, d, c.channels, 1.0 / std::sqrt(static_cast<double>(c.channels)));
  p.in_bias = Tensor({d});
  p.time_w1 = random_matrix(rng, d, c.time_embed_dim,
                            1.0 / std::sqrt(static_cast<double>(c.time_embed_dim)));
  p.time_b1 = Tensor({d});
  p.time_w2 = random_matrix(rng, d, d, sd);
  p.time_b2 = Tensor({d});

  std::vector<double> mw(kModRows * d * d), mb(kModRows * d, 0.0);
  for (std::size_t r = 0; r < kModRows; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        const double v = rng.normal() * 0.1 * sd;
        mw[(r * d + i) * d + k] = (zero_gates && is_gate(r)) ? 0.0 : v;
      }
      if (!zero_gates && is_gate(r)) mb[r * d + i] = 0.5;
    }
  }
  p.mod_w = Tensor({kModRows * d, d}, std::move(mw));
  p.mod_b = Tensor({kModRows * d}, std::move(mb));
  p.out_norm = Tensor::full({d}, 1.0);
  p.out_proj = random_matrix(rng, c.channels, d, sd);
  p.out_bias = Tensor({c.channels});

  for (std::size_t i = 0; i < c.n_blocks; ++i) {
    BlockParams b;
    b.norm_sa = Tensor::full({d}, 1.0);
    b.norm_ca = Tensor::full({d}, 1.0);
    b.norm_ffn = Tensor::full({d}, 1.0);
    std::vector<double> off(kModRows * d, 0.0);
    if (!zero_gates) {
      for (double& v : off) v = rng.normal() * 0.1;
    }
    b.modulation = Tensor({kModRows, d}, std::move(off));
    b.self_attn = random_attention(rng, c.sa_heads, c.head_dim, d, d);
    b.cross_text = random_attention(rng, c.ca_heads, c.head_dim, c.cond_dim, d);
    if (c.image_stream) b.cross_image = random_attention(rng, c.ca_heads, c.head_dim, c.cond_dim, d);
    b.ffn_up = random_matrix(rng, c.ffn_dim, d, sd);
    b.ffn_down = random_matrix(rng, d, c.ffn_dim, 1.0 / std::sqrt(static_cast<double>(c.ffn_dim)));
    p.blocks.push_back(std::move(b));
  }
  return p;
}

void zero_modulation_gates(DiTParams& p) {
  const std::size_t d = p.config.model_dim;
  std::vector<double> mw = p.mod_w.to_vector(), mb = p.mod_b.to_vector();
  for (std::size_t r : {kGateSa, kGateCa, kGateFfn}) {
    std::fill(mw.begin() + static_cast<std::ptrdiff_t>(r * d * d),
              mw.begin() + static_cast<std::ptrdiff_t>((r + 1) * d * d), 0.0);
    std::fill(mb.begin() + static_cast<std::ptrdiff_t>(r * d),
              mb.begin() + static_cast<std::ptrdiff_t>((r + 1) * d), 0.0);
  }
  p.mod_w = Tensor(p.mod_w.shape(), std::move(mw));
  p.mod_b = Tensor(p.mod_b.shape(), std::move(mb));
  for (BlockParams& b : p.blocks) {
    std::vector<double> off = b.modulation.to_vector();
    for (std::size_t r : {kGateSa, kGateCa, kGateFfn}) {
      std::fill(off.begin() + static_cast<std::ptrdiff_t>(r * d),
                off.begin() + static_cast<std::ptrdiff_t>((r + 1) * d), 0.0);
    }
    b.modulation = Tensor(b.modulation.shape(), std::move(off));
  }
}

std::vector<double> sinusoidal_embedding(double t, std::size_t dim) {
  if (dim % 2 != 0) throw ConfigError("sinusoidal embedding dimension must be even");
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
    out[2 * k] = std::sin(t * freq);
    out[2 * k + 1] = std::cos(t * freq);
  }
  return out;
}

Tensor forward_process(const Tensor& x0, const Tensor& eps, int t, int t_max) {
  if (t < 0 || t > t_max) {
    throw ContractError("forward_process: t=" + std::to_string(t) + " outside [0, " +
                        std::to_string(t_max) + "]");
  }
  if (x0.shape() != eps.shape()) {
    throw DimensionError("forward_process: x0 " + shape_str(x0.shape()) + " vs eps " +
                         shape_str(eps.shape()));
  }
  const double sigma = static_cast<double>(t) / static_cast<double>(t_max);
  return add(scale(x0, 1.0 - sigma), scale(eps, sigma));
}

ForwardResult dit_forward(const DiTParams& p, const Tensor& x_t, int t, const Condition& cond,
                          const ForwardOptions& options) {
  const DiTConfig& c = p.config;
  if (x_t.shape() != c.latent_shape()) {
    throw DimensionError("dit_forward: latent " + shape_str(x_t.shape()) + " expected " +
                         shape_str(c.latent_shape()));
  }
  check_condition(c, cond);
  const std::size_t d = c.model_dim;
  const std::size_t n_blocks = p.blocks.size();
  const BlockGate* gate = options.gate;
  if (gate && gate->hard.size() != n_blocks) {
    throw DimensionError("dit_forward: mask length " + std::to_string(gate->hard.size()) +
                         " for " + std::to_string(n_blocks) + " blocks");
  }
  ForwardStats* stats = options.stats;
  if (stats) {
    stats->block_executions.assign(n_blocks, 0);
    stats->block_macs.assign(n_blocks, 0);
    stats->embed_macs = 0;
  }
  MacCounter total;

  const RopeTables rope = rope_tables(c);
  Tensor tokens = reshape(x_t, {c.tokens(), c.channels});
  Tensor h = add_bias(linear(tokens, p.in_proj), p.in_bias);
  Tensor temb({1, c.time_embed_dim}, sinusoidal_embedding(static_cast<double>(t), c.time_embed_dim));
  Tensor e = add_bias(linear(silu(add_bias(linear(temb, p.time_w1), p.time_b1)), p.time_w2),
                      p.time_b2);
  Tensor shared = reshape(add_bias(linear(silu(e), p.mod_w), p.mod_b), {kModRows, d});

  ForwardResult result;
  if (options.taps) result.taps.emplace();
  result.hidden.push_back(h);
  std::uint64_t block_total = 0;
  for (std::size_t i = 0; i < n_blocks; ++i) {
    const bool active = !gate || gate->hard[i] != 0.0;
    const bool execute = active || (gate && gate->blend);
    BlockTaps* taps = nullptr;
    if (result.taps) {
      result.taps->blocks.emplace_back();
      taps = &result.taps->blocks.back();
      taps->input = h.detached();
    }
    if (execute) {
      MacCounter block_counter;
      Tensor mod = add(shared, p.blocks[i].modulation);
      Tensor y = run_block(p.blocks[i], c, h, mod, cond, rope, taps);
      if (gate && gate->blend) {
        Tensor m = element(*gate->blend, i);
        Tensor keep = add_scalar(scale(m, -1.0), 1.0);
        h = add(scale_by(y, m), scale_by(h, keep));
      } else {
        h = y;
      }
      block_total += block_counter.count();
      if (stats) {
        stats->block_executions[i] += 1;
        stats->block_macs[i] += block_counter.count();
      }
    }
    if (taps) taps->output = h.detached();
    result.hidden.push_back(h);
  }

  Tensor out = add_bias(linear(mul_rows(rms_norm(h), p.out_norm), p.out_proj), p.out_bias);
  result.velocity = reshape(out, c.latent_shape());
  if (stats) stats->embed_macs = total.count() - block_total;
  return result;
}

Tensor flow_matching_loss(const DiTParams& params, const std::vector<FlowSample>& batch) {
  if (batch.empty()) throw ContractError("flow_matching_loss: empty batch");
  Tensor total;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const FlowSample& b = batch[s];
    Tensor x_t = forward_process(b.x0, b.eps, b.t, params.config.t_max);
    Tensor v = dit_forward(params, x_t, b.t, b.cond).velocity;
    Tensor l = mean_square(sub(v, sub(b.eps, b.x0)));
    total = s == 0 ? l : add(total, l);
  }
  return scale(total, 1.0 / static_cast<double>(batch.size()));
}

std::vector<std::vector<double>> block_residual_norms(const DiTParams& params,
                                                      const std::vector<FlowSample>& samples,
                                                      const std::vector<int>& t_grid,
                                                      bool normalize) {
  if (samples.empty()) throw ContractError("block_residual_norms: no samples");
  const std::size_t n = params.blocks.size();
  std::vector<std::vector<double>> out(n, std::vector<double>(t_grid.size(), 0.0));
  for (std::size_t col = 0; col < t_grid.size(); ++col) {
    for (const FlowSample& s : samples) {
      Tensor x_t = forward_process(s.x0, s.eps, t_grid[col], params.config.t_max);
      ForwardResult r = dit_forward(params, x_t, t_grid[col], s.cond);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        auto a = r.hidden[i + 1].data(), b = r.hidden[i].data();
        for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
        out[i][col] += std::sqrt(acc) / static_cast<double>(samples.size());
      }
    }
  }
  if (normalize) {
    for (auto& row : out) {
      if (row.empty()) continue;
      const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
      const double mn = *lo, mx = *hi;
      if (mx > mn) {
        for (double& v : row) v = (v - mn) / (mx - mn);
      }
    }
  }
  return out;
}

}  // namespace pare
