#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pare/tensor.h"

namespace pare {

struct DiTConfig {
  std::size_t n_blocks = 8;
  std::size_t model_dim = 64;
  std::size_t sa_heads = 8;
  std::size_t ca_heads = 8;
  std::size_t head_dim = 8;
  std::size_t ffn_dim = 256;
  std::size_t temporal_slices = 4;
  std::size_t spatial_h = 4;
  std::size_t spatial_w = 4;
  std::size_t channels = 8;
  std::size_t cond_text_len = 4;
  std::size_t cond_dim = 64;
  int t_max = 1000;
  std::size_t time_embed_dim = 32;
  bool image_stream = true;  // I2V models carry a second cross-attention stream

  std::size_t spatial_tokens() const { return spatial_h * spatial_w; }
  std::size_t tokens() const { return temporal_slices * spatial_tokens(); }
  Shape latent_shape() const { return {temporal_slices, spatial_h, spatial_w, channels}; }

  // Throws ConfigError on inconsistent dimensions.
  void validate() const;

  // Two-block configuration small enough for exhaustive finite differences.
  static DiTConfig toy();
};

nlohmann::json to_json(const DiTConfig& config);
// Missing keys keep their defaults; unknown keys are a ConfigError.
DiTConfig dit_config_from_json(const nlohmann::json& j);

// Condition streams: text tokens [cond_text_len, cond_dim] and, in I2V mode,
// one image embedding [1, cond_dim].
struct Condition {
  Tensor text;
  std::optional<Tensor> image;
};

// Math convention: projections map inputs by y = x·Wᵀ, so W_Q/W_K/W_V are
// [heads*head_dim, in] (per-head row blocks) and W_O is [d, heads*head_dim]
// (per-head column blocks).
struct AttentionParams {
  Tensor wq, wk, wv, wo;

  std::size_t heads(std::size_t head_dim) const { return wq.dim(0) / head_dim; }
};

// Modulation rows of a block.
enum ModRow : std::size_t {
  kShiftSa = 0,
  kScaleSa = 1,
  kGateSa = 2,
  kGateCa = 3,
  kShiftFfn = 4,
  kScaleFfn = 5,
  kGateFfn = 6,
  kModRows = 7
};

struct BlockParams {
  Tensor norm_sa, norm_ca, norm_ffn;  // RMS gains [d]
  Tensor modulation;                  // per-block offsets [7, d]
  AttentionParams self_attn;
  AttentionParams cross_text;
  std::optional<AttentionParams> cross_image;
  Tensor ffn_up;    // [n_ffn, d]
  Tensor ffn_down;  // [d, n_ffn]

  std::size_t ffn_width() const { return ffn_up.dim(0); }
};

struct DiTParams {
  DiTConfig config;
  Tensor in_proj, in_bias;      // g1: [d, C], [d]
  Tensor time_w1, time_b1;      // [d, time_embed_dim], [d]
  Tensor time_w2, time_b2;      // [d, d], [d]
  Tensor mod_w, mod_b;          // shared modulation [7d, d], [7d]
  Tensor out_norm;              // [d]
  Tensor out_proj, out_bias;    // g2: [C, d], [C]
  std::vector<BlockParams> blocks;

  template <class F>
  void for_each(F&& f);
  template <class F>
  void for_each(F&& f) const;

  std::size_t parameter_count() const;
};

DiTParams init_dit(const DiTConfig& config, std::uint64_t seed, bool zero_gates = true);

// Zeroes every source of the SA/CA/FFN gates (shared projection rows, bias
// entries and per-block offsets).
void zero_modulation_gates(DiTParams& params);

struct HeadTap {
  Tensor attention;       // [tokens, tokens], post-softmax
  Tensor weighted_value;  // [tokens, head_dim]
};

struct BlockTaps {
  std::vector<HeadTap> sa;
  std::vector<Tensor> ca_text_values;   // per CA head [tokens, head_dim]
  std::vector<Tensor> ca_image_values;  // empty without an image stream
  Tensor input, output;                 // hidden state x^(i), x^(i+1)
};

struct ForwardTaps {
  std::vector<BlockTaps> blocks;
};

// Per-invocation instrumentation.
struct ForwardStats {
  std::vector<std::size_t> block_executions;
  std::vector<std::uint64_t> block_macs;
  std::uint64_t embed_macs = 0;
};

// Routed execution of the block stack. `hard` is the 0/1 mask per block.
// Without `blend`, inactive blocks are not evaluated. With `blend` (a tracked
// [N] tensor whose value equals `hard`), every block is evaluated and the
// residual stream becomes m·B(x) + (1-m)·x.
struct BlockGate {
  std::vector<double> hard;
  std::optional<Tensor> blend;
};

struct ForwardOptions {
  bool taps = false;
  const BlockGate* gate = nullptr;
  ForwardStats* stats = nullptr;
};

struct ForwardResult {
  Tensor velocity;             // latent shape
  std::vector<Tensor> hidden;  // x^(0) .. x^(N), [tokens, d]
  std::optional<ForwardTaps> taps;
};

// x_t = (1 - t/T)·x0 + (t/T)·eps.
Tensor forward_process(const Tensor& x0, const Tensor& eps, int t, int t_max);

ForwardResult dit_forward(const DiTParams& params, const Tensor& x_t, int t,
                          const Condition& cond, const ForwardOptions& options = {});

struct FlowSample {
  Tensor x0;
  Tensor eps;
  int t = 0;
  Condition cond;
  double motion_level = 0.0;
};

// Mean over samples of the mean-square error between velocity and eps - x0.
Tensor flow_matching_loss(const DiTParams& params, const std::vector<FlowSample>& batch);

// Mean over samples of ‖x^(i+1) - x^(i)‖₂ per block and timestep, rows =
// blocks, columns = t_grid. With `normalize`, each non-constant row is
// min-max scaled to [0, 1].
std::vector<std::vector<double>> block_residual_norms(const DiTParams& params,
                                                      const std::vector<FlowSample>& samples,
                                                      const std::vector<int>& t_grid,
                                                      bool normalize);

// Sinusoidal embedding: pairs (sin(t·f_k), cos(t·f_k)) with f_k = 10000^(-k/(dim/2)).
std::vector<double> sinusoidal_embedding(double t, std::size_t dim);

template <class F>
void for_each_attention(AttentionParams& a, const std::string& prefix, F&& f) {
  f(prefix + ".wq", a.wq);
  f(prefix + ".wk", a.wk);
  f(prefix + ".wv", a.wv);
  f(prefix + ".wo", a.wo);
}

template <class F>
void DiTParams::for_each(F&& f) {
  f("in_proj", in_proj);
  f("in_bias", in_bias);
  f("time_w1", time_w1);
  f("time_b1", time_b1);
  f("time_w2", time_w2);
  f("time_b2", time_b2);
  f("mod_w", mod_w);
  f("mod_b", mod_b);
  f("out_norm", out_norm);
  f("out_proj", out_proj);
  f("out_bias", out_bias);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    BlockParams& b = blocks[i];
    const std::string p = "blocks." + std::to_string(i);
    f(p + ".norm_sa", b.norm_sa);
    f(p + ".norm_ca", b.norm_ca);
    f(p + ".norm_ffn", b.norm_ffn);
    f(p + ".modulation", b.modulation);
    for_each_attention(b.self_attn, p + ".sa", f);
    for_each_attention(b.cross_text, p + ".ca_text", f);
    if (b.cross_image) for_each_attention(*b.cross_image, p + ".ca_image", f);
    f(p + ".ffn_up", b.ffn_up);
    f(p + ".ffn_down", b.ffn_down);
  }
}

template <class F>
void DiTParams::for_each(F&& f) const {
  const_cast<DiTParams*>(this)->for_each(
      [&f](const std::string& name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
}

}  // namespace pare
