#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "pare/datagen.h"
#include "pare/model.h"

namespace pare {

struct RouterConfig {
  std::size_t hidden = 64;
  std::size_t sin_dim = 32;
  std::size_t content_dim = 32;
  int k_min = 4;
  int k_max = 7;

  // Throws ConfigError unless 2 <= k_min <= k_max <= n_blocks and dims are valid.
  void validate(std::size_t n_blocks) const;
};

nlohmann::json to_json(const RouterConfig& c);
RouterConfig router_config_from_json(const nlohmann::json& j);

struct RouterParams {
  RouterConfig config;
  Mode mode = Mode::i2v;
  Tensor content_w, content_b;  // [content_dim, cond_dim or 2C], [content_dim]
  Tensor w1, b1;                // [h, sin_dim + content_dim], [h]
  Tensor w2, b2;                // [h, h], [h]
  Tensor w3, b3;                // [N, h], [N]

  std::size_t n_blocks() const { return w3.dim(0); }

  template <class F>
  void for_each(F&& f) {
    f("content_w", content_w);
    f("content_b", content_b);
    f("w1", w1);
    f("b1", b1);
    f("w2", w2);
    f("b2", b2);
    f("w3", w3);
    f("b3", b3);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<RouterParams*>(this)->for_each(
        [&f](const std::string& n, Tensor& t) { f(n, static_cast<const Tensor&>(t)); });
  }
};

RouterParams init_router(const DiTConfig& model, const RouterConfig& config, Mode mode,
                         std::uint64_t seed);

// K(t) = round-half-up(K_min + (K_max - K_min)·t/T).
int budget(int t, int t_max, int k_min, int k_max);

std::vector<double> sin_embed(double t, std::size_t dim);

// [1, content_dim]. I2V projects the image embedding; T2V projects the
// per-channel mean and std of x_t. Nothing flows back into x_t.
Tensor content_embedding(const RouterParams& params, const Tensor& x_t, const Condition& cond);

// Per-channel (means, population stds) of a latent, length 2C.
std::vector<double> latent_statistics(const Tensor& x_t);

// Logits [N].
Tensor router_forward(const RouterParams& params, int t, const Tensor& e_c);

// Blocks 0 and N-1 are forced on; K-2 interior blocks with the highest
// logits fill the rest, ties to the lower index.
std::vector<double> topk_mask(std::span<const double> logits, int k);

struct RoutingMask {
  std::vector<double> hard;
  std::vector<double> soft;
  Tensor ste;  // value == hard; interior gradient sigmoid'(r)
  int k = 0;
  int t = 0;
};

RoutingMask ste_mask(const Tensor& logits, int k);

enum class RouteMode { inference, training };

struct RoutedResult {
  ForwardResult forward;
  RoutingMask mask;
  ForwardStats stats;  // embed_macs includes the router
  Tensor logits;
};

RoutedResult routed_forward(const DiTParams& student, const RouterParams& router,
                            const Tensor& x_t, int t, const Condition& cond, RouteMode mode,
                            bool taps = false);

// Fraction of samples for which each block is active, rows = blocks,
// columns = t_grid.
std::vector<std::vector<double>> activation_frequency(const RouterParams& router,
                                                      const std::vector<int>& t_grid,
                                                      const std::vector<FlowSample>& samples,
                                                      int t_max);

std::string activation_frequency_csv(const std::vector<std::vector<double>>& freq,
                                     const std::vector<int>& t_grid);

}  // namespace pare
