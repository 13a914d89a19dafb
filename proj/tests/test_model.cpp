#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "naive_dit.h"
#include "pare/datagen.h"
#include "pare/error.h"
#include "pare/gradcheck.h"
#include "pare/model.h"
#include "pare/ops.h"
#include "pare/params.h"

using namespace pare;

namespace {

struct Fixture {
  DiTConfig config = DiTConfig::toy();
  DiTParams params = init_dit(config, 3, /*zero_gates=*/false);
  LatentClip clip = gen_latent_clip(config, 5, 0.6);
  Condition cond = gen_condition(config, 6, Mode::i2v, &clip);
  Tensor eps = gen_noise(config, 7);
};

}  // namespace

TEST_CASE("forward_process examples") {
  Tensor x0 = Tensor::full({2}, 2.0), eps = Tensor::full({2}, 0.0);
  CHECK(bitwise_equal(forward_process(x0, eps, 0, 1000), x0));
  CHECK(bitwise_equal(forward_process(x0, Tensor::full({2}, 5.0), 1000, 1000), Tensor::full({2}, 5.0)));
  CHECK(forward_process(x0, eps, 500, 1000)[0] == 1.0);
  CHECK_THROWS_AS(forward_process(x0, eps, 1001, 1000), ContractError);
  CHECK_THROWS_AS(forward_process(x0, eps, -1, 1000), ContractError);
  CHECK_THROWS_AS(forward_process(x0, Tensor({3}), 5, 1000), DimensionError);
}

TEST_CASE("config validation and JSON") {
  DiTConfig c;
  c.validate();
  CHECK(c.tokens() == 64);
  c.sa_heads = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  const DiTConfig toy = DiTConfig::toy();
  CHECK(to_json(dit_config_from_json(to_json(toy))) == to_json(toy));
  CHECK_THROWS_AS(dit_config_from_json({{"bogus", 1}}), ConfigError);
  CHECK(dit_config_from_json({{"n_blocks", 3}}).n_blocks == 3);
}

TEST_CASE("dit_forward matches the loop-only reference") {
  Fixture f;
  for (int t : {0, 137, 1000}) {
    Tensor x_t = forward_process(f.clip.x0, f.eps, t, f.config.t_max);
    ForwardResult r = dit_forward(f.params, x_t, t, f.cond, {.taps = true});
    naive::Result ref = naive::forward(f.params, x_t, t, f.cond);
    CHECK(naive::max_diff(ref.velocity, r.velocity) <= 1e-10);
    for (std::size_t i = 0; i < ref.hidden.size(); ++i) {
      CHECK(naive::max_diff(ref.hidden[i], r.hidden[i]) <= 1e-10);
    }
    for (std::size_t b = 0; b < f.config.n_blocks; ++b) {
      for (std::size_t j = 0; j < f.config.sa_heads; ++j) {
        CHECK(naive::max_diff(ref.blocks[b].sa[j].attention, r.taps->blocks[b].sa[j].attention) <= 1e-12);
        CHECK(naive::max_diff(ref.blocks[b].sa[j].weighted, r.taps->blocks[b].sa[j].weighted_value) <= 1e-10);
        CHECK(naive::max_diff(ref.blocks[b].ca_text[j], r.taps->blocks[b].ca_text_values[j]) <= 1e-10);
        CHECK(naive::max_diff(ref.blocks[b].ca_image[j], r.taps->blocks[b].ca_image_values[j]) <= 1e-10);
      }
    }
  }
}

TEST_CASE("velocity shape, determinism and tap row sums") {
  Fixture f;
  Tensor x_t = forward_process(f.clip.x0, f.eps, 400, f.config.t_max);
  ForwardResult a = dit_forward(f.params, x_t, 400, f.cond, {.taps = true});
  ForwardResult b = dit_forward(init_dit(f.config, 3, false), x_t, 400, f.cond);
  CHECK(a.velocity.shape() == f.config.latent_shape());
  CHECK(bitwise_equal(a.velocity, b.velocity));
  for (const BlockTaps& bt : a.taps->blocks) {
    for (const HeadTap& h : bt.sa) {
      const std::size_t n = h.attention.dim(1);
      for (std::size_t q = 0; q < h.attention.dim(0); ++q) {
        double row = 0.0;
        for (std::size_t k = 0; k < n; ++k) row += h.attention.at(q, k);
        CHECK(std::abs(row - 1.0) <= 1e-9);
      }
    }
  }
  Tensor wrong({2, 2, 2, 3});
  CHECK_THROWS_AS(dit_forward(f.params, wrong, 400, f.cond), DimensionError);
  Condition bad{Tensor({2, 3}), std::nullopt};
  CHECK_THROWS_AS(dit_forward(f.params, x_t, 400, bad), DimensionError);
}

TEST_CASE("zero gates make every block an exact identity") {
  Fixture f;
  DiTParams p = init_dit(f.config, 9, /*zero_gates=*/true);
  Tensor x_t = forward_process(f.clip.x0, f.eps, 700, f.config.t_max);
  ForwardResult r = dit_forward(p, x_t, 700, f.cond);
  for (std::size_t i = 1; i < r.hidden.size(); ++i) CHECK(bitwise_equal(r.hidden[i], r.hidden[0]));

  DiTParams q = f.params;
  zero_modulation_gates(q);
  ForwardResult z = dit_forward(q, x_t, 700, f.cond);
  // g2 ∘ g1 directly.
  Tensor tokens = reshape(x_t, {f.config.tokens(), f.config.channels});
  Tensor h = add_bias(linear(tokens, q.in_proj), q.in_bias);
  Tensor v = add_bias(linear(mul_rows(rms_norm(h), q.out_norm), q.out_proj), q.out_bias);
  CHECK(bitwise_equal(z.velocity, reshape(v, f.config.latent_shape())));

  auto norms = block_residual_norms(q, {{f.clip.x0, f.eps, 0, f.cond, 0.6}}, {100, 500, 900}, false);
  for (const auto& row : norms)
    for (double v2 : row) CHECK(v2 == 0.0);
}

TEST_CASE("flow matching loss examples") {
  DiTConfig c = DiTConfig::toy();
  DiTParams p = init_dit(c, 1);
  // Output projection zero, bias b: the model predicts b in every position.
  p.out_proj = Tensor(p.out_proj.shape());
  std::vector<double> b(c.channels);
  for (std::size_t ch = 0; ch < c.channels; ++ch) b[ch] = 0.1 * static_cast<double>(ch) - 0.2;
  p.out_bias = Tensor({c.channels}, b);
  std::vector<double> eps(shape_numel(c.latent_shape()));
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = b[i % c.channels];
  const Tensor x0(c.latent_shape());
  const Condition cond = gen_condition(c, 2, Mode::t2v);
  FlowSample exact{x0, Tensor(c.latent_shape(), eps), 300, cond, 0.0};
  CHECK(flow_matching_loss(p, {exact}).item() <= 1e-24);
  for (double& e : eps) e -= 1.0;
  FlowSample offset{x0, Tensor(c.latent_shape(), eps), 300, cond, 0.0};
  CHECK(std::abs(flow_matching_loss(p, {offset}).item() - 1.0) <= 1e-12);
  CHECK_THROWS_AS(flow_matching_loss(p, {}), ContractError);
}

TEST_CASE("flow matching loss gradient on the 2-block toy config") {
  DiTConfig c = DiTConfig::toy();
  DiTParams p = init_dit(c, 4, false);
  auto batch = sample_batch(c, Mode::i2v, 8, 2);
  auto r = grad_check(
      [&](const std::vector<Tensor>& v) {
        DiTParams q = p;
        assign_parameters(q, v);
        return flow_matching_loss(q, batch);
      },
      parameter_list(p), 1e-5, 1e-3, 6, 1);
  CHECK(r.pass);
  MESSAGE("flow matching max rel err " << r.max_rel_err);
}

TEST_CASE("block residual norms") {
  Fixture f;
  auto batch = sample_batch(f.config, Mode::i2v, 3, 2);
  auto raw = block_residual_norms(f.params, batch, {100, 400, 700, 1000}, false);
  auto norm = block_residual_norms(f.params, batch, {100, 400, 700, 1000}, true);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto [lo, hi] = std::minmax_element(norm[i].begin(), norm[i].end());
    if (*std::max_element(raw[i].begin(), raw[i].end()) > *std::min_element(raw[i].begin(), raw[i].end())) {
      CHECK(*lo == 0.0);
      CHECK(*hi == 1.0);
    }
  }
}

TEST_CASE("RoPE rotation preserves per-head norms") {
  std::vector<double> q = {0.3, -1.2, 2.0, 0.7, -0.4, 0.9, 1.1, -2.2};
  DiTConfig c;
  for (std::size_t tok : {0u, 17u, 63u}) {
    std::vector<double> r = q;
    naive::rope(r, c, tok);
    double a = 0, b = 0;
    for (std::size_t i = 0; i < q.size(); ++i) a += q[i] * q[i], b += r[i] * r[i];
    CHECK(std::abs(a - b) <= 1e-9);
  }
  std::vector<double> cs = {std::cos(0.4), std::cos(2.0)}, sn = {std::sin(0.4), std::sin(2.0)};
  Tensor x({1, 4}, {1, 2, 3, 4});
  Tensor y = rotate_pairs(x, Tensor({1, 2}, cs), Tensor({1, 2}, sn));
  CHECK(std::abs(mean_square(y).item() - mean_square(x).item()) <= 1e-12);
}

TEST_CASE("sinusoidal embedding") {
  auto e = sinusoidal_embedding(0.0, 8);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(e[2 * k] == 0.0);
    CHECK(e[2 * k + 1] == 1.0);
  }
  CHECK_THROWS_AS(sinusoidal_embedding(1.0, 7), ConfigError);
}
