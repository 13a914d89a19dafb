#include "pare/datagen.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pare/error.h"
#include "pare/rng.h"

namespace pare {
namespace {

constexpr std::uint64_t kImageProjectionSeed = 0x1D2C3B4A59687766ULL;

std::vector<double> unit_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

}  // namespace

Mode parse_mode(const std::string& name) {
  if (name == "t2v") return Mode::t2v;
  if (name == "i2v") return Mode::i2v;
  throw ConfigError("unknown mode '" + name + "' (expected t2v or i2v)");
}

std::string mode_name(Mode mode) { return mode == Mode::t2v ? "t2v" : "i2v"; }

LatentClip gen_latent_clip(const DiTConfig& c, std::uint64_t seed, double motion_level) {
  if (!(motion_level >= 0.0 && motion_level <= 1.0)) {
    throw ContractError("gen_latent_clip: motion_level must be in [0, 1]");
  }
  Rng rng(mix_seed(seed, 1));
  const std::size_t n_blobs = 2 + rng.index(3);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double speed = rng.uniform(0.5, 1.0);
  struct Blob {
    double cy, cx, width;
    std::vector<double> amp;
  };
  std::vector<Blob> blobs(n_blobs);
  for (Blob& b : blobs) {
    b.cy = rng.uniform(0.0, static_cast<double>(c.spatial_h));
    b.cx = rng.uniform(0.0, static_cast<double>(c.spatial_w));
    b.width = rng.uniform(0.8, 1.6);
    b.amp.resize(c.channels);
    for (double& a : b.amp) a = rng.normal() * 0.9;
  }

  const std::size_t F = c.temporal_slices, H = c.spatial_h, W = c.spatial_w, C = c.channels;
  std::vector<double> x(F * H * W * C, 0.0);
  for (std::size_t f = 0; f < F; ++f) {
    const double offset = motion_level * speed * (static_cast<double>(f) - 0.5 * (F - 1.0));
    const double dy = offset * std::sin(angle), dx = offset * std::cos(angle);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) {
        double* px = x.data() + ((f * H + y) * W + xx) * C;
        for (const Blob& b : blobs) {
          const double ry = static_cast<double>(y) - (b.cy + dy);
          const double rx = static_cast<double>(xx) - (b.cx + dx);
          const double g = std::exp(-(ry * ry + rx * rx) / (2.0 * b.width * b.width));
          for (std::size_t ch = 0; ch < C; ++ch) px[ch] += b.amp[ch] * g;
        }
        for (std::size_t ch = 0; ch < C; ++ch) px[ch] = std::clamp(px[ch], -3.0, 3.0);
      }
    }
  }
  return {Tensor(c.latent_shape(), std::move(x)), motion_level, seed};
}

Condition gen_condition(const DiTConfig& c, std::uint64_t seed, Mode mode,
                        const LatentClip* clip) {
  Rng rng(mix_seed(seed, 2));
  std::vector<double> text;
  for (std::size_t i = 0; i < c.cond_text_len; ++i) {
    auto v = unit_vector(rng, c.cond_dim);
    text.insert(text.end(), v.begin(), v.end());
  }
  Condition cond{Tensor({c.cond_text_len, c.cond_dim}, std::move(text)), std::nullopt};
  if (mode == Mode::i2v) {
    if (!clip) throw ContractError("gen_condition: I2V mode needs the paired clip");
    const std::size_t slice = c.spatial_tokens() * c.channels;
    Rng proj(kImageProjectionSeed);
    auto x = clip->x0.data();
    std::vector<double> e(c.cond_dim, 0.0);
    const double s = 1.0 / std::sqrt(static_cast<double>(slice));
    for (std::size_t r = 0; r < c.cond_dim; ++r) {
      for (std::size_t k = 0; k < slice; ++k) e[r] += proj.normal() * s * x[k];
    }
    double n2 = 0.0;
    for (double v : e) n2 += v * v;
    if (n2 == 0.0) {
      e.assign(c.cond_dim, 0.0);
      e[0] = 1.0;
    } else {
      for (double& v : e) v /= std::sqrt(n2);
    }
    cond.image = Tensor({1, c.cond_dim}, std::move(e));
  }
  return cond;
}

Tensor gen_noise(const DiTConfig& c, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 3));
  std::vector<double> v(shape_numel(c.latent_shape()));
  for (double& x : v) x = rng.normal();
  return Tensor(c.latent_shape(), std::move(v));
}

std::vector<int> timestep_bin_centers(std::size_t n_bins, int t_max) {
  if (n_bins < 1 || n_bins > static_cast<std::size_t>(t_max)) {
    throw ContractError("timestep bins: need 1 <= n_bins <= T");
  }
  std::vector<int> out;
  for (std::size_t k = 0; k < n_bins; ++k) {
    // round((k + 1/2) * T / n) in integer arithmetic, half-up
    const long long num = static_cast<long long>(2 * k + 1) * t_max;
    const long long den = 2LL * static_cast<long long>(n_bins);
    out.push_back(std::max(1, static_cast<int>((2 * num + den) / (2 * den))));
  }
  return out;
}

CalibrationSet build_calibration_set(const DiTConfig& c, std::size_t n_samples,
                                     std::size_t n_bins, std::uint64_t seed, Mode mode) {
  if (n_samples < 1) throw ContractError("calibration set needs at least one sample");
  CalibrationSet set;
  set.seed = seed;
  set.t_bins = timestep_bin_centers(n_bins, c.t_max);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const double motion =
        n_samples == 1 ? 0.0 : static_cast<double>(s) / static_cast<double>(n_samples - 1);
    const std::uint64_t sseed = mix_seed(seed, 1000 + s);
    LatentClip clip = gen_latent_clip(c, sseed, motion);
    Condition cond = gen_condition(c, sseed, mode, &clip);
    Tensor eps = gen_noise(c, sseed);
    set.samples.push_back({std::move(clip), std::move(cond), std::move(eps)});
  }
  return set;
}

std::vector<FlowSample> sample_batch(const DiTConfig& c, Mode mode, std::uint64_t seed,
                                     std::size_t batch_size) {
  Rng rng(mix_seed(seed, 4));
  std::vector<FlowSample> out;
  for (std::size_t s = 0; s < batch_size; ++s) {
    const std::uint64_t sseed = rng.next();
    const double motion = rng.uniform();
    const int t = static_cast<int>(rng.index(static_cast<std::size_t>(c.t_max) + 1));
    LatentClip clip = gen_latent_clip(c, sseed, motion);
    Condition cond = gen_condition(c, sseed, mode, &clip);
    out.push_back({clip.x0, gen_noise(c, sseed), t, std::move(cond), motion});
  }
  return out;
}

std::vector<FlowSample> heldout_set(const DiTConfig& c, Mode mode, std::uint64_t seed,
                                    std::size_t n_clips, const std::vector<int>& t_grid) {
  std::vector<FlowSample> out;
  for (std::size_t k = 0; k < n_clips; ++k) {
    const double motion = n_clips == 1 ? 0.5 : static_cast<double>(k) / (n_clips - 1.0);
    const std::uint64_t sseed = mix_seed(seed, 5000 + k);
    LatentClip clip = gen_latent_clip(c, sseed, motion);
    Condition cond = gen_condition(c, sseed, mode, &clip);
    Tensor eps = gen_noise(c, sseed);
    for (int t : t_grid) out.push_back({clip.x0, eps, t, cond, motion});
  }
  return out;
}

double mean_interslice_difference(const LatentClip& clip) {
  const std::size_t F = clip.x0.dim(0);
  if (F < 2) return 0.0;
  const std::size_t slice = clip.x0.numel() / F;
  auto x = clip.x0.data();
  double total = 0.0;
  for (std::size_t f = 0; f + 1 < F; ++f) {
    double acc = 0.0;
    for (std::size_t k = 0; k < slice; ++k) {
      const double dlt = x[(f + 1) * slice + k] - x[f * slice + k];
      acc += dlt * dlt;
    }
    total += std::sqrt(acc);
  }
  return total / static_cast<double>(F - 1);
}

}  // namespace pare
