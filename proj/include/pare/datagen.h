#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pare/model.h"

namespace pare {

enum class Mode { t2v, i2v };

Mode parse_mode(const std::string& name);
std::string mode_name(Mode mode);

struct LatentClip {
  Tensor x0;  // [F_l, H, W, C], values within [-3, 3]
  double motion_level = 0.0;
  std::uint64_t seed = 0;
};

// Sum of 2-4 Gaussian blobs sharing one drift direction. Slice f is displaced
// by motion_level * speed * (f - (F_l - 1)/2) cells, so motion_level = 0
// gives identical slices.
LatentClip gen_latent_clip(const DiTConfig& config, std::uint64_t seed, double motion_level);

// Text tokens are unit vectors drawn from `seed`. In I2V mode the image
// embedding is a fixed random projection of the clip's first slice,
// normalized to unit length.
Condition gen_condition(const DiTConfig& config, std::uint64_t seed, Mode mode,
                        const LatentClip* clip = nullptr);

Tensor gen_noise(const DiTConfig& config, std::uint64_t seed);

struct CalibrationSample {
  LatentClip clip;
  Condition cond;
  Tensor eps;
};

struct CalibrationSet {
  std::vector<CalibrationSample> samples;
  std::vector<int> t_bins;
  std::uint64_t seed = 0;
};

// Bin centers of n_bins equal partitions of [0, T], rounded half-up.
std::vector<int> timestep_bin_centers(std::size_t n_bins, int t_max);

// Motion levels on the uniform grid {0, 1/(n-1), ..., 1}.
CalibrationSet build_calibration_set(const DiTConfig& config, std::size_t n_samples,
                                     std::size_t n_bins, std::uint64_t seed, Mode mode);

// Training batch: random clip/motion/condition/noise and t uniform in [0, T].
std::vector<FlowSample> sample_batch(const DiTConfig& config, Mode mode, std::uint64_t seed,
                                     std::size_t batch_size);

// Fixed evaluation set: motion levels on a grid, t on `t_grid`, one sample per
// (clip, t) pair.
std::vector<FlowSample> heldout_set(const DiTConfig& config, Mode mode, std::uint64_t seed,
                                    std::size_t n_clips, const std::vector<int>& t_grid);

double mean_interslice_difference(const LatentClip& clip);

}  // namespace pare
