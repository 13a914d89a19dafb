#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pare/datagen.h"
#include "pare/model.h"
#include "pare/router.h"

namespace pare {

struct LossWeights {
  double feat = 10.0;
  double tfm = 6.0;
  double dfm = 1.0;
  double temp = 4.0;

  static LossWeights for_mode(Mode mode);  // (10,6,1,4) I2V, (10,6,1,8) T2V
  void validate() const;
};

// Linear warmup 0 -> base over `warmup` steps, then cosine decay to 0 at `horizon`.
double lr_schedule(std::size_t step, double base_lr, std::size_t warmup, std::size_t horizon);

struct LrSchedule {
  double base_lr = 3e-5;
  std::size_t warmup = 30;
  std::size_t horizon = 300;

  double at(std::size_t step) const { return lr_schedule(step, base_lr, warmup, horizon); }
};

class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  Adam() = default;
  explicit Adam(const std::vector<Tensor>& params);

  // Returns the updated parameters.
  std::vector<Tensor> update(const std::vector<Tensor>& params,
                             const std::vector<std::vector<double>>& grads, double lr);

  std::size_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first() const { return m_; }
  const std::vector<std::vector<double>>& second() const { return v_; }
  void restore(std::size_t t, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Per-token L2 norms of [tokens, d] features; a token is an outlier when its
// norm exceeds mean + 3·std (population) of the sample's norms.
std::vector<bool> non_outlier_tokens(const Tensor& teacher_feature);

struct FeatureLoss {
  Tensor loss;                   // scalar
  std::size_t blocks_used = 0;   // 0 -> loss is a constant zero
  std::size_t tokens_dropped = 0;
};

// Block i's feature is its output hidden state, hidden[i + 1]. With
// `active_mask`, sampled blocks whose mask is <= 0.5 are dropped first.
FeatureLoss feature_loss(const std::vector<Tensor>& teacher_hidden,
                         const std::vector<Tensor>& student_hidden,
                         const std::vector<std::size_t>& sampled_blocks,
                         const std::vector<double>* active_mask = nullptr);

Tensor tfm_loss(const Tensor& v_student, const Tensor& v_teacher);
Tensor dfm_loss(const Tensor& v_student, const Tensor& x0, const Tensor& eps);
// Differences along the leading (slice) axis.
Tensor slice_differences(const Tensor& v);
Tensor temp_loss(const Tensor& v_student, const Tensor& v_teacher);

struct Objective {
  Tensor total, feat, tfm, dfm, temp;  // scalars, batch means
  std::vector<int> mask_k;              // routed runs: Σ hard per sample
  std::size_t empty_feature_samples = 0;
};

// Weighted distillation objective for one batch. Routed (training-mode STE)
// when `router` is given, full student otherwise.
Objective distill_objective(const DiTParams& teacher, const DiTParams& student,
                            const RouterParams* router, const std::vector<FlowSample>& batch,
                            const std::vector<std::size_t>& sampled_blocks,
                            const LossWeights& weights);

struct TrainOptions {
  Mode mode = Mode::i2v;
  LossWeights weights;
  LrSchedule student_lr{3e-4, 30, 300};
  LrSchedule router_lr{5e-4, 30, 300};
  std::size_t batch_size = 4;
  std::size_t sampled_blocks = 2;
  std::uint64_t seed = 0;
  double max_grad_norm = 0.0;  // 0 disables clipping
};

struct TrainState {
  DiTParams student;
  std::optional<RouterParams> router;
  Adam student_opt;
  Adam router_opt;
  std::size_t step = 0;
  bool from_stage1 = false;  // Stage II provenance marker
  std::vector<double> loss_history;
};

TrainState make_train_state(DiTParams student, std::optional<RouterParams> router = std::nullopt,
                            bool from_stage1 = false);

struct StepReport {
  std::size_t step = 0;
  double lr_student = 0.0;
  double lr_router = 0.0;
  double total = 0.0, feat = 0.0, tfm = 0.0, dfm = 0.0, temp = 0.0;
  std::optional<double> mask_mean_k;
  std::vector<int> mask_k;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

// Blocks sampled uniformly without replacement for the feature loss at `step`.
std::vector<std::size_t> sample_feature_blocks(std::size_t n_blocks, std::size_t count,
                                               std::uint64_t seed, std::size_t step);

std::vector<FlowSample> training_batch(const DiTConfig& config, const TrainOptions& options,
                                       std::size_t step);

StepReport stage1_step(TrainState& state, const DiTParams& teacher,
                       const std::vector<FlowSample>& batch, const TrainOptions& options);
StepReport stage2_step(TrainState& state, const DiTParams& teacher,
                       const std::vector<FlowSample>& batch, const TrainOptions& options);

// Plain flow-matching training step for the teacher.
StepReport teacher_step(TrainState& state, const std::vector<FlowSample>& batch,
                        const TrainOptions& options);

// Mean of the first / last `window` entries.
double smoothed_initial(const std::vector<double>& history, std::size_t window = 10);
double smoothed_final(const std::vector<double>& history, std::size_t window = 10);

// Mean-square difference between two models' velocities over `samples`
// (the second model optionally routed, inference mode).
double output_mse(const DiTParams& reference, const DiTParams& model,
                  const std::vector<FlowSample>& samples, const RouterParams* router = nullptr);

}  // namespace pare
