#include "pare/distill.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pare/error.h"
#include "pare/ops.h"
#include "pare/params.h"
#include "pare/rng.h"
#include "pare/tape.h"

namespace pare {
namespace {

constexpr std::uint64_t kBatchStream = 0xBA7C;
constexpr std::uint64_t kBlockStream = 0xB10C;

struct Watched {
  std::vector<Tensor> leaves;
};

template <class P>
Watched watch_all(Tape& tape, P& params) {
  Watched w;
  params.for_each([&](const std::string&, Tensor& t) {
    t = tape.watch(t);
    w.leaves.push_back(t);
  });
  return w;
}

std::vector<std::vector<double>> collect(const Gradients& g, const Watched& w) {
  std::vector<std::vector<double>> out;
  out.reserve(w.leaves.size());
  for (const Tensor& leaf : w.leaves) out.push_back(g.of(leaf).to_vector());
  return out;
}

double squared_norm(const std::vector<std::vector<double>>& g) {
  double acc = 0.0;
  for (const auto& v : g)
    for (double x : v) acc += x * x;
  return acc;
}

void scale_grads(std::vector<std::vector<double>>& g, double f) {
  for (auto& v : g)
    for (double& x : v) x *= f;
}

template <class P>
void apply_update(P& params, Adam& opt, const std::vector<std::vector<double>>& grads,
                  double lr) {
  auto current = parameter_list(params);
  for (Tensor& t : current) t = t.detached();
  assign_parameters(params, opt.update(current, grads, lr));
}

void fill_report(StepReport& r, const Objective& o) {
  r.total = o.total.item();
  r.feat = o.feat.item();
  r.tfm = o.tfm.item();
  r.dfm = o.dfm.item();
  r.temp = o.temp.item();
}

}  // namespace

LossWeights LossWeights::for_mode(Mode mode) {
  LossWeights w;
  w.temp = mode == Mode::t2v ? 8.0 : 4.0;
  return w;
}

void LossWeights::validate() const {
  for (double v : {feat, tfm, dfm, temp}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and >= 0");
  }
}

double lr_schedule(std::size_t step, double base_lr, std::size_t warmup, std::size_t horizon) {
  if (warmup >= horizon) throw ConfigError("lr schedule: warmup must be below horizon");
  if (step >= horizon) return 0.0;
  if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(horizon - warmup);
  return 0.5 * base_lr * (1.0 + std::cos(M_PI * progress));
}

Adam::Adam(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

std::vector<Tensor> Adam::update(const std::vector<Tensor>& params,
                                 const std::vector<std::vector<double>>& grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw DimensionError("Adam: parameter count changed since construction");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    const auto& g = grads[i];
    if (g.size() != p.size() || m_[i].size() != p.size()) {
      throw DimensionError("Adam: gradient size mismatch for parameter " + std::to_string(i));
    }
    std::vector<double> next(p.begin(), p.end());
    for (std::size_t k = 0; k < next.size(); ++k) {
      m_[i][k] = kBeta1 * m_[i][k] + (1.0 - kBeta1) * g[k];
      v_[i][k] = kBeta2 * v_[i][k] + (1.0 - kBeta2) * g[k] * g[k];
      next[k] -= lr * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + kEps);
    }
    out.emplace_back(params[i].shape(), std::move(next));
  }
  return out;
}

void Adam::restore(std::size_t t, std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) {
    throw DimensionError("Adam::restore: moment count mismatch");
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size()) {
      throw DimensionError("Adam::restore: moment size mismatch");
    }
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

std::vector<bool> non_outlier_tokens(const Tensor& f) {
  if (f.rank() != 2) throw DimensionError("non_outlier_tokens: expected [tokens, d]");
  const std::size_t n = f.dim(0), d = f.dim(1);
  auto x = f.data();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += x[i * d + c] * x[i * d + c];
    norms[i] = std::sqrt(acc);
  }
  const double mean = std::accumulate(norms.begin(), norms.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : norms) var += (v - mean) * (v - mean);
  const double limit = mean + 3.0 * std::sqrt(var / static_cast<double>(n));
  std::vector<bool> keep(n);
  for (std::size_t i = 0; i < n; ++i) keep[i] = norms[i] <= limit;
  return keep;
}

FeatureLoss feature_loss(const std::vector<Tensor>& teacher_hidden,
                         const std::vector<Tensor>& student_hidden,
                         const std::vector<std::size_t>& sampled_blocks,
                         const std::vector<double>* active_mask) {
  if (sampled_blocks.empty()) throw ContractError("feature_loss: no sampled blocks");
  if (teacher_hidden.size() != student_hidden.size()) {
    throw DimensionError("feature_loss: teacher and student depth differ");
  }
  FeatureLoss out;
  Tensor acc;
  for (std::size_t i : sampled_blocks) {
    if (i + 1 >= teacher_hidden.size()) throw ContractError("feature_loss: block out of range");
    if (active_mask && (*active_mask)[i] <= 0.5) continue;
    const Tensor target = stop_gradient(teacher_hidden[i + 1]);
    const Tensor& s = student_hidden[i + 1];
    if (s.shape() != target.shape()) {
      throw DimensionError("feature_loss: feature shapes " + shape_str(s.shape()) + " vs " +
                           shape_str(target.shape()));
    }
    const std::vector<bool> keep = non_outlier_tokens(target);
    std::vector<std::size_t> rows;
    for (std::size_t k = 0; k < keep.size(); ++k)
      if (keep[k]) rows.push_back(k);
    Tensor diff = rows.size() == keep.size()
                      ? sub(s, target)
                      : sub(gather_rows(s, rows), gather_rows(target, rows));
    out.tokens_dropped += keep.size() - rows.size();
    Tensor l = mean_square(diff);
    acc = out.blocks_used == 0 ? l : add(acc, l);
    ++out.blocks_used;
  }
  out.loss = out.blocks_used == 0 ? Tensor::scalar(0.0)
                                  : scale(acc, 1.0 / static_cast<double>(out.blocks_used));
  return out;
}

Tensor tfm_loss(const Tensor& v_student, const Tensor& v_teacher) {
  return mean_square(sub(v_student, stop_gradient(v_teacher)));
}

Tensor dfm_loss(const Tensor& v_student, const Tensor& x0, const Tensor& eps) {
  return mean_square(sub(v_student, sub(eps, x0)));
}

Tensor slice_differences(const Tensor& v) {
  if (v.rank() < 1 || v.dim(0) < 2) throw DimensionError("slice_differences: need >= 2 slices");
  const std::size_t f = v.dim(0);
  Tensor rows = reshape(v, {f, v.numel() / f});
  return sub(slice_rows(rows, 1, f - 1), slice_rows(rows, 0, f - 1));
}

Tensor temp_loss(const Tensor& v_student, const Tensor& v_teacher) {
  if (v_student.shape() != v_teacher.shape()) throw DimensionError("temp_loss: shape mismatch");
  if (v_student.dim(0) < 2) return Tensor::scalar(0.0);
  return mean_square(
      sub(slice_differences(v_student), stop_gradient(slice_differences(v_teacher))));
}

Objective distill_objective(const DiTParams& teacher, const DiTParams& student,
                            const RouterParams* router, const std::vector<FlowSample>& batch,
                            const std::vector<std::size_t>& sampled_blocks,
                            const LossWeights& w) {
  if (batch.empty()) throw ContractError("distill_objective: empty batch");
  w.validate();
  Objective o;
  Tensor feat, tfm, dfm, temp;
  const int t_max = teacher.config.t_max;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const FlowSample& b = batch[s];
    Tensor x_t = forward_process(b.x0, b.eps, b.t, t_max);
    ForwardResult tr = dit_forward(teacher, x_t, b.t, b.cond);
    ForwardResult sr;
    FeatureLoss fl;
    if (router) {
      RoutedResult rr = routed_forward(student, *router, x_t, b.t, b.cond, RouteMode::training);
      o.mask_k.push_back(static_cast<int>(
          std::accumulate(rr.mask.hard.begin(), rr.mask.hard.end(), 0.0)));
      fl = feature_loss(tr.hidden, rr.forward.hidden, sampled_blocks, &rr.mask.hard);
      sr = std::move(rr.forward);
    } else {
      sr = dit_forward(student, x_t, b.t, b.cond);
      fl = feature_loss(tr.hidden, sr.hidden, sampled_blocks);
    }
    if (fl.blocks_used == 0) ++o.empty_feature_samples;
    Tensor lt = tfm_loss(sr.velocity, tr.velocity);
    Tensor ld = dfm_loss(sr.velocity, b.x0, b.eps);
    Tensor lp = temp_loss(sr.velocity, tr.velocity);
    if (s == 0) {
      feat = fl.loss, tfm = lt, dfm = ld, temp = lp;
    } else {
      feat = add(feat, fl.loss), tfm = add(tfm, lt), dfm = add(dfm, ld), temp = add(temp, lp);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  o.feat = scale(feat, inv);
  o.tfm = scale(tfm, inv);
  o.dfm = scale(dfm, inv);
  o.temp = scale(temp, inv);
  o.total = add(add(scale(o.feat, w.feat), scale(o.tfm, w.tfm)),
                add(scale(o.dfm, w.dfm), scale(o.temp, w.temp)));
  return o;
}

TrainState make_train_state(DiTParams student, std::optional<RouterParams> router,
                            bool from_stage1) {
  TrainState s;
  s.student_opt = Adam(parameter_list(student));
  if (router) s.router_opt = Adam(parameter_list(*router));
  s.student = std::move(student);
  s.router = std::move(router);
  s.from_stage1 = from_stage1;
  return s;
}

nlohmann::json StepReport::to_json() const {
  nlohmann::json j = {{"step", step},          {"lr_student", lr_student},
                      {"lr_router", lr_router}, {"loss_total", total},
                      {"loss_feat", feat},      {"loss_tfm", tfm},
                      {"loss_dfm", dfm},        {"loss_temp", temp},
                      {"mask_mean_K", nullptr}};
  if (mask_mean_k) j["mask_mean_K"] = *mask_mean_k;
  if (!warnings.empty()) j["warnings"] = warnings;
  return j;
}

std::vector<std::size_t> sample_feature_blocks(std::size_t n_blocks, std::size_t count,
                                               std::uint64_t seed, std::size_t step) {
  if (count == 0 || count > n_blocks) throw ConfigError("sampled block count must be in [1, N]");
  Rng rng(mix_seed(mix_seed(seed, kBlockStream), step));
  std::vector<std::size_t> pool(n_blocks);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.index(n_blocks - i)]);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<FlowSample> training_batch(const DiTConfig& config, const TrainOptions& options,
                                       std::size_t step) {
  return sample_batch(config, options.mode, mix_seed(mix_seed(options.seed, kBatchStream), step),
                      options.batch_size);
}

namespace {

void clip(std::vector<std::vector<double>>& a, std::vector<std::vector<double>>* b, double cap) {
  if (cap <= 0.0) return;
  const double norm = std::sqrt(squared_norm(a) + (b ? squared_norm(*b) : 0.0));
  if (norm > cap) {
    scale_grads(a, cap / norm);
    if (b) scale_grads(*b, cap / norm);
  }
}

}  // namespace

StepReport stage1_step(TrainState& state, const DiTParams& teacher,
                       const std::vector<FlowSample>& batch, const TrainOptions& options) {
  if (state.router) throw ContractError("stage1_step: Stage I state must not carry a router");
  const auto blocks = sample_feature_blocks(state.student.blocks.size(), options.sampled_blocks,
                                            options.seed, state.step);
  std::vector<std::vector<double>> grads;
  StepReport r;
  {
    Tape tape;
    DiTParams tracked = state.student;
    Watched w = watch_all(tape, tracked);
    Objective o = distill_objective(teacher, tracked, nullptr, batch, blocks, options.weights);
    grads = collect(tape.backward(o.total), w);
    fill_report(r, o);
  }
  clip(grads, nullptr, options.max_grad_norm);
  r.step = ++state.step;
  r.lr_student = options.student_lr.at(r.step);
  apply_update(state.student, state.student_opt, grads, r.lr_student);
  state.loss_history.push_back(r.total);
  return r;
}

StepReport stage2_step(TrainState& state, const DiTParams& teacher,
                       const std::vector<FlowSample>& batch, const TrainOptions& options) {
  if (!state.router) throw ContractError("stage2_step: Stage II needs a router");
  StepReport r;
  if (!state.from_stage1) {
    r.warnings.push_back("student was not initialized from a Stage I checkpoint (raw pruned)");
  }
  const auto blocks = sample_feature_blocks(state.student.blocks.size(), options.sampled_blocks,
                                            options.seed, state.step);
  std::vector<std::vector<double>> gs, gr;
  {
    Tape tape;
    DiTParams student = state.student;
    RouterParams router = *state.router;
    Watched ws = watch_all(tape, student);
    Watched wr = watch_all(tape, router);
    Objective o = distill_objective(teacher, student, &router, batch, blocks, options.weights);
    Gradients g = tape.backward(o.total);
    gs = collect(g, ws);
    gr = collect(g, wr);
    fill_report(r, o);
    r.mask_k = o.mask_k;
    double k = 0.0;
    for (int v : o.mask_k) k += v;
    r.mask_mean_k = k / static_cast<double>(o.mask_k.size());
    if (o.empty_feature_samples > 0) {
      r.warnings.push_back(std::to_string(o.empty_feature_samples) +
                           " sample(s) had no active sampled block; feature loss was 0");
    }
  }
  clip(gs, &gr, options.max_grad_norm);
  r.step = ++state.step;
  r.lr_student = options.student_lr.at(r.step);
  r.lr_router = options.router_lr.at(r.step);
  apply_update(state.student, state.student_opt, gs, r.lr_student);
  apply_update(*state.router, state.router_opt, gr, r.lr_router);
  state.loss_history.push_back(r.total);
  return r;
}

StepReport teacher_step(TrainState& state, const std::vector<FlowSample>& batch,
                        const TrainOptions& options) {
  std::vector<std::vector<double>> grads;
  StepReport r;
  {
    Tape tape;
    DiTParams tracked = state.student;
    Watched w = watch_all(tape, tracked);
    Tensor loss = flow_matching_loss(tracked, batch);
    grads = collect(tape.backward(loss), w);
    r.total = r.dfm = loss.item();
  }
  clip(grads, nullptr, options.max_grad_norm);
  r.step = ++state.step;
  r.lr_student = options.student_lr.at(r.step);
  apply_update(state.student, state.student_opt, grads, r.lr_student);
  state.loss_history.push_back(r.total);
  return r;
}

double smoothed_initial(const std::vector<double>& h, std::size_t window) {
  if (h.empty()) throw ContractError("smoothed_initial: empty history");
  const std::size_t n = std::min(window, h.size());
  return std::accumulate(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(n), 0.0) /
         static_cast<double>(n);
}

double smoothed_final(const std::vector<double>& h, std::size_t window) {
  if (h.empty()) throw ContractError("smoothed_final: empty history");
  const std::size_t n = std::min(window, h.size());
  return std::accumulate(h.end() - static_cast<std::ptrdiff_t>(n), h.end(), 0.0) /
         static_cast<double>(n);
}

double output_mse(const DiTParams& reference, const DiTParams& model,
                  const std::vector<FlowSample>& samples, const RouterParams* router) {
  if (samples.empty()) throw ContractError("output_mse: no samples");
  double acc = 0.0;
  for (const FlowSample& s : samples) {
    Tensor x_t = forward_process(s.x0, s.eps, s.t, reference.config.t_max);
    Tensor a = dit_forward(reference, x_t, s.t, s.cond).velocity;
    Tensor b = router ? routed_forward(model, *router, x_t, s.t, s.cond, RouteMode::inference)
                            .forward.velocity
                      : dit_forward(model, x_t, s.t, s.cond).velocity;
    acc += mean_square(sub(b, a)).item();
  }
  return acc / static_cast<double>(samples.size());
}

}  // namespace pare
