#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "pare/tensor.h"

namespace pare {

// Differentiable primitives. Every op records a backward rule on the active
// tape when at least one input is tracked on it; otherwise it is a plain
// evaluation. Only leading-row broadcasting is supported (add_bias, mul_rows).

Tensor matmul(const Tensor& a, const Tensor& b);    // [m,k]x[k,n]
Tensor linear(const Tensor& x, const Tensor& w);    // x·wᵀ, [m,k]x[n,k] -> [m,n]
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor add_bias(const Tensor& x, const Tensor& bias);  // [m,n] + [n]
Tensor mul_rows(const Tensor& x, const Tensor& v);     // [m,n] * [n], per row
Tensor scale_by(const Tensor& x, const Tensor& s);     // x * s, s single element

Tensor softmax_lastdim(const Tensor& x);

enum class ActivationKind { silu, sigmoid };
ActivationKind parse_activation(std::string_view name);
Tensor activation(ActivationKind kind, const Tensor& x);
inline Tensor silu(const Tensor& x) { return activation(ActivationKind::silu, x); }
inline Tensor sigmoid(const Tensor& x) { return activation(ActivationKind::sigmoid, x); }

// Row-wise root-mean-square normalization without gain.
Tensor rms_norm(const Tensor& x, double eps = 1e-6);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);
Tensor element(const Tensor& x, std::size_t index);  // -> scalar

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_square(const Tensor& x);

// Pairwise rotation of adjacent columns: (x0,x1) -> (x0 c - x1 s, x0 s + x1 c).
// cos/sin are [rows, cols/2].
Tensor rotate_pairs(const Tensor& x, const Tensor& cos, const Tensor& sin);

// sg(x): forward identity, zero gradient upstream. Recorded on the tape as a
// stop marker.
Tensor stop_gradient(const Tensor& x);

// Counts multiply-accumulates of matmul/linear forward evaluations on this
// thread while alive. Nested counters all accumulate.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const noexcept { return count_; }

 private:
  friend void count_macs(std::uint64_t);
  std::uint64_t count_ = 0;
  MacCounter* previous_;
};

void count_macs(std::uint64_t macs);

// Used by the gradient checker: in record mode every stop_gradient output is
// captured; in replay mode stop_gradient returns the captured values in order,
// so finite differences evaluate the same analytic path.
class StopGradientReplay {
 public:
  enum class Mode { record, replay };
  explicit StopGradientReplay(Mode mode, std::vector<Tensor>* values);
  ~StopGradientReplay();
  StopGradientReplay(const StopGradientReplay&) = delete;
  StopGradientReplay& operator=(const StopGradientReplay&) = delete;

  static StopGradientReplay* current() noexcept;
  Tensor intercept(const Tensor& value);

 private:
  Mode mode_;
  std::vector<Tensor>* values_;
  std::size_t cursor_ = 0;
  StopGradientReplay* previous_;
};

}  // namespace pare
