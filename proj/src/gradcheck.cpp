#include "pare/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pare/error.h"
#include "pare/ops.h"
#include "pare/rng.h"
#include "pare/tape.h"

namespace pare {
namespace {

double evaluate(const MultiScalarFn& f, const std::vector<Tensor>& inputs) {
  Tensor y = f(inputs);
  if (y.numel() != 1) {
    throw ContractError("grad_check: function must be scalar-valued, got " + shape_str(y.shape()));
  }
  const double v = y[0];
  if (!std::isfinite(v)) throw EvaluationError("grad_check: non-finite function value");
  return v;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, double step, double tol) {
  return grad_check([&f](const std::vector<Tensor>& in) { return f(in[0]); }, {x}, step, tol);
}

GradCheckReport grad_check(const MultiScalarFn& f, const std::vector<Tensor>& inputs,
                           double step, double tol, std::size_t max_coords_per_input,
                           std::uint64_t seed) {
  std::vector<Tensor> frozen;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Tensor> watched;
    for (const Tensor& t : inputs) watched.push_back(tape.watch(t));
    Tensor y;
    {
      StopGradientReplay rec(StopGradientReplay::Mode::record, &frozen);
      y = f(watched);
    }
    if (y.numel() != 1) {
      throw ContractError("grad_check: function must be scalar-valued, got " +
                          shape_str(y.shape()));
    }
    if (!std::isfinite(y[0])) throw EvaluationError("grad_check: non-finite function value");
    if (y.tracked()) {
      Gradients g = tape.backward(y);
      for (const Tensor& w : watched) analytic.push_back(g.of(w));
    } else {
      for (const Tensor& t : inputs) analytic.push_back(Tensor(t.shape()));
    }
  }

  GradCheckReport report;
  Rng rng(seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> coords(inputs[k].numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords_per_input > 0 && coords.size() > max_coords_per_input) {
      for (std::size_t i = coords.size() - 1; i > 0; --i) std::swap(coords[i], coords[rng.index(i + 1)]);
      coords.resize(max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t idx : coords) {
      std::vector<Tensor> probe = inputs;
      std::vector<double> buf = inputs[k].to_vector();
      const double base = buf[idx];
      buf[idx] = base + step;
      probe[k] = Tensor(inputs[k].shape(), buf);
      double plus, minus;
      {
        StopGradientReplay replay(StopGradientReplay::Mode::replay, &frozen);
        plus = evaluate(f, probe);
      }
      buf[idx] = base - step;
      probe[k] = Tensor(inputs[k].shape(), buf);
      {
        StopGradientReplay replay(StopGradientReplay::Mode::replay, &frozen);
        minus = evaluate(f, probe);
      }
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[k][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel >= report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_input = k;
        report.worst_index = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace pare
