#include "pare/ops.h"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <utility>

#include "pare/error.h"
#include "pare/tape.h"

namespace pare {
namespace {

using GradBuffer = Tape::GradBuffer;
using GradInputs = std::span<GradBuffer* const>;

thread_local MacCounter* g_mac_counter = nullptr;
thread_local StopGradientReplay* g_replay = nullptr;

Tape* tracking_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->tracked() && t->node().tape == tape->serial()) return tape;
  }
  return nullptr;
}

Tensor attach(Tape* tape, Tensor out, std::initializer_list<const Tensor*> inputs,
              Tape::BackwardFn fn) {
  std::vector<NodeRef> refs;
  refs.reserve(inputs.size());
  for (const Tensor* t : inputs) refs.push_back(t->node());
  out.set_node(tape->record(out.shape(), std::move(refs), std::move(fn)));
  return out;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::size_t last_extent(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(a, bt.data(), c, m, k, n);
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  std::vector<double> out(x.numel());
  auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(d[i]);
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> c(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), c.data(), m, k, n);
  count_macs(static_cast<std::uint64_t>(m) * k * n);
  Tensor out({m, n}, std::move(c));
  Tape* tape = tracking_tape({&a, &b});
  if (!tape) return out;
  return attach(tape, std::move(out), {&a, &b}, [a, b, m, k, n](auto g, GradInputs in) {
    if (in[0]) gemm_nt(g.data(), b.data().data(), in[0]->data(), m, n, k);
    if (in[1]) gemm_tn(a.data().data(), g.data(), in[1]->data(), m, k, n);
  });
}

Tensor linear(const Tensor& x, const Tensor& w) {
  require_rank2(x, "linear");
  require_rank2(w, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(0);
  if (w.dim(1) != k) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  std::vector<double> c(m * n, 0.0);
  gemm_nt(x.data().data(), w.data().data(), c.data(), m, k, n);
  count_macs(static_cast<std::uint64_t>(m) * k * n);
  Tensor out({m, n}, std::move(c));
  Tape* tape = tracking_tape({&x, &w});
  if (!tape) return out;
  return attach(tape, std::move(out), {&x, &w}, [x, w, m, k, n](auto g, GradInputs in) {
    if (in[0]) gemm_nn(g.data(), w.data().data(), in[0]->data(), m, n, k);
    if (in[1]) gemm_tn(g.data(), x.data().data(), in[1]->data(), m, n, k);
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto d = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = d[i * n + j];
  Tensor t({n, m}, std::move(out));
  Tape* tape = tracking_tape({&a});
  if (!tape) return t;
  return attach(tape, std::move(t), {&a}, [m, n](auto g, GradInputs in) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*in[0])[i * n + j] += g[j * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  Tensor t(a.shape(), std::move(out));
  Tape* tape = tracking_tape({&a, &b});
  if (!tape) return t;
  return attach(tape, std::move(t), {&a, &b}, [](auto g, GradInputs in) {
    for (auto* buf : in) {
      if (!buf) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  Tensor t(a.shape(), std::move(out));
  Tape* tape = tracking_tape({&a, &b});
  if (!tape) return t;
  return attach(tape, std::move(t), {&a, &b}, [](auto g, GradInputs in) {
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
    if (in[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  Tensor t(a.shape(), std::move(out));
  Tape* tape = tracking_tape({&a, &b});
  if (!tape) return t;
  return attach(tape, std::move(t), {&a, &b}, [a, b](auto g, GradInputs in) {
    auto da = a.data(), db = b.data();
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * db[i];
    if (in[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * da[i];
  });
}

Tensor scale(const Tensor& x, double factor) {
  Tensor t = map_unary(x, [factor](double v) { return v * factor; });
  Tape* tape = tracking_tape({&x});
  if (!tape) return t;
  return attach(tape, std::move(t), {&x}, [factor](auto g, GradInputs in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * factor;
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  Tensor t = map_unary(x, [value](double v) { return v + value; });
  Tape* tape = tracking_tape({&x});
  if (!tape) return t;
  return attach(tape, std::move(t), {&x}, [](auto g, GradInputs in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = last_extent(x);
  if (bias.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
  }
  const std::size_t m = x.numel() / n;
  std::vector<double> out(x.numel());
  auto dx = x.data(), db = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = dx[i * n + j] + db[j];
  Tensor t(x.shape(), std::move(out));
  Tape* tape = tracking_tape({&x, &bias});
  if (!tape) return t;
  return attach(tape, std::move(t), {&x, &bias}, [m, n](auto g, GradInputs in) {
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
    if (in[1])
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*in[1])[j] += g[i * n + j];
  });
}

Tensor mul_rows(const Tensor& x, const Tensor& v) {
  const std::size_t n = last_extent(x);
  if (v.numel() != n) {
    throw DimensionError("mul_rows: vector " + shape_str(v.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
  }
  const std::size_t m = x.numel() / n;
  std::vector<double> out(x.numel());
  auto dx = x.data(), dv = v.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = dx[i * n + j] * dv[j];
  Tensor t(x.shape(), std::move(out));
  Tape* tape = tracking_tape({&x, &v});
  if (!tape) return t;
  return attach(tape, std::move(t), {&x, &v}, [x, v, m, n](auto g, GradInputs in) {
    auto dx = x.data(), dv = v.data();
    if (in[0])
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*in[0])[i * n + j] += g[i * n + j] * dv[j];
    if (in[1])
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*in[1])[j] += g[i * n + j] * dx[i * n + j];
  });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) {
    throw DimensionError("scale_by: factor must have one element, got " + shape_str(s.shape()));
  }
  const double f = s[0];
  Tensor t = map_unary(x, [f](double v) { return v * f; });
  Tape* tape = tracking_tape({&x, &s});
  if (!tape) return t;
  return attach(tape, std::move(t), {&x, &s}, [x, f](auto g, GradInputs in) {
    if (in[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * f;
    if (in[1]) {
      auto dx = x.data();
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * dx[i];
      (*in[1])[0] += acc;
    }
  });
}

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t n = last_extent(x);
  if (n == 0) throw DimensionError("softmax_lastdim: empty last extent");
  const std::size_t m = x.numel() / n;
  std::vector<double> out(x.numel());
  auto dx = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = dx.data() + i * n;
    double* o = out.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(row[j] - mx);
      z += o[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  Tensor y(x.shape(), std::move(out));
  Tape* tape = tracking_tape({&x});
  if (!tape) return y;
  return attach(tape, y, {&x}, [y, m, n](auto g, GradInputs in) {
    auto dy = y.data();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * dy[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        (*in[0])[i * n + j] += dy[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

ActivationKind parse_activation(std::string_view name) {
  if (name == "silu") return ActivationKind::silu;
  if (name == "sigmoid") return ActivationKind::sigmoid;
  throw ConfigError("unknown activation kind '" + std::string(name) + "'");
}

Tensor activation(ActivationKind kind, const Tensor& x) {
  Tensor y;
  switch (kind) {
    case ActivationKind::silu:
      y = map_unary(x, [](double v) { return v * stable_sigmoid(v); });
      break;
    case ActivationKind::sigmoid:
      y = map_unary(x, stable_sigmoid);
      break;
    default:
      throw ConfigError("unknown activation kind");
  }
  Tape* tape = tracking_tape({&x});
  if (!tape) return y;
  return attach(tape, y, {&x}, [x, kind](auto g, GradInputs in) {
    auto dx = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = stable_sigmoid(dx[i]);
      const double d = kind == ActivationKind::silu ? s + dx[i] * s * (1.0 - s) : s * (1.0 - s);
      (*in[0])[i] += g[i] * d;
    }
  });
}

Tensor rms_norm(const Tensor& x, double eps) {
  const std::size_t n = last_extent(x);
  const std::size_t m = x.numel() / n;
  std::vector<double> out(x.numel());
  std::vector<double> inv(m);
  auto dx = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    double ms = 0.0;
    for (std::size_t j = 0; j < n; ++j) ms += dx[i * n + j] * dx[i * n + j];
    ms /= static_cast<double>(n);
    inv[i] = 1.0 / std::sqrt(ms + eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = dx[i * n + j] * inv[i];
  }
  Tensor y(x.shape(), std::move(out));
  Tape* tape = tracking_tape({&x});
  if (!tape) return y;
  return attach(tape, y, {&x}, [x, inv = std::move(inv), m, n](auto g, GradInputs in) {
    auto dx = x.data();
    for (std::size_t i = 0; i < m; ++i) {
      double gx = 0.0;
      for (std::size_t j = 0; j < n; ++j) gx += g[i * n + j] * dx[i * n + j];
      const double r = inv[i];
      const double c = r * r * r * gx / static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j)
        (*in[0])[i * n + j] += r * g[i * n + j] - c * dx[i * n + j];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  }
  Tensor t(std::move(shape), x.to_vector());
  Tape* tape = tracking_tape({&x});
  if (!tape) return t;
  return attach(tape, std::move(t), {&x}, [](auto g, GradInputs in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank2(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (start + count > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_str(x.shape()));
  }
  std::vector<double> out(m * count);
  auto dx = x.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(dx.data() + i * n + start, count, out.data() + i * count);
  Tensor t({m, count}, std::move(out));
  Tape* tape = tracking_tape({&x});
  if (!tape) return t;
  return attach(tape, std::move(t), {&x}, [m, n, start, count](auto g, GradInputs in) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) (*in[0])[i * n + start + j] += g[i * count + j];
  });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank2(x, "slice_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (start + count > m) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_str(x.shape()));
  }
  auto dx = x.data();
  Tensor t({count, n}, std::vector<double>(dx.begin() + static_cast<std::ptrdiff_t>(start * n),
                                           dx.begin() + static_cast<std::ptrdiff_t>((start + count) * n)));
  Tape* tape = tracking_tape({&x});
  if (!tape) return t;
  return attach(tape, std::move(t), {&x}, [n, start](auto g, GradInputs in) {
    for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[start * n + i] += g[i];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    n += p.dim(1);
  }
  std::vector<double> out(m * n);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.dim(1);
    auto dp = p.data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(dp.data() + i * w, w, out.data() + i * n + off);
    off += w;
  }
  Tensor t({m, n}, std::move(out));
  Tape* tape = Tape::active();
  bool any = false;
  if (tape)
    for (const Tensor& p : parts) any |= p.tracked() && p.node().tape == tape->serial();
  if (!any) return t;
  std::vector<NodeRef> refs;
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) {
    refs.push_back(p.node());
    widths.push_back(p.dim(1));
  }
  t.set_node(tape->record(t.shape(), std::move(refs), [m, n, widths](auto g, GradInputs in) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::size_t w = widths[k];
      if (in[k])
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) (*in[k])[i * w + j] += g[i * n + off + j];
      off += w;
    }
  }));
  return t;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].dim(1);
  std::vector<double> out;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.dim(1) != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  const std::size_t m = out.size() / n;
  Tensor t({m, n}, std::move(out));
  Tape* tape = Tape::active();
  bool any = false;
  if (tape)
    for (const Tensor& p : parts) any |= p.tracked() && p.node().tape == tape->serial();
  if (!any) return t;
  std::vector<NodeRef> refs;
  std::vector<std::size_t> sizes;
  for (const Tensor& p : parts) {
    refs.push_back(p.node());
    sizes.push_back(p.numel());
  }
  t.set_node(tape->record(t.shape(), std::move(refs), [sizes](auto g, GradInputs in) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (in[k])
        for (std::size_t i = 0; i < sizes[k]; ++i) (*in[k])[i] += g[off + i];
      off += sizes[k];
    }
  }));
  return t;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  require_rank2(x, "gather_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(rows.size() * n);
  auto dx = x.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[r]) + " out of " +
                           shape_str(x.shape()));
    }
    std::copy_n(dx.data() + rows[r] * n, n, out.data() + r * n);
  }
  Tensor t({rows.size(), n}, std::move(out));
  Tape* tape = tracking_tape({&x});
  if (!tape) return t;
  return attach(tape, std::move(t), {&x}, [rows, n](auto g, GradInputs in) {
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) (*in[0])[rows[r] * n + j] += g[r * n + j];
  });
}

Tensor element(const Tensor& x, std::size_t index) {
  if (index >= x.numel()) {
    throw DimensionError("element: index " + std::to_string(index) + " out of " +
                         shape_str(x.shape()));
  }
  Tensor t = Tensor::scalar(x[index]);
  Tape* tape = tracking_tape({&x});
  if (!tape) return t;
  return attach(tape, std::move(t), {&x},
                [index](auto g, GradInputs in) { (*in[0])[index] += g[0]; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor t = Tensor::scalar(acc);
  Tape* tape = tracking_tape({&x});
  if (!tape) return t;
  return attach(tape, std::move(t), {&x}, [](auto g, GradInputs in) {
    for (double& v : *in[0]) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_square(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean_square of empty tensor");
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.data()) acc += v * v;
  Tensor t = Tensor::scalar(acc * inv_n);
  Tape* tape = tracking_tape({&x});
  if (!tape) return t;
  return attach(tape, std::move(t), {&x}, [x, inv_n](auto g, GradInputs in) {
    auto dx = x.data();
    const double c = 2.0 * inv_n * g[0];
    for (std::size_t i = 0; i < dx.size(); ++i) (*in[0])[i] += c * dx[i];
  });
}

Tensor rotate_pairs(const Tensor& x, const Tensor& cos, const Tensor& sin) {
  require_rank2(x, "rotate_pairs");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (n % 2 != 0 || cos.shape() != Shape{m, n / 2} || sin.shape() != cos.shape()) {
    throw DimensionError("rotate_pairs: input " + shape_str(x.shape()) + " with tables " +
                         shape_str(cos.shape()) + "/" + shape_str(sin.shape()));
  }
  const std::size_t h = n / 2;
  std::vector<double> out(m * n);
  auto dx = x.data(), dc = cos.data(), ds = sin.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < h; ++p) {
      const double x0 = dx[i * n + 2 * p], x1 = dx[i * n + 2 * p + 1];
      const double c = dc[i * h + p], s = ds[i * h + p];
      out[i * n + 2 * p] = x0 * c - x1 * s;
      out[i * n + 2 * p + 1] = x0 * s + x1 * c;
    }
  }
  Tensor t({m, n}, std::move(out));
  Tape* tape = tracking_tape({&x});
  if (!tape) return t;
  return attach(tape, std::move(t), {&x}, [cos, sin, m, n, h](auto g, GradInputs in) {
    auto dc = cos.data(), ds = sin.data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < h; ++p) {
        const double g0 = g[i * n + 2 * p], g1 = g[i * n + 2 * p + 1];
        const double c = dc[i * h + p], s = ds[i * h + p];
        (*in[0])[i * n + 2 * p] += g0 * c + g1 * s;
        (*in[0])[i * n + 2 * p + 1] += -g0 * s + g1 * c;
      }
    }
  });
}

Tensor stop_gradient(const Tensor& x) {
  Tensor value = g_replay ? g_replay->intercept(x) : x;
  Tensor t = value.detached();
  Tape* tape = tracking_tape({&x});
  if (!tape) return t;
  t.set_node(tape->record(t.shape(), {x.node()}, {}, /*stop=*/true));
  return t;
}

MacCounter::MacCounter() : previous_(g_mac_counter) { g_mac_counter = this; }
MacCounter::~MacCounter() { g_mac_counter = previous_; }

void count_macs(std::uint64_t macs) {
  for (MacCounter* c = g_mac_counter; c; c = c->previous_) c->count_ += macs;
}

StopGradientReplay::StopGradientReplay(Mode mode, std::vector<Tensor>* values)
    : mode_(mode), values_(values), previous_(g_replay) {
  g_replay = this;
}

StopGradientReplay::~StopGradientReplay() { g_replay = previous_; }

StopGradientReplay* StopGradientReplay::current() noexcept { return g_replay; }

Tensor StopGradientReplay::intercept(const Tensor& value) {
  if (mode_ == Mode::record) {
    values_->push_back(value.detached());
    return value;
  }
  if (cursor_ >= values_->size()) {
    throw EvaluationError("stop-gradient replay: evaluation path diverged from the recorded one");
  }
  const Tensor& recorded = (*values_)[cursor_++];
  if (recorded.shape() != value.shape()) {
    throw EvaluationError("stop-gradient replay: recorded shape " + shape_str(recorded.shape()) +
                          " differs from " + shape_str(value.shape()));
  }
  return recorded;
}

}  // namespace pare
