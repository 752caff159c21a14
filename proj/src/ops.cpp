#include "tspnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "tspnet/errors.hpp"

namespace tspnet {

namespace {

// Returns the current tape when any input participates in differentiation.
Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::current();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

Tape* recording_tape(std::span<const Tensor> inputs) {
  Tape* tape = Tape::current();
  if (!tape) return nullptr;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return tape;
  }
  return nullptr;
}

void check_finite(const Tensor& t, const char* op) {
  if (!finite_checks_enabled()) return;
  for (Real v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

// C(n×m) += A(n×k) B(k×m)
void gemm_nn(const Real* a, const Real* b, Real* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    Real* ci = c + i * m;
    const Real* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = ai[p];
      const Real* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// C(n×m) += A(n×k) B(m×k)ᵀ
void gemm_nt(const Real* a, const Real* b, Real* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const Real* ai = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const Real* bj = b + j * k;
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * m + j] += acc;
    }
  }
}

// C(n×m) += A(k×n)ᵀ B(k×m)
void gemm_tn(const Real* a, const Real* b, Real* c, std::size_t k, std::size_t n, std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) {
    const Real* ap = a + p * n;
    const Real* bp = b + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const Real av = ap[i];
      Real* ci = c + i * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

Real normal_cdf(Real x) { return Real(0.5) * (Real(1) + std::erf(x / std::numbers::sqrt2_v<Real>)); }

Real normal_pdf(Real x) {
  return std::exp(Real(-0.5) * x * x) / std::sqrt(Real(2) * std::numbers::pi_v<Real>);
}

// Shared softmax kernel; mask may be null.
Tensor softmax_impl(const Tensor& m, const AttentionMask* mask) {
  require_matrix(m, "softmax_rows");
  const std::size_t n = m.rows(), k = m.cols();
  if (mask && (mask->rows != n || mask->cols != k)) {
    throw DimensionError("masked_softmax_rows: mask is " + std::to_string(mask->rows) + "x" +
                         std::to_string(mask->cols) + ", scores are " + shape_to_string(m.shape()));
  }
  Tensor out = Tensor::zeros({n, k});
  auto x = m.data();
  auto y = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (mask && !mask->allowed(i, j)) continue;
      const Real v = x[i * k + j];
      if (std::isnan(v) || v == std::numeric_limits<Real>::infinity()) {
        throw NumericError("softmax_rows: non-finite score in row " + std::to_string(i));
      }
      mx = std::max(mx, v);
    }
    if (mx == -std::numeric_limits<Real>::infinity()) {
      throw PreconditionError("softmax row " + std::to_string(i) + " has no admissible entry");
    }
    Real total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (mask && !mask->allowed(i, j)) continue;
      const Real e = std::exp(x[i * k + j] - mx);
      y[i * k + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < k; ++j) y[i * k + j] /= total;
  }
  check_finite(out, "softmax_rows");
  if (Tape* tape = recording_tape({&m})) {
    tape->record(out, [m, out, n, k]() mutable {
      auto p = out.data();
      auto dy = out.grad();
      auto dx = m.grad();
      for (std::size_t i = 0; i < n; ++i) {
        Real dot = 0;
        for (std::size_t j = 0; j < k; ++j) dot += dy[i * k + j] * p[i * k + j];
        for (std::size_t j = 0; j < k; ++j) dx[i * k + j] += p[i * k + j] * (dy[i * k + j] - dot);
      }
    });
  }
  return out;
}

}  // namespace

AttentionMask AttentionMask::all(std::size_t rows, std::size_t cols) {
  return {rows, cols, std::vector<std::uint8_t>(rows * cols, 1)};
}

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask mask{n, n, std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) mask.allow(i, j);
  }
  return mask;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  }
  Tensor out = Tensor::zeros({n, m});
  gemm_nn(a.data().data(), b.data().data(), out.data().data(), n, k, m);
  check_finite(out, "matmul");
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record(out, [a, b, out, n, k, m]() mutable {
      const Real* dy = out.grad().data();
      if (a.requires_grad()) gemm_nt(dy, b.data().data(), a.grad().data(), n, m, k);
      if (b.requires_grad()) gemm_tn(a.data().data(), dy, b.grad().data(), n, k, m);
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()) + "ᵀ");
  }
  Tensor out = Tensor::zeros({n, m});
  gemm_nt(a.data().data(), b.data().data(), out.data().data(), n, k, m);
  check_finite(out, "matmul_nt");
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record(out, [a, b, out, n, k, m]() mutable {
      const Real* dy = out.grad().data();
      if (a.requires_grad()) gemm_nn(dy, b.data().data(), a.grad().data(), n, m, k);
      if (b.requires_grad()) gemm_tn(dy, a.data().data(), b.grad().data(), n, m, k);
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = Tensor::zeros({m, n});
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) y[j * n + i] = x[i * m + j];
  }
  if (Tape* tape = recording_tape({&a})) {
    tape->record(out, [a, out, n, m]() mutable {
      auto dy = out.grad();
      auto dx = a.grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += dy[j * n + i];
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data(), z = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[i];
  check_finite(out, "add");
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record(out, [a, b, out]() mutable {
      auto dy = out.grad();
      if (a.requires_grad()) {
        auto dx = a.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto dz = b.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) dz[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data(), z = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] - z[i];
  check_finite(out, "sub");
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record(out, [a, b, out]() mutable {
      auto dy = out.grad();
      if (a.requires_grad()) {
        auto dx = a.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto dz = b.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) dz[i] -= dy[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data(), z = b.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
  check_finite(out, "mul");
  if (Tape* tape = recording_tape({&a, &b})) {
    tape->record(out, [a, b, out]() mutable {
      auto dy = out.grad();
      if (a.requires_grad()) {
        auto dx = a.grad();
        auto zv = b.data();
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * zv[i];
      }
      if (b.requires_grad()) {
        auto dz = b.grad();
        auto xv = a.data();
        for (std::size_t i = 0; i < dy.size(); ++i) dz[i] += dy[i] * xv[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, Real factor) {
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * factor;
  check_finite(out, "scale");
  if (Tape* tape = recording_tape({&a})) {
    tape->record(out, [a, out, factor]() mutable {
      auto dy = out.grad();
      auto dx = a.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor;
    });
  }
  return out;
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require_matrix(a, "add_bias");
  const std::size_t n = a.rows(), m = a.cols();
  if (bias.numel() != m) {
    throw DimensionError("add_bias: bias " + shape_to_string(bias.shape()) + " for matrix " +
                         shape_to_string(a.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data(), bv = bias.data();
  auto y = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] = x[i * m + j] + bv[j];
  }
  check_finite(out, "add_bias");
  if (Tape* tape = recording_tape({&a, &bias})) {
    tape->record(out, [a, bias, out, n, m]() mutable {
      auto dy = out.grad();
      if (a.requires_grad()) {
        auto dx = a.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      }
      if (bias.requires_grad()) {
        auto db = bias.grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < m; ++j) db[j] += dy[i * m + j];
        }
      }
    });
  }
  return out;
}

Tensor max_elementwise(std::span<const Tensor> parts) {
  if (parts.empty()) throw PreconditionError("max_elementwise: no inputs");
  for (const auto& p : parts) require_same_shape(parts[0], p, "max_elementwise");
  const std::size_t n = parts[0].numel();
  Tensor out = Tensor::zeros(parts[0].shape());
  std::vector<std::size_t> winner(n, 0);
  auto y = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    Real best = parts[0].data()[i];
    for (std::size_t p = 1; p < parts.size(); ++p) {
      const Real v = parts[p].data()[i];
      if (v > best) {
        best = v;
        winner[i] = p;
      }
    }
    y[i] = best;
  }
  if (Tape* tape = recording_tape(parts)) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    tape->record(out, [inputs, winner = std::move(winner), out]() mutable {
      auto dy = out.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) {
        Tensor& w = inputs[winner[i]];
        if (w.requires_grad()) w.grad()[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Real total = 0;
  for (Real v : a.data()) total += v;
  Tensor out = Tensor::scalar(total);
  check_finite(out, "sum");
  if (Tape* tape = recording_tape({&a})) {
    tape->record(out, [a, out]() mutable {
      const Real g = out.grad()[0];
      for (Real& d : a.grad()) d += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), Real(1) / static_cast<Real>(a.numel())); }

Tensor mean_rows(const Tensor& a) {
  require_matrix(a, "mean_rows");
  const std::size_t n = a.rows(), m = a.cols();
  Tensor out = Tensor::zeros({1, m});
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) y[j] += x[i * m + j];
  }
  for (auto& v : y) v /= static_cast<Real>(n);
  if (Tape* tape = recording_tape({&a})) {
    tape->record(out, [a, out, n, m]() mutable {
      auto dy = out.grad();
      auto dx = a.grad();
      const Real inv = Real(1) / static_cast<Real>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += dy[j] * inv;
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * normal_cdf(xv[i]);
  check_finite(out, "gelu");
  if (Tape* tape = recording_tape({&x})) {
    tape->record(out, [x, out]() mutable {
      auto dy = out.grad();
      auto dx = x.grad();
      auto xs = x.data();
      for (std::size_t i = 0; i < dy.size(); ++i) {
        dx[i] += dy[i] * (normal_cdf(xs[i]) + xs[i] * normal_pdf(xs[i]));
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0 ? xv[i] : Real(0);
  if (Tape* tape = recording_tape({&x})) {
    tape->record(out, [x, out]() mutable {
      auto dy = out.grad();
      auto dx = x.grad();
      auto xs = x.data();
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (xs[i] > 0) dx[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, Real rate, Rng& rng) {
  if (rate < 0 || rate >= 1) throw PreconditionError("dropout rate must lie in [0, 1)");
  if (rate == 0) return x;
  const Real keep_scale = Real(1) / (Real(1) - rate);
  std::vector<Real> factor(x.numel());
  for (auto& f : factor) f = rng.uniform() < rate ? Real(0) : keep_scale;
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * factor[i];
  if (Tape* tape = recording_tape({&x})) {
    tape->record(out, [x, out, factor = std::move(factor)]() mutable {
      auto dy = out.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor[i];
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& m) { return softmax_impl(m, nullptr); }

Tensor masked_softmax_rows(const Tensor& m, const AttentionMask& mask) {
  return softmax_impl(m, &mask);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, Tensor* weights_out) {
  require_matrix(q, "scaled_dot_attention");
  require_matrix(k, "scaled_dot_attention");
  require_matrix(v, "scaled_dot_attention");
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: query dim " + std::to_string(q.cols()) + " != key dim " +
                         std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: " + std::to_string(k.rows()) + " keys but " +
                         std::to_string(v.rows()) + " values");
  }
  if (k.rows() == 0) throw PreconditionError("attention: empty key set");
  const Tensor scores = scale(matmul_nt(q, k), Real(1) / std::sqrt(static_cast<Real>(k.cols())));
  Tensor weights = softmax_rows(scores);
  if (weights_out) *weights_out = weights;
  return matmul(weights, v);
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                        Tensor* weights_out) {
  require_matrix(q, "masked_attention");
  require_matrix(k, "masked_attention");
  require_matrix(v, "masked_attention");
  if (q.cols() != k.cols()) {
    throw DimensionError("attention: query dim " + std::to_string(q.cols()) + " != key dim " +
                         std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) {
    throw DimensionError("attention: " + std::to_string(k.rows()) + " keys but " +
                         std::to_string(v.rows()) + " values");
  }
  if (k.rows() == 0) throw PreconditionError("attention: empty key set");
  const Tensor scores = scale(matmul_nt(q, k), Real(1) / std::sqrt(static_cast<Real>(k.cols())));
  Tensor weights = masked_softmax_rows(scores, mask);
  if (weights_out) *weights_out = weights;
  return matmul(weights, v);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, Real eps) {
  require_matrix(x, "layer_norm");
  const std::size_t n = x.rows(), m = x.cols();
  if (gain.numel() != m || offset.numel() != m) {
    throw DimensionError("layer_norm: gain/offset size does not match " + shape_to_string(x.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  std::vector<Real> normed(n * m);
  std::vector<Real> inv_std(n);
  auto xv = x.data(), g = gain.data(), b = offset.data();
  auto y = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    Real mu = 0;
    for (std::size_t j = 0; j < m; ++j) mu += xv[i * m + j];
    mu /= static_cast<Real>(m);
    Real var = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const Real d = xv[i * m + j] - mu;
      var += d * d;
    }
    var /= static_cast<Real>(m);
    inv_std[i] = Real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      normed[i * m + j] = (xv[i * m + j] - mu) * inv_std[i];
      y[i * m + j] = normed[i * m + j] * g[j] + b[j];
    }
  }
  check_finite(out, "layer_norm");
  if (Tape* tape = recording_tape({&x, &gain, &offset})) {
    tape->record(out, [x, gain, offset, out, normed = std::move(normed),
                       inv_std = std::move(inv_std), n, m]() mutable {
      auto dy = out.grad();
      auto g = gain.data();
      if (gain.requires_grad()) {
        auto dg = gain.grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < m; ++j) dg[j] += dy[i * m + j] * normed[i * m + j];
        }
      }
      if (offset.requires_grad()) {
        auto db = offset.grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < m; ++j) db[j] += dy[i * m + j];
        }
      }
      if (x.requires_grad()) {
        auto dx = x.grad();
        const Real inv_m = Real(1) / static_cast<Real>(m);
        for (std::size_t i = 0; i < n; ++i) {
          Real mean_d = 0, mean_dn = 0;
          for (std::size_t j = 0; j < m; ++j) {
            const Real d = dy[i * m + j] * g[j];
            mean_d += d;
            mean_dn += d * normed[i * m + j];
          }
          mean_d *= inv_m;
          mean_dn *= inv_m;
          for (std::size_t j = 0; j < m; ++j) {
            const Real d = dy[i * m + j] * g[j];
            dx[i * m + j] += inv_std[i] * (d - mean_d - normed[i * m + j] * mean_dn);
          }
        }
      }
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw PreconditionError("concat_rows: no inputs");
  const std::size_t m = parts[0].cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != m) throw DimensionError("concat_rows: column counts differ");
    n += p.rows();
  }
  Tensor out = Tensor::zeros({n, m});
  auto y = out.data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), y.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.numel();
  }
  if (Tape* tape = recording_tape(parts)) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    tape->record(out, [inputs, out]() mutable {
      auto dy = out.grad();
      std::size_t offset = 0;
      for (auto& p : inputs) {
        if (p.requires_grad()) {
          auto dx = p.grad();
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[offset + i];
        }
        offset += p.numel();
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw PreconditionError("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != n) throw DimensionError("concat_cols: row counts differ");
    m += p.cols();
  }
  Tensor out = Tensor::zeros({n, m});
  auto y = out.data();
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    auto x = p.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < w; ++j) y[i * m + col + j] = x[i * w + j];
    }
    col += w;
  }
  if (Tape* tape = recording_tape(parts)) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    tape->record(out, [inputs, out, n, m]() mutable {
      auto dy = out.grad();
      std::size_t col = 0;
      for (auto& p : inputs) {
        const std::size_t w = p.cols();
        if (p.requires_grad()) {
          auto dx = p.grad();
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < w; ++j) dx[i * w + j] += dy[i * m + col + j];
          }
        }
        col += w;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix(a, "slice_rows");
  if (count == 0 || start + count > a.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_to_string(a.shape()));
  }
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
  return gather_rows(a, idx);
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_matrix(a, "slice_cols");
  const std::size_t n = a.rows(), m = a.cols();
  if (count == 0 || start + count > m) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_to_string(a.shape()));
  }
  Tensor out = Tensor::zeros({n, count});
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < count; ++j) y[i * count + j] = x[i * m + start + j];
  }
  if (Tape* tape = recording_tape({&a})) {
    tape->record(out, [a, out, n, m, start, count]() mutable {
      auto dy = out.grad();
      auto dx = a.grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < count; ++j) dx[i * m + start + j] += dy[i * count + j];
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
  require_matrix(a, "gather_rows");
  if (indices.empty()) throw PreconditionError("gather_rows: no indices");
  const std::size_t n = a.rows(), m = a.cols();
  for (auto i : indices) {
    if (i >= n) {
      throw DimensionError("gather_rows: row " + std::to_string(i) + " outside " +
                           shape_to_string(a.shape()));
    }
  }
  Tensor out = Tensor::zeros({indices.size(), m});
  auto x = a.data();
  auto y = out.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(indices[r] * m), m,
                y.begin() + static_cast<std::ptrdiff_t>(r * m));
  }
  if (Tape* tape = recording_tape({&a})) {
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    tape->record(out, [a, out, idx = std::move(idx), m]() mutable {
      auto dy = out.grad();
      auto dx = a.grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t j = 0; j < m; ++j) dx[idx[r] * m + j] += dy[r * m + j];
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                     const CrossEntropyOptions& options, LossInfo* info) {
  require_matrix(logits, "cross_entropy");
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(n) + " logit rows but " +
                         std::to_string(targets.size()) + " targets");
  }
  if (options.label_smoothing < 0 || options.label_smoothing >= 1) {
    throw PreconditionError("cross_entropy: label smoothing must lie in [0, 1)");
  }
  std::size_t counted = 0;
  for (TokenId t : targets) {
    if (t == options.ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw PreconditionError("cross_entropy: target " + std::to_string(t) + " outside vocabulary of " +
                              std::to_string(v));
    }
    ++counted;
  }
  if (info) {
    info->counted = counted;
    info->all_ignored = counted == 0;
  }
  if (counted == 0) return Tensor::scalar(0);

  const Real eps = options.label_smoothing;
  const Real off_weight = eps / static_cast<Real>(v);
  const Real on_weight = Real(1) - eps + off_weight;
  const Real norm = options.sum ? Real(1) : Real(1) / static_cast<Real>(counted);

  std::vector<Real> probs(n * v, Real(0));
  Real total = 0;
  auto x = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] == options.ignore_id) continue;
    Real mx = x[i * v];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, x[i * v + j]);
    Real z = 0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(x[i * v + j] - mx);
      z += probs[i * v + j];
    }
    const Real log_z = std::log(z) + mx;
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
    const auto t = static_cast<std::size_t>(targets[i]);
    Real row = on_weight * (log_z - x[i * v + t]);
    if (eps > 0) {
      for (std::size_t j = 0; j < v; ++j) {
        if (j != t) row += off_weight * (log_z - x[i * v + j]);
      }
    }
    total += row;
  }
  Tensor out = Tensor::scalar(total * norm);
  check_finite(out, "cross_entropy");
  if (Tape* tape = recording_tape({&logits})) {
    std::vector<TokenId> tgt(targets.begin(), targets.end());
    tape->record(out, [logits, out, probs = std::move(probs), tgt = std::move(tgt), n, v, norm,
                       on_weight, off_weight, ignore = options.ignore_id]() mutable {
      const Real g = out.grad()[0] * norm;
      auto dx = logits.grad();
      for (std::size_t i = 0; i < n; ++i) {
        if (tgt[i] == ignore) continue;
        const auto t = static_cast<std::size_t>(tgt[i]);
        for (std::size_t j = 0; j < v; ++j) {
          const Real q = j == t ? on_weight : off_weight;
          dx[i * v + j] += g * (probs[i * v + j] - q);
        }
      }
    });
  }
  return out;
}

}  // namespace tspnet
