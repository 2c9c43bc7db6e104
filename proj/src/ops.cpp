#include "promptmix/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <string>

#include "promptmix/errors.hpp"

namespace promptmix {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

MatrixMap as_matrix(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MatrixMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstMatrixMap as_matrix(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

bool tracking(std::initializer_list<const Tensor*> operands) {
  if (active_tape() == nullptr) return false;
  return std::any_of(operands.begin(), operands.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void require_matrix(const Tensor& t, const char* op, const char* name) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": " + name + " must be a matrix, got " + shape_string(t.shape()));
  }
}

void record(std::string_view op, Tensor& result, Tape::BackwardRule rule) {
  result.set_requires_grad(true);
  active_tape()->record(op, result, std::move(rule));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul", "lhs");
  require_matrix(b, "matmul", "rhs");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  as_matrix(out.data(), m, n).noalias() = as_matrix(a.data(), m, k) * as_matrix(b.data(), k, n);
  if (tracking({&a, &b})) {
    record("matmul", out, [a, b, out, m, k, n]() mutable {
      auto g = as_matrix(std::as_const(out).grad(), m, n);
      if (a.requires_grad()) as_matrix(a.grad_buffer(), m, k).noalias() += g * as_matrix(b.data(), k, n).transpose();
      if (b.requires_grad()) as_matrix(b.grad_buffer(), k, n).noalias() += as_matrix(a.data(), m, k).transpose() * g;
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt", "lhs");
  require_matrix(b, "matmul_nt", "rhs");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + "^T");
  }
  Tensor out = Tensor::zeros({m, n});
  as_matrix(out.data(), m, n).noalias() = as_matrix(a.data(), m, k) * as_matrix(b.data(), n, k).transpose();
  if (tracking({&a, &b})) {
    record("matmul_nt", out, [a, b, out, m, k, n]() mutable {
      auto g = as_matrix(std::as_const(out).grad(), m, n);
      if (a.requires_grad()) as_matrix(a.grad_buffer(), m, k).noalias() += g * as_matrix(b.data(), n, k);
      if (b.requires_grad()) as_matrix(b.grad_buffer(), n, k).noalias() += g.transpose() * as_matrix(a.data(), m, k);
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes differ, " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out = a.clone();
  auto o = out.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  if (tracking({&a, &b})) {
    record("add", out, [a, b, out]() mutable {
      auto g = std::as_const(out).grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto dst = t->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes differ, " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out = a.clone();
  auto o = out.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  if (tracking({&a, &b})) {
    record("mul", out, [a, b, out]() mutable {
      auto g = std::as_const(out).grad();
      if (a.requires_grad()) {
        auto dst = a.grad_buffer();
        auto bv = std::as_const(b).data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto dst = b.grad_buffer();
        auto av = std::as_const(a).data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.cols(), m = x.rows();
  if (bias.numel() != n) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not match " + shape_string(x.shape()));
  }
  Tensor out = x.clone();
  auto o = out.data();
  auto bv = bias.data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) o[r * n + c] += bv[c];
  if (tracking({&x, &bias})) {
    record("add_bias", out, [x, bias, out, m, n]() mutable {
      auto g = std::as_const(out).grad();
      if (x.requires_grad()) {
        auto dst = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto dst = bias.grad_buffer();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) dst[c] += g[r * n + c];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = x.clone();
  for (auto& v : out.data()) v *= factor;
  if (tracking({&x})) {
    record("scale", out, [x, out, factor]() mutable {
      auto g = std::as_const(out).grad();
      auto dst = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
    });
  }
  return out;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor out = x.clone();
  for (auto& v : out.data()) {
    const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    v = 0.5 * v * (1.0 + t);
  }
  if (tracking({&x})) {
    record("gelu", out, [x, out]() mutable {
      auto g = std::as_const(out).grad();
      auto xv = std::as_const(x).data();
      auto dst = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xv[i];
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        dst[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::scalar(total);
  if (tracking({&x})) {
    record("sum", out, [x, out]() mutable {
      const double g = std::as_const(out).grad()[0];
      for (auto& d : x.grad_buffer()) d += g;
    });
  }
  return out;
}

Tensor softmax_rows_with_bias(const Tensor& logits, const Tensor& bias) {
  if (logits.shape() != bias.shape()) {
    throw ShapeError("softmax_rows_with_bias: logits " + shape_string(logits.shape()) + " vs bias " +
                     shape_string(bias.shape()));
  }
  const std::size_t r = logits.rows(), c = logits.cols();
  Tensor out = Tensor::zeros(logits.shape());
  auto z = logits.data();
  auto b = bias.data();
  auto p = out.data();
  for (std::size_t i = 0; i < r; ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t k = i * c + j;
      if (!is_masked(b[k])) peak = std::max(peak, z[k] + b[k]);
    }
    if (peak == -std::numeric_limits<double>::infinity()) {
      throw InputError("softmax_rows_with_bias: row " + std::to_string(i) + " is masked in every column");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t k = i * c + j;
      if (is_masked(b[k])) continue;
      p[k] = std::exp(z[k] + b[k] - peak);
      total += p[k];
    }
    for (std::size_t j = 0; j < c; ++j) p[i * c + j] /= total;
  }
  if (tracking({&logits, &bias})) {
    record("softmax_rows_with_bias", out, [logits, bias, out, r, c]() mutable {
      auto g = std::as_const(out).grad();
      auto p = std::as_const(out).data();
      std::vector<double> dz(r * c);
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += p[i * c + j] * g[i * c + j];
        for (std::size_t j = 0; j < c; ++j) dz[i * c + j] = p[i * c + j] * (g[i * c + j] - dot);
      }
      for (const Tensor* t : {&logits, &bias}) {
        if (!t->requires_grad()) continue;
        auto dst = t->grad_buffer();
        for (std::size_t k = 0; k < dz.size(); ++k) dst[k] += dz[k];
      }
    });
  }
  return out;
}

namespace {

// Masked softmax of one row in place; returns false if every cell is masked.
bool softmax_row(double* z, const double* bias, std::size_t n) {
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if (!is_masked(bias[j])) peak = std::max(peak, z[j] + bias[j]);
  if (peak == -std::numeric_limits<double>::infinity()) return false;
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (is_masked(bias[j])) {
      z[j] = 0.0;
      continue;
    }
    z[j] = std::exp(z[j] + bias[j] - peak);
    total += z[j];
  }
  for (std::size_t j = 0; j < n; ++j) z[j] /= total;
  return true;
}

using Stride = Eigen::OuterStride<>;
using Block = Eigen::Map<RowMatrix, 0, Stride>;
using ConstBlock = Eigen::Map<const RowMatrix, 0, Stride>;

}  // namespace

Tensor multi_head_attention(const Tensor& qkv, std::span<const Tensor> biases, std::span<const std::size_t> lengths,
                            std::size_t heads, std::vector<Tensor>* probabilities) {
  require_matrix(qkv, "multi_head_attention", "qkv");
  if (heads == 0 || qkv.cols() % (3 * heads) != 0) {
    throw ShapeError("multi_head_attention: " + std::to_string(qkv.cols()) + " columns do not split into 3 x " +
                     std::to_string(heads) + " heads");
  }
  if (biases.size() != lengths.size()) {
    throw ShapeError("multi_head_attention: " + std::to_string(biases.size()) + " biases for " +
                     std::to_string(lengths.size()) + " sequences");
  }
  std::size_t total = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    if (biases[s].shape() != Shape{lengths[s], lengths[s]}) {
      throw ShapeError("multi_head_attention: bias " + shape_string(biases[s].shape()) + " for a sequence of " +
                       std::to_string(lengths[s]) + " rows");
    }
    total += lengths[s];
  }
  if (total != qkv.rows()) {
    throw ShapeError("multi_head_attention: sequence lengths sum to " + std::to_string(total) + " but qkv has " +
                     std::to_string(qkv.rows()) + " rows");
  }
  const std::size_t width = qkv.cols(), d = width / 3, dh = d / heads;
  const double factor = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto ld = static_cast<Eigen::Index>(width);
  const auto edh = static_cast<Eigen::Index>(dh);

  Tensor out = Tensor::zeros({total, d});
  // Probabilities per (sequence, head), kept for the backward pass.
  auto saved = std::make_shared<std::vector<std::vector<double>>>();
  saved->reserve(lengths.size() * heads);
  if (probabilities) probabilities->clear();
  const double* src = qkv.data().data();
  double* dst = out.data().data();
  std::size_t offset = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    const std::size_t L = lengths[s];
    const auto el = static_cast<Eigen::Index>(L);
    const double* bias = biases[s].data().data();
    for (std::size_t h = 0; h < heads; ++h) {
      ConstBlock q(src + offset * width + h * dh, el, edh, Stride(ld));
      ConstBlock k(src + offset * width + d + h * dh, el, edh, Stride(ld));
      ConstBlock v(src + offset * width + 2 * d + h * dh, el, edh, Stride(ld));
      std::vector<double> p(L * L);
      as_matrix(std::span<double>(p), L, L).noalias() = factor * (q * k.transpose());
      for (std::size_t i = 0; i < L; ++i) {
        if (!softmax_row(p.data() + i * L, bias + i * L, L)) {
          throw InputError("multi_head_attention: row " + std::to_string(i) + " of sequence " + std::to_string(s) +
                           " is masked in every column");
        }
      }
      Block o(dst + offset * d + h * dh, el, edh, Stride(static_cast<Eigen::Index>(d)));
      o.noalias() = as_matrix(std::span<const double>(p), L, L) * v;
      if (probabilities) probabilities->push_back(Tensor::from({L, L}, p));
      saved->push_back(std::move(p));
    }
    offset += L;
  }

  std::vector<Tensor> bias_list(biases.begin(), biases.end());
  bool bias_grad = false;
  for (const auto& b : bias_list) bias_grad = bias_grad || b.requires_grad();
  if (active_tape() != nullptr && (qkv.requires_grad() || bias_grad)) {
    std::vector<std::size_t> lens(lengths.begin(), lengths.end());
    record("multi_head_attention", out,
           [qkv, out, saved, bias_list, lens, heads, width, d, dh, factor, ld, edh]() mutable {
             const double* g = std::as_const(out).grad().data();
             const double* src = std::as_const(qkv).data().data();
             double* gq = qkv.requires_grad() ? qkv.grad_buffer().data() : nullptr;
             std::vector<double> ds;
             std::size_t offset = 0, idx = 0;
             for (std::size_t s = 0; s < lens.size(); ++s) {
               const std::size_t L = lens[s];
               const auto el = static_cast<Eigen::Index>(L);
               for (std::size_t h = 0; h < heads; ++h, ++idx) {
                 const auto& p = (*saved)[idx];
                 auto pm = as_matrix(std::span<const double>(p), L, L);
                 ConstBlock q(src + offset * width + h * dh, el, edh, Stride(ld));
                 ConstBlock k(src + offset * width + d + h * dh, el, edh, Stride(ld));
                 ConstBlock v(src + offset * width + 2 * d + h * dh, el, edh, Stride(ld));
                 ConstBlock go(g + offset * d + h * dh, el, edh, Stride(static_cast<Eigen::Index>(d)));
                 ds.assign(L * L, 0.0);
                 auto dsm = as_matrix(std::span<double>(ds), L, L);
                 dsm.noalias() = go * v.transpose();
                 for (std::size_t i = 0; i < L; ++i) {
                   double dot = 0.0;
                   for (std::size_t j = 0; j < L; ++j) dot += p[i * L + j] * ds[i * L + j];
                   for (std::size_t j = 0; j < L; ++j) ds[i * L + j] = p[i * L + j] * (ds[i * L + j] - dot);
                 }
                 if (bias_list[s].requires_grad()) {
                   auto gb = bias_list[s].grad_buffer();
                   for (std::size_t c = 0; c < L * L; ++c) gb[c] += ds[c];
                 }
                 if (gq == nullptr) continue;
                 Block dq(gq + offset * width + h * dh, el, edh, Stride(ld));
                 Block dk(gq + offset * width + d + h * dh, el, edh, Stride(ld));
                 Block dv(gq + offset * width + 2 * d + h * dh, el, edh, Stride(ld));
                 dv.noalias() += pm.transpose() * go;
                 dq.noalias() += factor * (dsm * k);
                 dk.noalias() += factor * (dsm.transpose() * q);
               }
               offset += L;
             }
           });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  const std::size_t d = x.cols(), m = x.rows();
  if (gain.numel() != d || shift.numel() != d) {
    throw ShapeError("layer_norm: gain " + shape_string(gain.shape()) + " / shift " + shape_string(shift.shape()) +
                     " do not match trailing dimension of " + shape_string(x.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> normalized(m * d);
  std::vector<double> inv_std(m);
  auto xv = x.data();
  auto gv = gain.data();
  auto sv = shift.data();
  auto o = out.data();
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const double n = (row[c] - mean) * inv_std[r];
      normalized[r * d + c] = n;
      o[r * d + c] = n * gv[c] + sv[c];
    }
  }
  if (tracking({&x, &gain, &shift})) {
    record("layer_norm", out,
           [x, gain, shift, out, normalized = std::move(normalized), inv_std = std::move(inv_std), m, d]() mutable {
             auto g = std::as_const(out).grad();
             auto gv = std::as_const(gain).data();
             if (gain.requires_grad()) {
               auto dst = gain.grad_buffer();
               for (std::size_t r = 0; r < m; ++r)
                 for (std::size_t c = 0; c < d; ++c) dst[c] += g[r * d + c] * normalized[r * d + c];
             }
             if (shift.requires_grad()) {
               auto dst = shift.grad_buffer();
               for (std::size_t r = 0; r < m; ++r)
                 for (std::size_t c = 0; c < d; ++c) dst[c] += g[r * d + c];
             }
             if (x.requires_grad()) {
               auto dst = x.grad_buffer();
               const double inv_d = 1.0 / static_cast<double>(d);
               for (std::size_t r = 0; r < m; ++r) {
                 double mean_dn = 0.0, mean_dn_n = 0.0;
                 for (std::size_t c = 0; c < d; ++c) {
                   const double dn = g[r * d + c] * gv[c];
                   mean_dn += dn;
                   mean_dn_n += dn * normalized[r * d + c];
                 }
                 mean_dn *= inv_d;
                 mean_dn_n *= inv_d;
                 for (std::size_t c = 0; c < d; ++c) {
                   const double dn = g[r * d + c] * gv[c];
                   dst[r * d + c] += inv_std[r] * (dn - mean_dn - normalized[r * d + c] * mean_dn_n);
                 }
               }
             }
           });
  }
  return out;
}

Tensor cross_entropy_next_token(const Tensor& logits, std::span<const std::int32_t> targets,
                                const std::vector<bool>& ignore) {
  require_matrix(logits, "cross_entropy_next_token", "logits");
  const std::size_t n = logits.rows(), vocab = logits.cols();
  if (targets.size() != n || ignore.size() != n) {
    throw ShapeError("cross_entropy_next_token: " + std::to_string(n) + " logit rows but " +
                     std::to_string(targets.size()) + " targets and " + std::to_string(ignore.size()) +
                     " ignore flags");
  }
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ignore[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw InputError("cross_entropy_next_token: target " + std::to_string(targets[i]) + " at row " +
                       std::to_string(i) + " is outside vocabulary of size " + std::to_string(vocab));
    }
    ++counted;
  }
  if (counted == 0) throw InputError("cross_entropy_next_token: every position is ignored");

  auto z = logits.data();
  std::vector<double> probs(n * vocab, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ignore[i]) continue;
    const double* row = z.data() + i * vocab;
    const double peak = *std::max_element(row, row + vocab);
    double denom = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
      probs[i * vocab + v] = std::exp(row[v] - peak);
      denom += probs[i * vocab + v];
    }
    for (std::size_t v = 0; v < vocab; ++v) probs[i * vocab + v] /= denom;
    total += std::log(denom) + peak - row[targets[i]];
  }
  const double inv_count = 1.0 / static_cast<double>(counted);
  Tensor out = Tensor::scalar(total * inv_count);
  if (tracking({&logits})) {
    std::vector<std::int32_t> kept_targets(targets.begin(), targets.end());
    std::vector<bool> kept_ignore = ignore;
    record("cross_entropy_next_token", out,
           [logits, out, probs = std::move(probs), kept_targets = std::move(kept_targets),
            kept_ignore = std::move(kept_ignore), n, vocab, inv_count]() mutable {
             const double g = std::as_const(out).grad()[0] * inv_count;
             auto dst = logits.grad_buffer();
             for (std::size_t i = 0; i < n; ++i) {
               if (kept_ignore[i]) continue;
               for (std::size_t v = 0; v < vocab; ++v) dst[i * vocab + v] += g * probs[i * vocab + v];
               dst[i * vocab + static_cast<std::size_t>(kept_targets[i])] -= g;
             }
           });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> ids) {
  require_matrix(table, "gather_rows", "table");
  const std::size_t d = table.cols(), limit = table.rows();
  if (ids.empty()) throw ShapeError("gather_rows: no ids");
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= limit) {
      throw InputError("gather_rows: id " + std::to_string(id) + " outside table of " + std::to_string(limit) +
                       " rows");
    }
  }
  Tensor out = Tensor::zeros({ids.size(), d});
  auto src = table.data();
  auto o = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, o.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  if (tracking({&table})) {
    std::vector<std::int32_t> kept(ids.begin(), ids.end());
    record("gather_rows", out, [table, out, kept = std::move(kept), d]() mutable {
      auto g = std::as_const(out).grad();
      auto dst = table.grad_buffer();
      for (std::size_t i = 0; i < kept.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) dst[static_cast<std::size_t>(kept[i]) * d + c] += g[i * d + c];
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t d = parts.front().cols();
  std::size_t total = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows", "part");
    if (p.cols() != d) {
      throw ShapeError("concat_rows: width " + std::to_string(p.cols()) + " differs from " + std::to_string(d));
    }
    total += p.rows();
    any_grad = any_grad || p.requires_grad();
  }
  Tensor out = Tensor::zeros({total, d});
  auto o = out.data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), o.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.numel();
  }
  if (any_grad && active_tape() != nullptr) {
    std::vector<Tensor> kept(parts.begin(), parts.end());
    record("concat_rows", out, [kept = std::move(kept), out]() mutable {
      auto g = std::as_const(out).grad();
      std::size_t offset = 0;
      for (auto& p : kept) {
        if (p.requires_grad()) {
          auto dst = p.grad_buffer();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[offset + i];
        }
        offset += p.numel();
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols", "part");
    if (p.rows() != m) {
      throw ShapeError("concat_cols: height " + std::to_string(p.rows()) + " differs from " + std::to_string(m));
    }
    total += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  Tensor out = Tensor::zeros({m, total});
  auto o = out.data();
  std::size_t col0 = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    auto src = p.data();
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  o.begin() + static_cast<std::ptrdiff_t>(r * total + col0));
    col0 += w;
  }
  if (any_grad && active_tape() != nullptr) {
    std::vector<Tensor> kept(parts.begin(), parts.end());
    record("concat_cols", out, [kept = std::move(kept), out, m, total]() mutable {
      auto g = std::as_const(out).grad();
      std::size_t col0 = 0;
      for (auto& p : kept) {
        const std::size_t w = p.cols();
        if (p.requires_grad()) {
          auto dst = p.grad_buffer();
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < w; ++c) dst[r * w + c] += g[r * total + col0 + c];
        }
        col0 += w;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows", "input");
  if (count == 0 || begin + count > x.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_string(x.shape()));
  }
  const std::size_t d = x.cols();
  auto src = x.data();
  std::vector<double> values(src.begin() + static_cast<std::ptrdiff_t>(begin * d),
                             src.begin() + static_cast<std::ptrdiff_t>((begin + count) * d));
  Tensor out = Tensor::from({count, d}, std::move(values));
  if (tracking({&x})) {
    record("slice_rows", out, [x, out, begin, d]() mutable {
      auto g = std::as_const(out).grad();
      auto dst = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dst[begin * d + i] += g[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols", "input");
  if (count == 0 || begin + count > x.cols()) {
    throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_string(x.shape()));
  }
  const std::size_t m = x.rows(), w = x.cols();
  Tensor out = Tensor::zeros({m, count});
  auto src = x.data();
  auto o = out.data();
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * w + begin), count,
                o.begin() + static_cast<std::ptrdiff_t>(r * count));
  if (tracking({&x})) {
    record("slice_cols", out, [x, out, begin, count, m, w]() mutable {
      auto g = std::as_const(out).grad();
      auto dst = x.grad_buffer();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < count; ++c) dst[r * w + begin + c] += g[r * count + c];
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw InputError("dropout: rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  std::bernoulli_distribution keep(1.0 - rate);
  for (auto& m : mask) m = keep(rng) ? keep_scale : 0.0;
  Tensor out = x.clone();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= mask[i];
  if (tracking({&x})) {
    record("dropout", out, [x, out, mask = std::move(mask)]() mutable {
      auto g = std::as_const(out).grad();
      auto dst = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * mask[i];
    });
  }
  return out;
}

}  // namespace promptmix
