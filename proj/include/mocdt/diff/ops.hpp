// Copyright 2026 The MocDT Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Differentiable primitives. Each op computes its forward value eagerly and
// registers the rule that pushes upstream gradient into its parents.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mocdt/diff/array.hpp"
#include "mocdt/diff/tape.hpp"
#include "mocdt/error.hpp"

namespace mocdt::diff {

namespace detail {

[[noreturn]] inline void shape_mismatch(const char* op, const std::string& a, const std::string& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a + " and " + b);
}

template <class T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw DomainError("operands live on different tapes");
  return *a.tape;
}

/// c[m,n] += a[m,k] b[k,n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

/// c[m,k] += a[m,n] b[k,n]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b + p * n;
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
      c[i * k + p] += acc;
    }
  }
}

/// c[k,n] += a[m,k]^T b[m,n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

// Broadcast kinds for add/sub: same shape, or a row vector over every row.
template <class T>
bool broadcasts_row(const Array<T>& a, const Array<T>& b) {
  return !a.same_shape(b) && b.rows() == 1 && b.cols() == a.cols() && b.rank() >= 1 && a.rank() == 2;
}

template <class T>
Var<T> add_sub(Var<T> a, Var<T> b, T sign, Op op) {
  Tape<T>& tape = same_tape(a, b);
  const Array<T>& av = a.value();
  const Array<T>& bv = b.value();
  const bool row = broadcasts_row(av, bv);
  if (!av.same_shape(bv) && !row) shape_mismatch(op_name(op), av.shape_string(), bv.shape_string());
  Array<T> out = av;
  const std::size_t n = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * bv[row ? i % n : i];
  return tape.record(op, std::move(out), {a.id, b.id}, [a = a.id, b = b.id, row, n, sign](Tape<T>& t, std::uint32_t self) {
    const Array<T>& g = t.upstream(self);
    if (t.requires_grad(a)) {
      Array<T>& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Array<T>& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[row ? i % n : i] += sign * g[i];
    }
  });
}

}  // namespace detail

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Array<T>& av = a.value();
  const Array<T>& bv = b.value();
  if (av.cols() != bv.rows() || av.rank() == 0 || bv.rank() != 2) {
    detail::shape_mismatch("matmul", av.shape_string(), bv.shape_string());
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Array<T> out = Array<T>::matrix(m, n);
  detail::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  return tape.record(Op::kMatmul, std::move(out), {a.id, b.id}, [a = a.id, b = b.id, m, k, n](Tape<T>& t, std::uint32_t self) {
    const Array<T>& g = t.upstream(self);
    if (t.requires_grad(a)) detail::gemm_nt(g.data(), t.value(b).data(), t.grad_buffer(a).data(), m, n, k);
    if (t.requires_grad(b)) detail::gemm_tn(t.value(a).data(), g.data(), t.grad_buffer(b).data(), m, k, n);
  });
}

/// a + b, where b may also be a single row broadcast over the rows of a.
template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::add_sub(a, b, T(1), Op::kAdd);
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::add_sub(a, b, T(-1), Op::kSub);
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b);
  const Array<T>& av = a.value();
  const Array<T>& bv = b.value();
  if (!av.same_shape(bv)) detail::shape_mismatch("mul", av.shape_string(), bv.shape_string());
  Array<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape.record(Op::kMul, std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape<T>& t, std::uint32_t self) {
    const Array<T>& g = t.upstream(self);
    if (t.requires_grad(a)) {
      Array<T>& ga = t.grad_buffer(a);
      const Array<T>& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Array<T>& gb = t.grad_buffer(b);
      const Array<T>& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  Array<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return a.tape->record(Op::kScale, std::move(out), {a.id}, [a = a.id, factor](Tape<T>& t, std::uint32_t self) {
    const Array<T>& g = t.upstream(self);
    Array<T>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

/// Concatenation along the last axis; all parts share their row count.
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape<T>& tape = *parts[0].tape;
  const std::size_t rows = parts[0].value().rows();
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.tape != &tape) throw DomainError("operands live on different tapes");
    if (p.value().rows() != rows) {
      detail::shape_mismatch("concat", parts[0].value().shape_string(), p.value().shape_string());
    }
    ids.push_back(p.id);
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  Array<T> out = rows == 1 && parts[0].value().rank() < 2 ? Array<T>::vector(total) : Array<T>::matrix(rows, total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Array<T>& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) std::copy(v.row(r), v.row(r) + widths[k], out.row(r) + offset);
    offset += widths[k];
  }
  return tape.record_many(Op::kConcat, std::move(out), ids, [ids, widths, rows, total](Tape<T>& t, std::uint32_t self) {
    const Array<T>& g = t.upstream(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Array<T>& gk = t.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) gk[r * widths[k] + c] += g[r * total + offset + c];
      }
      offset += widths[k];
    }
  });
}

/// Stacks rows (or matrices) on top of each other; widths must agree.
template <class T>
Var<T> stack_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("stack_rows: no operands");
  Tape<T>& tape = *parts[0].tape;
  const std::size_t cols = parts[0].value().cols();
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.tape != &tape) throw DomainError("operands live on different tapes");
    if (p.value().cols() != cols) {
      detail::shape_mismatch("stack_rows", parts[0].value().shape_string(), p.value().shape_string());
    }
    ids.push_back(p.id);
    offsets.push_back(total);
    total += p.value().size();
  }
  Array<T> out = Array<T>::matrix(total / std::max<std::size_t>(cols, 1), cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value().values();
    std::copy(v.begin(), v.end(), out.data() + offsets[k]);
  }
  return tape.record_many(Op::kStackRows, std::move(out), ids, [ids, offsets](Tape<T>& t, std::uint32_t self) {
    const Array<T>& g = t.upstream(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Array<T>& gk = t.grad_buffer(ids[k]);
      for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[offsets[k] + i];
    }
  });
}

/// Rows `ids` of a matrix: embedding lookup when applied to a table.
template <class T>
Var<T> row_select(Var<T> table, std::vector<std::int32_t> ids) {
  const Array<T>& tv = table.value();
  const std::size_t cols = tv.cols();
  Array<T> out = Array<T>::matrix(ids.size(), cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw LookupError("row_select: row " + std::to_string(ids[r]) + " outside table of shape " + tv.shape_string());
    }
    std::copy(tv.row(static_cast<std::size_t>(ids[r])), tv.row(static_cast<std::size_t>(ids[r])) + cols, out.row(r));
  }
  return table.tape->record(Op::kRowSelect, std::move(out), {table.id},
                            [table = table.id, ids = std::move(ids), cols](Tape<T>& t, std::uint32_t self) {
                              const Array<T>& g = t.upstream(self);
                              Array<T>& gt = t.grad_buffer(table);
                              for (std::size_t r = 0; r < ids.size(); ++r) {
                                T* dst = gt.row(static_cast<std::size_t>(ids[r]));
                                for (std::size_t c = 0; c < cols; ++c) dst[c] += g[r * cols + c];
                              }
                            });
}

/// Columns [begin, end) of every row.
template <class T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  const Array<T>& av = a.value();
  if (begin > end || end > av.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                     av.shape_string());
  }
  const std::size_t rows = av.rows(), width = end - begin, cols = av.cols();
  Array<T> out = av.rank() == 2 ? Array<T>::matrix(rows, width) : Array<T>::vector(width);
  for (std::size_t r = 0; r < rows; ++r) std::copy(av.row(r) + begin, av.row(r) + end, out.row(r));
  return a.tape->record(Op::kSliceCols, std::move(out), {a.id}, [a = a.id, begin, width, cols, rows](Tape<T>& t, std::uint32_t self) {
    const Array<T>& g = t.upstream(self);
    Array<T>& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < width; ++c) ga[r * cols + begin + c] += g[r * width + c];
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  const Array<T>& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  Array<T> out = Array<T>::matrix(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  return a.tape->record(Op::kTranspose, std::move(out), {a.id}, [a = a.id, m, n](Tape<T>& t, std::uint32_t self) {
    const Array<T>& g = t.upstream(self);
    Array<T>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

template <class T>
Var<T> tanh(Var<T> a) {
  Array<T> out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  return a.tape->record(Op::kTanh, std::move(out), {a.id}, [a = a.id](Tape<T>& t, std::uint32_t self) {
    const Array<T>& g = t.upstream(self);
    const Array<T>& y = t.value(self);
    Array<T>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
  });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Array<T> out = a.value();
  for (auto& v : out.values()) v = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  return a.tape->record(Op::kSigmoid, std::move(out), {a.id}, [a = a.id](Tape<T>& t, std::uint32_t self) {
    const Array<T>& g = t.upstream(self);
    const Array<T>& y = t.value(self);
    Array<T>& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

/// Row-wise softmax over the last axis, max-subtracted.
template <class T>
Array<T> softmax_rows(const Array<T>& x) {
  Array<T> out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    T* row = out.row(r);
    const T mx = *std::max_element(row, row + x.cols());
    T sum = 0;
    for (std::size_t c = 0; c < x.cols(); ++c) sum += (row[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < x.cols(); ++c) row[c] /= sum;
  }
  return out;
}

template <class T>
Var<T> softmax(Var<T> a) {
  return a.tape->record(Op::kSoftmax, softmax_rows(a.value()), {a.id}, [a = a.id](Tape<T>& t, std::uint32_t self) {
    const Array<T>& g = t.upstream(self);
    const Array<T>& y = t.value(self);
    Array<T>& ga = t.grad_buffer(a);
    const std::size_t n = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
    }
  });
}

/// Row-wise normalization to zero mean and unit variance (eps 1e-5), then
/// gain * x_hat + bias with gain/bias of width cols.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias) {
  Tape<T>& tape = detail::same_tape(x, gain);
  const Array<T>& xv = x.value();
  const Array<T>& gv = gain.value();
  const Array<T>& bv = bias.value();
  const std::size_t rows = xv.rows(), n = xv.cols();
  if (gv.size() != n || bv.size() != n) detail::shape_mismatch("layer_norm", xv.shape_string(), gv.shape_string());
  constexpr T kEps = T(1e-5);
  Array<T> out = Array<T>::like(xv);
  std::vector<T> xhat(xv.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.row(r);
    T mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= T(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= T(n);
    inv_std[r] = T(1) / std::sqrt(var + kEps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (row[c] - mean) * inv_std[r];
      out[r * n + c] = gv[c] * xhat[r * n + c] + bv[c];
    }
  }
  return tape.record(Op::kLayerNorm, std::move(out), {x.id, gain.id, bias.id},
                     [x = x.id, g_id = gain.id, b_id = bias.id, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                      n](Tape<T>& t, std::uint32_t self) {
                       const Array<T>& g = t.upstream(self);
                       if (t.requires_grad(g_id)) {
                         Array<T>& gg = t.grad_buffer(g_id);
                         for (std::size_t i = 0; i < g.size(); ++i) gg[i % n] += g[i] * xhat[i];
                       }
                       if (t.requires_grad(b_id)) {
                         Array<T>& gb = t.grad_buffer(b_id);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                       }
                       if (t.requires_grad(x)) {
                         const Array<T>& gain = t.value(g_id);
                         Array<T>& gx = t.grad_buffer(x);
                         for (std::size_t r = 0; r < rows; ++r) {
                           T mean_d = 0, mean_dx = 0;
                           for (std::size_t c = 0; c < n; ++c) {
                             const T d = g[r * n + c] * gain[c];
                             mean_d += d;
                             mean_dx += d * xhat[r * n + c];
                           }
                           mean_d /= T(n);
                           mean_dx /= T(n);
                           for (std::size_t c = 0; c < n; ++c) {
                             const T d = g[r * n + c] * gain[c];
                             gx[r * n + c] += inv_std[r] * (d - mean_d - xhat[r * n + c] * mean_dx);
                           }
                         }
                       }
                     });
}

/// Mean over rows of -log softmax(logits)[label].
template <class T>
Var<T> cross_entropy_logits(Var<T> logits, std::vector<std::int32_t> labels) {
  const Array<T>& z = logits.value();
  const std::size_t rows = z.rows(), n = z.cols();
  if (labels.size() != rows) {
    throw ShapeError("cross_entropy_logits: " + std::to_string(labels.size()) + " labels for logits " + z.shape_string());
  }
  Array<T> probs = softmax_rows(z);
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= n) {
      throw LookupError("cross_entropy_logits: label " + std::to_string(labels[r]) + " outside " + std::to_string(n) + " classes");
    }
    const T* row = z.row(r);
    const T mx = *std::max_element(row, row + n);
    T sum = 0;
    for (std::size_t c = 0; c < n; ++c) sum += std::exp(row[c] - mx);
    loss += mx + std::log(sum) - row[labels[r]];
  }
  loss /= T(rows);
  return logits.tape->record(Op::kCrossEntropy, Array<T>::scalar(loss), {logits.id},
                             [id = logits.id, probs = std::move(probs), labels = std::move(labels), rows, n](Tape<T>& t, std::uint32_t self) {
                               const T g = t.upstream(self)[0] / T(rows);
                               Array<T>& gz = t.grad_buffer(id);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t c = 0; c < n; ++c) gz[r * n + c] += g * probs[r * n + c];
                                 gz[r * n + static_cast<std::size_t>(labels[r])] -= g;
                               }
                             });
}

template <class T>
Var<T> sum(Var<T> a) {
  T total = 0;
  for (T v : a.value().values()) total += v;
  return a.tape->record(Op::kSum, Array<T>::scalar(total), {a.id}, [a = a.id](Tape<T>& t, std::uint32_t self) {
    const T g = t.upstream(self)[0];
    Array<T>& ga = t.grad_buffer(a);
    for (auto& v : ga.values()) v += g;
  });
}

}  // namespace mocdt::diff
