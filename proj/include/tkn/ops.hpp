// Copyright 2026 The tkn Authors
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

// Differentiable operators. Every function evaluates its forward kernel,
// appends a node to the tape of its first argument and registers the matching
// gradient rule.

#ifndef TKN_OPS_HPP_
#define TKN_OPS_HPP_

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tkn/kernels.hpp"
#include "tkn/tape.hpp"

namespace tkn::ops {

namespace detail {

inline Tape& tape_of(Var v) { return *v.tape; }

inline void same_tape(Var a, Var b, const char* what) {
  if (a.tape != b.tape) throw Error(std::string(what) + ": operands live on different tapes");
}

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

inline Var add(Var a, Var b) {
  detail::same_tape(a, b, "add");
  a.value().require_same_shape(b.value(), "add");
  Tensor y = a.value();
  y += b.value();
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_tape(a, b, "sub");
  a.value().require_same_shape(b.value(), "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(a, g);
    if (t.needs_grad(b)) t.accumulate(b, detail::map(g, [](double v) { return -v; }));
  });
}

inline Var mul(Var a, Var b) {
  detail::same_tape(a, b, "mul");
  a.value().require_same_shape(b.value(), "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (t.needs_grad(a)) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= t.value(b)[i];
      t.accumulate(a, std::move(ga));
    }
    if (t.needs_grad(b)) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= t.value(a)[i];
      t.accumulate(b, std::move(gb));
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor y = detail::map(a.value(), [s](double v) { return v * s; });
  return a.tape->record(std::move(y), {a}, [a, s](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(a, detail::map(g, [s](double v) { return v * s; }));
  });
}

/// a: [B, ...]; b: [1, ...] broadcast over the leading axis, or the same shape.
inline Var add_batch_broadcast(Var a, Var b) {
  detail::same_tape(a, b, "add_batch_broadcast");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() == bv.shape()) return add(a, b);
  if (av.rank() != bv.rank() || bv.dim(0) != 1 ||
      !std::equal(av.shape().begin() + 1, av.shape().end(), bv.shape().begin() + 1)) {
    throw Error("add_batch_broadcast: cannot broadcast " + to_string(bv.shape()) + " onto " +
                to_string(av.shape()));
  }
  const std::size_t per = bv.size(), batch = av.dim(0);
  Tensor y = av;
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t i = 0; i < per; ++i) y[n * per + i] += bv[i];
  return a.tape->record(std::move(y), {a, b},
                        [a, b, per, batch](Tape& t, const Tensor& g, const Tensor&) {
                          t.accumulate(a, g);
                          if (t.needs_grad(b)) {
                            Tensor gb(t.value(b).shape());
                            for (std::size_t n = 0; n < batch; ++n)
                              for (std::size_t i = 0; i < per; ++i) gb[i] += g[n * per + i];
                            t.accumulate(b, std::move(gb));
                          }
                        });
}

/// Adds bias [D] along the last axis of x.
inline Var add_bias(Var x, Var bias) {
  detail::same_tape(x, bias, "add_bias");
  const Tensor& xv = x.value();
  const std::size_t d = xv.dim(xv.rank() - 1);
  if (bias.value().size() != d) {
    throw Error("add_bias: bias " + to_string(bias.value().shape()) + " for input " +
                to_string(xv.shape()));
  }
  Tensor y = xv;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias.value()[i % d];
  return x.tape->record(std::move(y), {x, bias}, [x, bias, d](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(x, g);
    if (t.needs_grad(bias)) {
      Tensor gb(t.value(bias).shape());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
      t.accumulate(bias, std::move(gb));
    }
  });
}

// ---------------------------------------------------------------------------
// activations

inline Var relu(Var x) {
  Tensor y = detail::map(x.value(), [](double v) { return v >= 0.0 ? v : 0.0; });
  return x.tape->record(std::move(y), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
    Tensor gx = g;
    const Tensor& xv = t.value(x);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (xv[i] < 0.0) gx[i] = 0.0;
    t.accumulate(x, std::move(gx));
  });
}

inline Var leaky_relu(Var x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw Error("leaky_relu: slope must lie in (0,1)");
  Tensor y = detail::map(x.value(), [slope](double v) { return v >= 0.0 ? v : slope * v; });
  return x.tape->record(std::move(y), {x}, [x, slope](Tape& t, const Tensor& g, const Tensor&) {
    Tensor gx = g;
    const Tensor& xv = t.value(x);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (xv[i] < 0.0) gx[i] *= slope;
    t.accumulate(x, std::move(gx));
  });
}

inline Var sigmoid(Var x) {
  Tensor y = detail::map(x.value(), [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  return x.tape->record(std::move(y), {x}, [x](Tape& t, const Tensor& g, const Tensor& out) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= out[i] * (1.0 - out[i]);
    t.accumulate(x, std::move(gx));
  });
}

inline Var softmax(Var x, std::size_t axis) {
  Tensor y = kernels::softmax(x.value(), axis);
  return x.tape->record(std::move(y), {x}, [x, axis](Tape& t, const Tensor& g, const Tensor& out) {
    t.accumulate(x, kernels::softmax_backward(out, g, axis));
  });
}

// ---------------------------------------------------------------------------
// linear algebra and convolution

inline Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
  detail::same_tape(a, b, "matmul");
  Tensor y = kernels::matmul(a.value(), b.value(), trans_a, trans_b);
  return a.tape->record(std::move(y), {a, b},
                        [a, b, trans_a, trans_b](Tape& t, const Tensor& g, const Tensor&) {
                          const Tensor& av = t.value(a);
                          const Tensor& bv = t.value(b);
                          // C = op(A) op(B): dop(A) = dC op(B)^T, dop(B) = op(A)^T dC.
                          if (t.needs_grad(a)) {
                            t.accumulate(a, trans_a ? kernels::matmul(bv, g, trans_b, true)
                                                    : kernels::matmul(g, bv, false, !trans_b));
                          }
                          if (t.needs_grad(b)) {
                            t.accumulate(b, trans_b ? kernels::matmul(g, av, true, trans_a)
                                                    : kernels::matmul(av, g, !trans_a, false));
                          }
                        });
}

inline Var conv2d(Var x, Var w, std::optional<Var> bias, kernels::ConvGeometry geom) {
  detail::same_tape(x, w, "conv2d");
  Tensor y = kernels::conv2d(x.value(), w.value(), bias ? &bias->value() : nullptr, geom);
  const bool has_bias = bias.has_value();
  const Var b = bias.value_or(w);
  return x.tape->record(std::move(y), {x, w, b},
                        [x, w, b, has_bias, geom](Tape& t, const Tensor& g, const Tensor&) {
                          auto grads = kernels::conv2d_backward(t.value(x), t.value(w), g, geom,
                                                                t.needs_grad(x), has_bias);
                          if (t.needs_grad(x)) t.accumulate(x, std::move(grads.dx));
                          t.accumulate(w, std::move(grads.dw));
                          if (has_bias) t.accumulate(b, std::move(grads.db));
                        });
}

inline Var conv2d_transpose(Var x, Var w, std::optional<Var> bias, kernels::ConvGeometry geom) {
  detail::same_tape(x, w, "conv2d_transpose");
  Tensor y =
      kernels::conv2d_transpose(x.value(), w.value(), bias ? &bias->value() : nullptr, geom);
  const bool has_bias = bias.has_value();
  const Var b = bias.value_or(w);
  return x.tape->record(std::move(y), {x, w, b},
                        [x, w, b, has_bias, geom](Tape& t, const Tensor& g, const Tensor&) {
                          auto grads = kernels::conv2d_transpose_backward(
                              t.value(x), t.value(w), g, geom, t.needs_grad(x), has_bias);
                          if (t.needs_grad(x)) t.accumulate(x, std::move(grads.dx));
                          t.accumulate(w, std::move(grads.dw));
                          if (has_bias) t.accumulate(b, std::move(grads.db));
                        });
}

// ---------------------------------------------------------------------------
// normalization

inline Var group_norm(Var x, std::size_t groups, Var gamma, Var beta, double eps) {
  auto [y, st] = kernels::group_norm(x.value(), groups, eps, &gamma.value(), &beta.value());
  return x.tape->record(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, groups, st = std::move(st)](Tape& t, const Tensor& g, const Tensor&) {
        auto grads = kernels::group_norm_backward(t.value(x), g, groups, st, &t.value(gamma),
                                                  t.needs_grad(x));
        if (t.needs_grad(x)) t.accumulate(x, std::move(grads.dx));
        t.accumulate(gamma, std::move(grads.dgamma));
        t.accumulate(beta, std::move(grads.dbeta));
      });
}

inline Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  auto [y, st] = kernels::layer_norm(x.value(), eps, &gamma.value(), &beta.value());
  return x.tape->record(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, st = std::move(st)](Tape& t, const Tensor& g, const Tensor&) {
        auto grads = kernels::layer_norm_backward(t.value(x), g, st, &t.value(gamma),
                                                  t.needs_grad(x));
        if (t.needs_grad(x)) t.accumulate(x, std::move(grads.dx));
        t.accumulate(gamma, std::move(grads.dgamma));
        t.accumulate(beta, std::move(grads.dbeta));
      });
}

// ---------------------------------------------------------------------------
// shape manipulation

inline Var reshape(Var x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(y), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(x, g.reshaped(t.value(x).shape()));
  });
}

namespace detail {
inline void axis_split(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

/// Concatenates along `axis`; all other extents must agree.
inline Var concat(const std::vector<Var>& xs, std::size_t axis) {
  if (xs.empty()) throw Error("concat: no inputs");
  const Shape& first = xs.front().value().shape();
  if (axis >= first.size()) throw Error("concat: axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& v : xs) {
    detail::same_tape(xs.front(), v, "concat");
    const Shape& s = v.value().shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw Error("concat: incompatible shapes " + to_string(first) + " and " + to_string(s));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 0, inner = 0;
  detail::axis_split(out_shape, axis, outer, inner);
  Tensor y(out_shape);
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const Var& v : xs) {
    const std::size_t w = v.value().dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.value().raw() + o * w, w, y.raw() + o * out_shape[axis] * inner + offset);
    offset += w;
    widths.push_back(w);
  }
  Tape& tape = *xs.front().tape;
  std::vector<Var> inputs = xs;
  const std::size_t total = out_shape[axis] * inner;
  Tape::Backward fn = [inputs, widths, outer, total](Tape& t, const Tensor& g, const Tensor&) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const std::size_t w = widths[k];
      if (t.needs_grad(inputs[k])) {
        Tensor gi(t.value(inputs[k]).shape());
        for (std::size_t o = 0; o < outer; ++o)
          std::copy_n(g.raw() + o * total + off, w, gi.raw() + o * w);
        t.accumulate(inputs[k], std::move(gi));
      }
      off += w;
    }
  };
  return tape.record(std::move(y), std::span<const Var>(xs), std::move(fn));
}

/// Elements [begin, end) along `axis`.
inline Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.value().shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw Error("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                ") invalid on axis " + std::to_string(axis) + " of " + to_string(s));
  }
  std::size_t outer = 0, inner = 0;
  detail::axis_split(s, axis, outer, inner);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t src_w = s[axis] * inner, w = (end - begin) * inner, off = begin * inner;
  Tensor y(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.value().raw() + o * src_w + off, w, y.raw() + o * w);
  return x.tape->record(std::move(y), {x},
                        [x, outer, src_w, w, off](Tape& t, const Tensor& g, const Tensor&) {
                          Tensor gx(t.value(x).shape());
                          for (std::size_t o = 0; o < outer; ++o)
                            std::copy_n(g.raw() + o * w, w, gx.raw() + o * src_w + off);
                          t.accumulate(x, std::move(gx));
                        });
}

// ---------------------------------------------------------------------------
// reductions and losses

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(x, Tensor(t.value(x).shape(), g.item()));
  });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Mean over `axis`, which is removed from the shape.
inline Var mean_axis(Var x, std::size_t axis) {
  const Shape& s = x.value().shape();
  if (axis >= s.size()) throw Error("mean_axis: axis out of range for " + to_string(s));
  std::size_t outer = 0, inner = 0;
  detail::axis_split(s, axis, outer, inner);
  const std::size_t len = s[axis];
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor y(out_shape);
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t in = 0; in < inner; ++in)
        y[o * inner + in] += x.value()[(o * len + i) * inner + in];
  for (auto& v : y.data()) v *= inv;
  return x.tape->record(std::move(y), {x},
                        [x, outer, inner, len, inv](Tape& t, const Tensor& g, const Tensor&) {
                          Tensor gx(t.value(x).shape());
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t i = 0; i < len; ++i)
                              for (std::size_t in = 0; in < inner; ++in)
                                gx[(o * len + i) * inner + in] = g[o * inner + in] * inv;
                          t.accumulate(x, std::move(gx));
                        });
}

/// Mean of squared differences over all elements.
inline Var mse(Var a, Var b) {
  detail::same_tape(a, b, "mse");
  a.value().require_same_shape(b.value(), "mse");
  const std::size_t n = a.value().size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  const double inv = 1.0 / static_cast<double>(n);
  return a.tape->record(Tensor::scalar(s * inv), {a, b},
                        [a, b, inv](Tape& t, const Tensor& g, const Tensor&) {
                          const Tensor& av = t.value(a);
                          const Tensor& bv = t.value(b);
                          Tensor ga(av.shape());
                          const double k = 2.0 * inv * g.item();
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = k * (av[i] - bv[i]);
                          if (t.needs_grad(b)) {
                            t.accumulate(b, detail::map(ga, [](double v) { return -v; }));
                          }
                          t.accumulate(a, std::move(ga));
                        });
}

// ---------------------------------------------------------------------------
// multi-head scaled dot-product attention

struct AttentionShape {
  std::size_t batch = 1;   // independent sequences
  std::size_t length = 1;  // positions per sequence
  std::size_t heads = 1;
  std::size_t d_k = 1;
  std::size_t d_v = 1;
};

namespace detail {
using RowMat = kernels::detail::RowMat;
using Strided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StridedMut = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
}  // namespace detail

/// q, k: [batch*length, heads*d_k]; v: [batch*length, heads*d_v]. Returns the
/// concatenated head outputs [batch*length, heads*d_v]. When `weights` is not
/// null it receives one row-stochastic [length, length] matrix per
/// (sequence, head), sequence-major.
inline Var attention(Var q, Var k, Var v, AttentionShape as,
                     std::vector<Tensor>* weights = nullptr) {
  const std::size_t rows = as.batch * as.length;
  const std::size_t qk_w = as.heads * as.d_k, v_w = as.heads * as.d_v;
  auto check = [&](Var x, std::size_t w, const char* name) {
    if (x.value().rank() != 2 || x.value().dim(0) != rows || x.value().dim(1) != w) {
      throw Error(std::string("attention: ") + name + " has shape " + to_string(x.value().shape()) +
                  ", expected [" + std::to_string(rows) + "x" + std::to_string(w) + "]");
    }
  };
  check(q, qk_w, "Q");
  check(k, qk_w, "K");
  check(v, v_w, "V");
  const auto L = static_cast<Eigen::Index>(as.length);
  const auto dk = static_cast<Eigen::Index>(as.d_k);
  const auto dv = static_cast<Eigen::Index>(as.d_v);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(as.d_k));

  // Attention weights for every (sequence, head) are kept for the backward pass.
  auto probs = std::make_shared<std::vector<detail::RowMat>>();
  probs->reserve(as.batch * as.heads);
  Tensor y({rows, v_w});
  for (std::size_t b = 0; b < as.batch; ++b) {
    for (std::size_t h = 0; h < as.heads; ++h) {
      const std::size_t r0 = b * as.length;
      detail::Strided Q(q.value().raw() + r0 * qk_w + h * as.d_k, L, dk, Eigen::OuterStride<>(qk_w));
      detail::Strided K(k.value().raw() + r0 * qk_w + h * as.d_k, L, dk, Eigen::OuterStride<>(qk_w));
      detail::Strided V(v.value().raw() + r0 * v_w + h * as.d_v, L, dv, Eigen::OuterStride<>(v_w));
      detail::RowMat S = (Q * K.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < L; ++i) {
        const double mx = S.row(i).maxCoeff();
        S.row(i) = (S.row(i).array() - mx).exp().matrix();
        S.row(i) /= S.row(i).sum();
      }
      detail::StridedMut O(y.raw() + r0 * v_w + h * as.d_v, L, dv, Eigen::OuterStride<>(v_w));
      O.noalias() = S * V;
      if (weights) {
        Tensor wt({as.length, as.length});
        std::copy_n(S.data(), S.size(), wt.raw());
        weights->push_back(std::move(wt));
      }
      probs->push_back(std::move(S));
    }
  }
  Tape& tape = *q.tape;
  return tape.record(
      std::move(y), {q, k, v},
      [q, k, v, as, probs, inv_sqrt, L, dk, dv, qk_w, v_w](Tape& t, const Tensor& g, const Tensor&) {
        Tensor gq(t.value(q).shape()), gk(t.value(k).shape()), gv(t.value(v).shape());
        for (std::size_t b = 0; b < as.batch; ++b) {
          for (std::size_t h = 0; h < as.heads; ++h) {
            const std::size_t r0 = b * as.length;
            const detail::RowMat& P = (*probs)[b * as.heads + h];
            detail::Strided Q(t.value(q).raw() + r0 * qk_w + h * as.d_k, L, dk,
                              Eigen::OuterStride<>(qk_w));
            detail::Strided K(t.value(k).raw() + r0 * qk_w + h * as.d_k, L, dk,
                              Eigen::OuterStride<>(qk_w));
            detail::Strided V(t.value(v).raw() + r0 * v_w + h * as.d_v, L, dv,
                              Eigen::OuterStride<>(v_w));
            detail::Strided G(g.raw() + r0 * v_w + h * as.d_v, L, dv, Eigen::OuterStride<>(v_w));
            detail::StridedMut GV(gv.raw() + r0 * v_w + h * as.d_v, L, dv, Eigen::OuterStride<>(v_w));
            GV.noalias() += P.transpose() * G;
            detail::RowMat dP = G * V.transpose();
            // Row-wise softmax backward, then the 1/sqrt(d_k) scale.
            detail::RowMat dS(L, L);
            for (Eigen::Index i = 0; i < L; ++i) {
              const double s = P.row(i).dot(dP.row(i));
              dS.row(i) = (P.row(i).array() * (dP.row(i).array() - s)).matrix();
            }
            dS *= inv_sqrt;
            detail::StridedMut GQ(gq.raw() + r0 * qk_w + h * as.d_k, L, dk, Eigen::OuterStride<>(qk_w));
            detail::StridedMut GK(gk.raw() + r0 * qk_w + h * as.d_k, L, dk, Eigen::OuterStride<>(qk_w));
            GQ.noalias() += dS * K;
            GK.noalias() += dS.transpose() * Q;
          }
        }
        t.accumulate(q, std::move(gq));
        t.accumulate(k, std::move(gk));
        t.accumulate(v, std::move(gv));
      });
}
}  // namespace tkn::ops

#endif  // TKN_OPS_HPP_
