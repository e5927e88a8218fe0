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

// Forward and backward numerical kernels on plain tensors. The autodiff layer
// in ops.hpp wraps these; nothing here knows about tapes.

#ifndef TKN_KERNELS_HPP_
#define TKN_KERNELS_HPP_

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tkn/tensor.hpp"

namespace tkn::kernels {

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// c[m x n] (+)= op(a) * op(b), with op(a) [m x k] and op(b) [k x n].
inline void gemm(const double* a, bool trans_a, const double* b, bool trans_b, double* c,
                 std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto K = static_cast<Eigen::Index>(k);
  const auto N = static_cast<Eigen::Index>(n);
  MutMap C(c, M, N);
  auto run = [&](const auto& A, const auto& B) {
    if (accumulate) {
      C.noalias() += A * B;
    } else {
      C.noalias() = A * B;
    }
  };
  if (!trans_a && !trans_b) run(ConstMap(a, M, K), ConstMap(b, K, N));
  if (!trans_a && trans_b) run(ConstMap(a, M, K), ConstMap(b, N, K).transpose());
  if (trans_a && !trans_b) run(ConstMap(a, K, M).transpose(), ConstMap(b, K, N));
  if (trans_a && trans_b) run(ConstMap(a, K, M).transpose(), ConstMap(b, N, K).transpose());
}
}  // namespace detail

// ---------------------------------------------------------------------------
// matmul

inline Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
                     bool trans_b = false) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw Error("matmul: expected 2-D operands, got " + to_string(a.shape()) + " and " +
                to_string(b.shape()));
  }
  const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
  const std::size_t ka = trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw Error("matmul: inner extents differ, " + to_string(a.shape()) +
                (trans_a ? "^T" : "") + " * " + to_string(b.shape()) + (trans_b ? "^T" : ""));
  }
  Tensor c({m, n});
  detail::gemm(a.raw(), trans_a, b.raw(), trans_b, c.raw(), m, ka, n, false);
  return c;
}

// ---------------------------------------------------------------------------
// convolution geometry

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t output_padding = 0;  // transposed convolution only
};

inline std::size_t conv_output_extent(std::size_t in, std::size_t k, const ConvGeometry& g) {
  if (g.stride == 0) throw Error("conv2d: stride must be >= 1");
  if (in + 2 * g.pad < k) {
    throw Error("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                std::to_string(in + 2 * g.pad));
  }
  return (in + 2 * g.pad - k) / g.stride + 1;
}

inline std::size_t conv_transpose_output_extent(std::size_t in, std::size_t k,
                                                const ConvGeometry& g) {
  if (g.stride == 0) throw Error("conv2d_transpose: stride must be >= 1");
  if (g.output_padding >= g.stride) {
    throw Error("conv2d_transpose: output_padding must be smaller than stride");
  }
  const long long out = static_cast<long long>((in - 1) * g.stride + k + g.output_padding) -
                        2 * static_cast<long long>(g.pad);
  if (out <= 0) {
    throw Error("conv2d_transpose: computed output extent " + std::to_string(out) + " <= 0");
  }
  return static_cast<std::size_t>(out);
}

namespace detail {

struct Planar {
  std::size_t n, c, h, w;
};

inline Planar as_planar(const Tensor& x, const char* what) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  throw Error(std::string(what) + ": expected [C,H,W] or [N,C,H,W], got " + to_string(x.shape()));
}

inline Shape planar_shape(bool batched, std::size_t n, std::size_t c, std::size_t h,
                          std::size_t w) {
  return batched ? Shape{n, c, h, w} : Shape{c, h, w};
}

// Output columns [lo, hi) whose tap kx lands inside a row of width w.
inline std::pair<std::size_t, std::size_t> valid_columns(std::size_t kx, const ConvGeometry& g, std::size_t w,
                                                         std::size_t wo) {
  std::size_t lo = 0;
  if (kx < g.pad) lo = (g.pad - kx + g.stride - 1) / g.stride;
  // largest ox with ox*stride + kx - pad <= w - 1
  const std::size_t reach = w - 1 + g.pad;
  std::size_t hi = reach < kx ? 0 : (reach - kx) / g.stride + 1;
  hi = std::min(hi, wo);
  return {std::min(lo, hi), hi};
}

// Unfolds one [c, h, w] image into columns [c*k*k, ld] starting at column
// `col0`; each column holds the receptive field of one output pixel.
inline void im2col(const double* x, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                   const ConvGeometry& g, std::size_t ho, std::size_t wo, double* col,
                   std::size_t ld, std::size_t col0) {
  const long long pad = static_cast<long long>(g.pad);
  for (std::size_t ci = 0; ci < c; ++ci) {
    const double* plane = x + ci * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col + ((ci * k + ky) * k + kx) * ld + col0;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long long iy = static_cast<long long>(oy * g.stride + ky) - pad;
          double* dst = row + oy * wo;
          if (iy < 0 || iy >= static_cast<long long>(h)) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * w;
          const auto [lo, hi] = valid_columns(kx, g, w, wo);
          std::fill(dst, dst + lo, 0.0);
          std::fill(dst + hi, dst + wo, 0.0);
          const double* sp = src + (lo * g.stride + kx - g.pad);
          if (g.stride == 1) {
            std::copy(sp, sp + (hi - lo), dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox, sp += g.stride) dst[ox] = *sp;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back into the [c, h, w] image.
inline void col2im(const double* col, std::size_t ld, std::size_t col0, std::size_t c,
                   std::size_t h, std::size_t w, std::size_t k, const ConvGeometry& g,
                   std::size_t ho, std::size_t wo, double* x) {
  const long long pad = static_cast<long long>(g.pad);
  for (std::size_t ci = 0; ci < c; ++ci) {
    double* plane = x + ci * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((ci * k + ky) * k + kx) * ld + col0;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long long iy = static_cast<long long>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long long>(h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * w;
          const double* src = row + oy * wo;
          const auto [lo, hi] = valid_columns(kx, g, w, wo);
          double* dp = dst + (lo * g.stride + kx - g.pad);
          for (std::size_t ox = lo; ox < hi; ++ox, dp += g.stride) *dp += src[ox];
        }
      }
    }
  }
}

inline void check_kernel(const Tensor& w, const char* what) {
  if (w.rank() != 4 || w.dim(2) != w.dim(3)) {
    throw Error(std::string(what) + ": kernel must be [A,B,k,k], got " + to_string(w.shape()));
  }
  if (w.dim(2) % 2 == 0) {
    throw Error(std::string(what) + ": kernel size must be odd, got " + std::to_string(w.dim(2)));
  }
}

inline void add_channel_bias(Tensor& y, const Tensor* bias, std::size_t n, std::size_t c,
                             std::size_t s) {
  if (!bias) return;
  if (bias->size() != c) {
    throw Error("conv: bias of shape " + to_string(bias->shape()) + " for " + std::to_string(c) +
                " channels");
  }
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci) {
      double* p = y.raw() + (b * c + ci) * s;
      const double v = (*bias)[ci];
      for (std::size_t i = 0; i < s; ++i) p[i] += v;
    }
}

inline Tensor channel_bias_grad(const Tensor& dy, std::size_t n, std::size_t c, std::size_t s) {
  Tensor db({c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* p = dy.raw() + (b * c + ci) * s;
      double acc = 0.0;
      for (std::size_t i = 0; i < s; ++i) acc += p[i];
      db[ci] += acc;
    }
  return db;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: cross-correlation with zero padding.
// x: [C_in,H,W] or [N,C_in,H,W]; w: [C_out,C_in,k,k]; bias: [C_out] or null.

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvGeometry& g) {
  detail::check_kernel(w, "conv2d");
  const auto p = detail::as_planar(x, "conv2d");
  const std::size_t co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != p.c) {
    throw Error("conv2d: input has " + std::to_string(p.c) + " channels, kernel " +
                to_string(w.shape()));
  }
  const std::size_t ho = conv_output_extent(p.h, k, g);
  const std::size_t wo = conv_output_extent(p.w, k, g);
  const std::size_t s = ho * wo, rows = p.c * k * k;
  Tensor y(detail::planar_shape(x.rank() == 4, p.n, co, ho, wo));
  std::vector<double> col(rows * s);
  for (std::size_t b = 0; b < p.n; ++b) {
    detail::im2col(x.raw() + b * p.c * p.h * p.w, p.c, p.h, p.w, k, g, ho, wo, col.data(), s, 0);
    detail::gemm(w.raw(), false, col.data(), false, y.raw() + b * co * s, co, rows, s, false);
  }
  detail::add_channel_bias(y, bias, p.n, co, s);
  return y;
}

struct ConvGrads {
  Tensor dx, dw, db;
};

inline ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                                 const ConvGeometry& g, bool need_dx, bool need_bias) {
  const auto p = detail::as_planar(x, "conv2d");
  const std::size_t co = w.dim(0), k = w.dim(2);
  const std::size_t ho = conv_output_extent(p.h, k, g);
  const std::size_t wo = conv_output_extent(p.w, k, g);
  const std::size_t s = ho * wo, rows = p.c * k * k;
  std::vector<double> col(rows * s);
  ConvGrads grads;
  grads.dw = Tensor(w.shape());
  if (need_dx) grads.dx = Tensor(x.shape());
  for (std::size_t b = 0; b < p.n; ++b) {
    const double* dyb = dy.raw() + b * co * s;
    detail::im2col(x.raw() + b * p.c * p.h * p.w, p.c, p.h, p.w, k, g, ho, wo, col.data(), s, 0);
    detail::gemm(dyb, false, col.data(), true, grads.dw.raw(), co, s, rows, b > 0);
    if (need_dx) {
      detail::gemm(w.raw(), true, dyb, false, col.data(), rows, co, s, false);
      detail::col2im(col.data(), s, 0, p.c, p.h, p.w, k, g, ho, wo, grads.dx.raw() + b * p.c * p.h * p.w);
    }
  }
  if (need_bias) grads.db = detail::channel_bias_grad(dy, p.n, co, s);
  return grads;
}

// ---------------------------------------------------------------------------
// conv2d_transpose: adjoint of conv2d with the same kernel.
// x: [C_a,H,W] or [N,C_a,H,W]; w: [C_a,C_b,k,k] (the kernel of a conv2d mapping
// C_b -> C_a); output [.., C_b, H', W'] with H' = (H-1)s - 2p + k + output_padding.

inline Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor* bias,
                               const ConvGeometry& g) {
  detail::check_kernel(w, "conv2d_transpose");
  const auto p = detail::as_planar(x, "conv2d_transpose");
  if (w.dim(0) != p.c) {
    throw Error("conv2d_transpose: input has " + std::to_string(p.c) + " channels, kernel " +
                to_string(w.shape()));
  }
  const std::size_t cb = w.dim(1), k = w.dim(2);
  const std::size_t ho = conv_transpose_output_extent(p.h, k, g);
  const std::size_t wo = conv_transpose_output_extent(p.w, k, g);
  if (g.stride == 1 && g.output_padding == 0 && g.pad < k) {
    // Stride 1: a plain convolution with the flipped, transposed kernel.
    Tensor wf({cb, p.c, k, k});
    for (std::size_t a = 0; a < p.c; ++a)
      for (std::size_t c = 0; c < cb; ++c)
        for (std::size_t i = 0; i < k * k; ++i) wf.raw()[(c * p.c + a) * k * k + i] = w.raw()[(a * cb + c) * k * k + (k * k - 1 - i)];
    return conv2d(x, wf, bias, ConvGeometry{1, k - 1 - g.pad, 0});
  }
  const std::size_t s = p.h * p.w, rows = cb * k * k;
  Tensor y(detail::planar_shape(x.rank() == 4, p.n, cb, ho, wo));
  std::vector<double> col(rows * s);
  for (std::size_t b = 0; b < p.n; ++b) {
    detail::gemm(w.raw(), true, x.raw() + b * p.c * s, false, col.data(), rows, p.c, s, false);
    detail::col2im(col.data(), s, 0, cb, ho, wo, k, g, p.h, p.w, y.raw() + b * cb * ho * wo);
  }
  detail::add_channel_bias(y, bias, p.n, cb, ho * wo);
  return y;
}

inline ConvGrads conv2d_transpose_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                                           const ConvGeometry& g, bool need_dx, bool need_bias) {
  const auto p = detail::as_planar(x, "conv2d_transpose");
  const std::size_t cb = w.dim(1), k = w.dim(2);
  const std::size_t ho = conv_transpose_output_extent(p.h, k, g);
  const std::size_t wo = conv_transpose_output_extent(p.w, k, g);
  const std::size_t s = p.h * p.w, rows = cb * k * k;
  // The gradient w.r.t. the input is an ordinary convolution of dy.
  std::vector<double> col(rows * s);
  ConvGrads grads;
  grads.dw = Tensor(w.shape());
  if (need_dx) grads.dx = Tensor(x.shape());
  for (std::size_t b = 0; b < p.n; ++b) {
    detail::im2col(dy.raw() + b * cb * ho * wo, cb, ho, wo, k, g, p.h, p.w, col.data(), s, 0);
    const double* xb = x.raw() + b * p.c * s;
    detail::gemm(xb, false, col.data(), true, grads.dw.raw(), p.c, s, rows, b > 0);
    if (need_dx) detail::gemm(w.raw(), false, col.data(), false, grads.dx.raw() + b * p.c * s, p.c, rows, s, false);
  }
  if (need_bias) grads.db = detail::channel_bias_grad(dy, p.n, cb, ho * wo);
  return grads;
}

// ---------------------------------------------------------------------------
// Normalization. Both kernels normalize contiguous blocks: group_norm over
// (C/G)*spatial elements per (sample, group), layer_norm over the last axis.

struct NormStats {
  std::vector<double> mean;
  std::vector<double> rstd;
};

namespace detail {

// Normalizes `blocks` contiguous blocks of `len` elements. Element i of block b
// uses affine index (b % blocks_per_affine_cycle ...) supplied by `channel_of`.
template <typename ChannelOf>
inline NormStats normalize_blocks(const double* x, double* y, std::size_t blocks, std::size_t len,
                                  double eps, const Tensor* gamma, const Tensor* beta,
                                  std::size_t run, ChannelOf channel_of) {
  NormStats st{std::vector<double>(blocks), std::vector<double>(blocks)};
  for (std::size_t b = 0; b < blocks; ++b) {
    const double* xb = x + b * len;
    double mean = 0.0;
    for (std::size_t i = 0; i < len; ++i) mean += xb[i];
    mean /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t i = 0; i < len; ++i) var += (xb[i] - mean) * (xb[i] - mean);
    var /= static_cast<double>(len);
    const double rstd = 1.0 / std::sqrt(var + eps);
    st.mean[b] = mean;
    st.rstd[b] = rstd;
    double* yb = y + b * len;
    // The affine index is constant over runs of `run` elements.
    for (std::size_t i0 = 0; i0 < len; i0 += run) {
      double scale = rstd, shift = -mean * rstd;
      if (gamma) {
        const std::size_t c = channel_of(b, i0);
        scale = rstd * (*gamma)[c];
        shift = (*beta)[c] - mean * scale;
      }
      const std::size_t i1 = std::min(len, i0 + run);
      for (std::size_t i = i0; i < i1; ++i) yb[i] = xb[i] * scale + shift;
    }
  }
  return st;
}

template <typename ChannelOf>
inline void normalize_blocks_backward(const double* x, const double* dy, double* dx,
                                      std::size_t blocks, std::size_t len, const NormStats& st,
                                      const Tensor* gamma, double* dgamma, double* dbeta,
                                      ChannelOf channel_of) {
  std::vector<double> dxhat(len);
  for (std::size_t b = 0; b < blocks; ++b) {
    const double* xb = x + b * len;
    const double* dyb = dy + b * len;
    const double mean = st.mean[b], rstd = st.rstd[b];
    double sum_d = 0.0, sum_dx = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double xhat = (xb[i] - mean) * rstd;
      double g = 1.0;
      if (gamma) {
        const std::size_t c = channel_of(b, i);
        g = (*gamma)[c];
        if (dgamma) dgamma[c] += dyb[i] * xhat;
        if (dbeta) dbeta[c] += dyb[i];
      }
      dxhat[i] = dyb[i] * g;
      sum_d += dxhat[i];
      sum_dx += dxhat[i] * xhat;
    }
    if (!dx) continue;
    const double inv = 1.0 / static_cast<double>(len);
    double* dxb = dx + b * len;
    for (std::size_t i = 0; i < len; ++i) {
      const double xhat = (xb[i] - mean) * rstd;
      dxb[i] = rstd * (dxhat[i] - sum_d * inv - xhat * sum_dx * inv);
    }
  }
}

inline void check_affine(const Tensor* gamma, const Tensor* beta, std::size_t c, const char* what) {
  if ((gamma == nullptr) != (beta == nullptr)) {
    throw Error(std::string(what) + ": scale and shift must be given together");
  }
  if (gamma && (gamma->size() != c || beta->size() != c)) {
    throw Error(std::string(what) + ": affine parameters must have " + std::to_string(c) +
                " entries");
  }
}

}  // namespace detail

/// x: [N,C,...] (or [C,...] treated as one sample); groups must divide C.
inline std::pair<Tensor, NormStats> group_norm(const Tensor& x, std::size_t groups, double eps,
                                               const Tensor* gamma = nullptr,
                                               const Tensor* beta = nullptr,
                                               bool batched = true) {
  if (eps <= 0.0) throw Error("group_norm: eps must be positive");
  if (x.rank() < (batched ? 2u : 1u)) throw Error("group_norm: rank too small " + to_string(x.shape()));
  const std::size_t n = batched ? x.dim(0) : 1;
  const std::size_t c = batched ? x.dim(1) : x.dim(0);
  if (groups == 0 || c % groups != 0) {
    throw Error("group_norm: " + std::to_string(c) + " channels not divisible into " +
                std::to_string(groups) + " groups");
  }
  detail::check_affine(gamma, beta, c, "group_norm");
  const std::size_t spatial = x.size() / (n * c);
  const std::size_t cpg = c / groups, len = cpg * spatial;
  Tensor y(x.shape());
  auto channel_of = [&](std::size_t block, std::size_t i) {
    return (block % groups) * cpg + i / spatial;
  };
  auto st = detail::normalize_blocks(x.raw(), y.raw(), n * groups, len, eps, gamma, beta, spatial,
                                     channel_of);
  return {std::move(y), std::move(st)};
}

struct NormGrads {
  Tensor dx, dgamma, dbeta;
};

inline NormGrads group_norm_backward(const Tensor& x, const Tensor& dy, std::size_t groups,
                                     const NormStats& st, const Tensor* gamma, bool need_dx,
                                     bool batched = true) {
  const std::size_t n = batched ? x.dim(0) : 1;
  const std::size_t c = batched ? x.dim(1) : x.dim(0);
  const std::size_t spatial = x.size() / (n * c);
  const std::size_t cpg = c / groups, len = cpg * spatial;
  NormGrads g;
  if (need_dx) g.dx = Tensor(x.shape());
  if (gamma) {
    g.dgamma = Tensor({c});
    g.dbeta = Tensor({c});
  }
  auto channel_of = [&](std::size_t block, std::size_t i) {
    return (block % groups) * cpg + i / spatial;
  };
  detail::normalize_blocks_backward(x.raw(), dy.raw(), need_dx ? g.dx.raw() : nullptr,
                                    n * groups, len, st, gamma,
                                    gamma ? g.dgamma.raw() : nullptr,
                                    gamma ? g.dbeta.raw() : nullptr, channel_of);
  return g;
}

/// Normalizes over the last axis; gamma/beta (if given) have the last extent.
inline std::pair<Tensor, NormStats> layer_norm(const Tensor& x, double eps,
                                               const Tensor* gamma = nullptr,
                                               const Tensor* beta = nullptr) {
  if (eps <= 0.0) throw Error("layer_norm: eps must be positive");
  if (x.rank() == 0) throw Error("layer_norm: scalar input");
  const std::size_t d = x.dim(x.rank() - 1);
  detail::check_affine(gamma, beta, d, "layer_norm");
  Tensor y(x.shape());
  auto st = detail::normalize_blocks(x.raw(), y.raw(), x.size() / d, d, eps, gamma, beta, 1,
                                     [](std::size_t, std::size_t i) { return i; });
  return {std::move(y), std::move(st)};
}

inline NormGrads layer_norm_backward(const Tensor& x, const Tensor& dy, const NormStats& st,
                                     const Tensor* gamma, bool need_dx) {
  const std::size_t d = x.dim(x.rank() - 1);
  NormGrads g;
  if (need_dx) g.dx = Tensor(x.shape());
  if (gamma) {
    g.dgamma = Tensor({d});
    g.dbeta = Tensor({d});
  }
  detail::normalize_blocks_backward(x.raw(), dy.raw(), need_dx ? g.dx.raw() : nullptr,
                                    x.size() / d, d, st, gamma,
                                    gamma ? g.dgamma.raw() : nullptr,
                                    gamma ? g.dbeta.raw() : nullptr,
                                    [](std::size_t, std::size_t i) { return i; });
  return g;
}

// ---------------------------------------------------------------------------
// softmax along an arbitrary axis, max-subtracted.

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw Error("softmax: axis " + std::to_string(axis) + " invalid for " + to_string(x.shape()));
  }
  const std::size_t len = x.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t outer = x.size() / (len * inner);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const double* xs = x.raw() + o * len * inner + in;
      double* ys = y.raw() + o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xs[i * inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        ys[i * inner] = std::exp(xs[i * inner] - mx);
        sum += ys[i * inner];
      }
      const double inv = 1.0 / sum;
      for (std::size_t i = 0; i < len; ++i) ys[i * inner] *= inv;
    }
  }
  return y;
}

/// Given y = softmax(x) and dL/dy, returns dL/dx.
inline Tensor softmax_backward(const Tensor& y, const Tensor& dy, std::size_t axis) {
  const std::size_t len = y.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < y.rank(); ++i) inner *= y.dim(i);
  const std::size_t outer = y.size() / (len * inner);
  Tensor dx(y.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double s = 0.0;
      for (std::size_t i = 0; i < len; ++i) s += y[base + i * inner] * dy[base + i * inner];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t j = base + i * inner;
        dx[j] = y[j] * (dy[j] - s);
      }
    }
  }
  return dx;
}

}  // namespace tkn::kernels

#endif  // TKN_KERNELS_HPP_
