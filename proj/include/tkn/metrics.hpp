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

#ifndef TKN_METRICS_HPP_
#define TKN_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "tkn/tensor.hpp"

namespace tkn {

inline constexpr double kPsnrCap = 100.0;

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

namespace detail {

/// (planes, H, W) view of a [H,W] or [C,H,W] frame.
inline void frame_dims(const Tensor& x, std::size_t& c, std::size_t& h, std::size_t& w) {
  if (x.rank() == 2) {
    c = 1, h = x.dim(0), w = x.dim(1);
  } else if (x.rank() == 3) {
    c = x.dim(0), h = x.dim(1), w = x.dim(2);
  } else {
    throw Error("metrics: expected a [H,W] or [C,H,W] frame, got " + to_string(x.shape()));
  }
}

inline std::vector<double> gaussian_window(std::size_t n, double sigma) {
  std::vector<double> g(n);
  const double c = static_cast<double>(n - 1) / 2.0;
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = std::exp(-(static_cast<double>(i) - c) * (static_cast<double>(i) - c) / (2 * sigma * sigma));
    s += g[i];
  }
  for (double& v : g) v /= s;
  return g;
}

/// Separable valid-mode filtering of one plane.
inline std::vector<double> filter_valid(const double* x, std::size_t h, std::size_t w,
                                        const std::vector<double>& g) {
  const std::size_t n = g.size(), oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(h * ow), out(oh * ow);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0;
      for (std::size_t k = 0; k < n; ++k) s += g[k] * x[r * w + c + k];
      tmp[r * ow + c] = s;
    }
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0;
      for (std::size_t k = 0; k < n; ++k) s += g[k] * tmp[(r + k) * ow + c];
      out[r * ow + c] = s;
    }
  return out;
}

}  // namespace detail

/// Gaussian-window SSIM averaged over all fully contained windows and channels.
inline double ssim(const Tensor& a, const Tensor& b, const SsimOptions& o = {}) {
  a.require_same_shape(b, "ssim");
  std::size_t c = 0, h = 0, w = 0;
  detail::frame_dims(a, c, h, w);
  if (o.window == 0 || o.window % 2 == 0) throw Error("ssim: window must be odd");
  if (h < o.window || w < o.window) {
    throw Error("ssim: frame " + to_string(a.shape()) + " smaller than the " +
                std::to_string(o.window) + "-pixel window");
  }
  const auto g = detail::gaussian_window(o.window, o.sigma);
  const double c1 = (o.k1 * o.data_range) * (o.k1 * o.data_range);
  const double c2 = (o.k2 * o.data_range) * (o.k2 * o.data_range);
  const std::size_t plane = h * w;
  double total = 0;
  std::size_t count = 0;
  std::vector<double> aa(plane), bb(plane), ab(plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* pa = a.raw() + ch * plane;
    const double* pb = b.raw() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = detail::filter_valid(pa, h, w, g);
    const auto mu_b = detail::filter_valid(pb, h, w, g);
    const auto e_aa = detail::filter_valid(aa.data(), h, w, g);
    const auto e_bb = detail::filter_valid(bb.data(), h, w, g);
    const auto e_ab = detail::filter_valid(ab.data(), h, w, g);
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    count += mu_a.size();
  }
  return total / static_cast<double>(count);
}

/// 20 log10(max / rmse), capped at kPsnrCap (also for identical inputs).
inline double psnr(const Tensor& a, const Tensor& b, double max_value = 1.0) {
  a.require_same_shape(b, "psnr");
  if (a.empty()) throw Error("psnr: empty input");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = s / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 20.0 * std::log10(max_value / std::sqrt(mse)));
}

}  // namespace tkn

#endif  // TKN_METRICS_HPP_
