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

#ifndef TKN_OPTIM_HPP_
#define TKN_OPTIM_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tkn/random.hpp"
#include "tkn/tape.hpp"

namespace tkn {

/// Uniform in +-1/sqrt(fan_in).
inline Tensor scaled_uniform(Rng& rng, const Shape& shape, std::size_t fan_in) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rng.uniform_tensor(shape, -a, a);
}

/// FNV-1a over the raw bytes of every parameter value, in order.
inline std::uint64_t parameter_checksum(const ParameterRefs& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const Parameter* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.raw());
    for (std::size_t i = 0; i < p->value.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

inline ParameterRefs trainable(const ParameterRefs& params) {
  ParameterRefs out;
  for (Parameter* p : params) {
    if (!p->frozen) out.push_back(p);
  }
  return out;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed parameter list. Frozen parameters are refused at
/// construction and again at every step, so a caller that unfreezes nothing
/// can never move them.
class Adam {
 public:
  Adam(ParameterRefs params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0.0) || !(cfg_.eps > 0.0) || cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 ||
        cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0) {
      throw Error("adam: invalid hyperparameters");
    }
    for (const Parameter* p : params_) {
      if (p->frozen) throw Error("adam: parameter '" + p->name + "' is frozen and cannot be optimized");
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter& p = *params_[k];
      if (p.frozen) throw Error("adam: refusing to update frozen parameter '" + p.name + "'");
      if (p.grad.empty()) continue;
      Tensor& m = m_[k];
      Tensor& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        p.value[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
    }
  }

  void zero_grad() { zero_grads(params_); }
  std::uint64_t steps() const noexcept { return t_; }

 private:
  ParameterRefs params_;
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace tkn

#endif  // TKN_OPTIM_HPP_
