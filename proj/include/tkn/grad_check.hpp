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

#ifndef TKN_GRAD_CHECK_HPP_
#define TKN_GRAD_CHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tkn/random.hpp"
#include "tkn/tape.hpp"

namespace tkn {

/// Builds a scalar from leaf inputs on the given tape.
using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Max over every input element of |analytic - numeric| / max(1, |numeric|),
/// with numeric derivatives from central differences of step h.
inline double grad_check(const GraphFn& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
  if (!(h >= 1e-7 && h <= 1e-2)) throw Error("grad_check: step out of range");
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.input(x));
    Var loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) {
      const Tensor& g = tape.grad(v);
      analytic.push_back(g.empty() ? Tensor(tape.value(v).shape()) : g);
    }
  }
  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape tape(false);
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return f(tape, vars).value().item();
  };
  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + h;
      const double up = evaluate(probe);
      probe[k][i] = orig - h;
      const double down = evaluate(probe);
      probe[k][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

/// Same measure for a graph over trainable parameters. `samples_per_param`
/// random elements of each parameter are probed (all when 0).
inline double grad_check_params(const std::function<Var(Tape&)>& f, const ParameterRefs& params,
                                double h, std::size_t samples_per_param, std::uint64_t seed) {
  zero_grads(params);
  {
    Tape tape;
    tape.backward(f(tape));
  }
  auto evaluate = [&] {
    Tape tape(false);
    return f(tape).value().item();
  };
  Rng rng(seed);
  double worst = 0.0;
  for (Parameter* p : params) {
    if (p->frozen) continue;
    const Tensor analytic = p->grad.empty() ? Tensor(p->value.shape()) : p->grad;
    std::vector<std::size_t> idx;
    if (samples_per_param == 0 || samples_per_param >= p->value.size()) {
      for (std::size_t i = 0; i < p->value.size(); ++i) idx.push_back(i);
    } else {
      for (std::size_t s = 0; s < samples_per_param; ++s)
        idx.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(p->value.size()) - 1)));
    }
    for (std::size_t i : idx) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = evaluate();
      p->value[i] = orig - h;
      const double down = evaluate();
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  zero_grads(params);
  return worst;
}

}  // namespace tkn

#endif  // TKN_GRAD_CHECK_HPP_
