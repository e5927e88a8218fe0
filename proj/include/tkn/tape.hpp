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

#ifndef TKN_TAPE_HPP_
#define TKN_TAPE_HPP_

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tkn/tensor.hpp"

namespace tkn {

/// A named trainable tensor. Gradients from every tape that reads the
/// parameter accumulate into `grad` until zero_grad().
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}

  std::string name;
  Tensor value;
  Tensor grad;
  bool frozen = false;

  void zero_grad() { grad = Tensor(); }
};

using ParameterRefs = std::vector<Parameter*>;

/// Owns parameters at stable addresses (moves keep them in place).
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter& add(std::string name, Tensor value) {
    for (const auto& p : items_) {
      if (p.name == name) throw Error("duplicate parameter name '" + name + "'");
    }
    return items_.emplace_back(std::move(name), std::move(value));
  }

  ParameterRefs refs() {
    ParameterRefs out;
    for (auto& p : items_) out.push_back(&p);
    return out;
  }

  Parameter* find(const std::string& name) {
    for (auto& p : items_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  std::size_t size() const noexcept { return items_.size(); }

 private:
  std::deque<Parameter> items_;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Dynamic record of one forward pass. Each op appends a node holding its
/// output and a closure that pushes the output gradient (given the output
/// value) to its inputs.
/// backward() replays the closures once each, newest first.
class Tape {
 public:
  using Backward =
      std::function<void(Tape&, const Tensor& grad_out, const Tensor& out)>;

  /// A non-recording tape evaluates ops without storing backward closures.
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }

  Var constant(Tensor value) { return push(std::move(value), false, nullptr, nullptr); }

  /// Leaf that receives a gradient; used for inputs under gradient checks.
  Var input(Tensor value) { return push(std::move(value), recording_, nullptr, nullptr); }

  Var param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
    // Parameters are read in place; they must not change while the tape lives.
    Var v = push(Tensor(), recording_ && !p.frozen, nullptr, &p);
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  Var record(Tensor value, std::span<const Var> inputs, Backward fn) {
    bool needs = false;
    if (recording_) {
      for (const Var& in : inputs) needs = needs || nodes_[in.id].needs_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : Backward{}, nullptr);
  }

  const Tensor& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.param ? n.param->value : n.value;
  }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient of the last backward() target with respect to `v`; empty when
  /// no gradient reached it.
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  /// Adds `g` into the gradient buffer of `v`, allocating it on first use.
  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.empty()) {
      value(v).require_same_shape(g, "accumulate");
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void accumulate(Var v, Tensor&& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.empty()) {
      value(v).require_same_shape(g, "accumulate");
      n.grad = std::move(g);
    } else {
      n.grad += g;
    }
  }

  /// Reverse pass from a scalar loss. Parameter leaves add their gradient
  /// into Parameter::grad.
  void backward(Var loss) {
    if (value(loss).size() != 1) {
      throw Error("backward: loss must be a scalar, got shape " + to_string(value(loss).shape()));
    }
    if (backward_done_) throw Error("backward: tape already replayed");
    backward_done_ = true;
    if (!nodes_[loss.id].needs_grad) return;
    nodes_[loss.id].grad = Tensor(value(loss).shape(), 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) {
        ++backward_visits_;
        n.backward(*this, n.grad, n.value);
      }
    }
    for (auto& n : nodes_) {
      if (!n.param || n.grad.empty()) continue;
      if (n.param->grad.empty()) {
        n.param->grad = n.grad;
      } else {
        n.param->grad += n.grad;
      }
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t backward_visits() const noexcept { return backward_visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Tensor value, bool needs_grad, Backward fn, Parameter* p) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(fn), p, needs_grad});
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool recording_ = true;
  bool backward_done_ = false;
  std::size_t backward_visits_ = 0;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

inline void zero_grads(const ParameterRefs& params) {
  for (auto* p : params) p->zero_grad();
}

inline std::size_t parameter_count(const ParameterRefs& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

}  // namespace tkn

#endif  // TKN_TAPE_HPP_
