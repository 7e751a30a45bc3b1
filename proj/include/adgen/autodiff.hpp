// Copyright 2026 The adgen Authors.
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

// Minimal tape-based reverse-mode automatic differentiation over Matrix.
//
// A Tape records every operation in creation order; Backward() walks the
// nodes in reverse and accumulates gradients. Model parameters enter the tape
// by reference through Tape::Param(), so no parameter copies are made and the
// accumulated gradient can be looked up by the parameter's address afterwards.
// A tape constructed with record=false computes values only.

#pragma once

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "adgen/tensor.hpp"

namespace adgen {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  // Convenience for 1 x 1 results.
  double scalar() const { return value()(0, 0); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Receives the gradient of the node's output and pushes gradient into the
  // node's inputs via Tape::Accumulate.
  using BackwardFn = std::function<void(const Matrix& out_grad, Tape& tape)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var Constant(Matrix value);
  // References `external` without copying; the matrix must outlive the tape.
  // Repeated calls with the same matrix return the same node.
  Var Param(const Matrix& external);

  // Registers an op result. `backward` is dropped when not recording or when
  // no input needs a gradient.
  Var Emit(Matrix value, std::span<const Var> inputs, BackwardFn backward);

  const Matrix& Value(int id) const;
  bool NeedsGrad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  void Accumulate(int id, const Matrix& grad);
  void Accumulate(Var v, const Matrix& grad) { Accumulate(v.id(), grad); }

  // Seeds d(scalar)/d(scalar) = 1 and propagates to every recorded node.
  void Backward(Var scalar);

  // Gradient of the last Backward() w.r.t. a parameter registered via
  // Param(); nullptr when the parameter did not take part.
  const Matrix* GradOf(const Matrix& external) const;
  const Matrix* GradOf(Var v) const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool needs_grad = false;
    BackwardFn backward;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, int> params_;
};

namespace ad {

Var MatMul(Var a, Var b);
Var Add(Var a, Var b);
Var AddBias(Var a, Var bias);
Var Hadamard(Var a, Var b);
Var Scale(Var a, double s);
Var LayerNorm(Var x, Var gamma, Var beta);
Var Gelu(Var x);
Var ConcatCols(Var a, Var b);
Var SliceRows(Var a, std::size_t begin, std::size_t count);
Var StackRows(std::span<const Var> parts);
// Single-head scaled dot-product attention; see adgen::Attend.
Var Attention(Var queries, Var keys, Var values, bool causal);
Var LogSoftmaxRows(Var logits);
// 1 x 1 node holding x(r, c).
Var Pick(Var x, std::size_t r, std::size_t c);
// Sum over 1 x 1 nodes with fixed coefficients.
Var WeightedSum(std::span<const Var> scalars, std::span<const double> weights);
Var Sum(std::span<const Var> scalars);

// Node with a caller-supplied value and vector-Jacobian product. `vjp`
// returns one gradient matrix per input (empty Matrix = no contribution).
Var Custom(std::span<const Var> inputs, Matrix value,
           std::function<std::vector<Matrix>(const Matrix& out_grad)> vjp);

}  // namespace ad
}  // namespace adgen
