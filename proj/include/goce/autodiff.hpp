// Copyright 2026 The GoCE Authors
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

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape owns every intermediate value produced during one forward pass.
// Ops append a node holding the output value, the ids of its inputs and a
// closure that scatters the node's gradient into those inputs. Because a
// node can only reference ids that already exist, the tape is always in
// topological order and backward() is a single reverse sweep.
//
// A Tape is single-threaded. Independent tapes can run concurrently.

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "goce/tensor.hpp"

namespace goce::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward() target w.r.t. this node. Nodes the
  /// sweep never reached report zeros of the right shape.
  Tensor grad(Var v) const;

  /// Reverse sweep from a scalar. Throws RankError on non-scalars.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Op-author interface.
  /// Appends an op node. Debug builds reject non-finite outputs computed
  /// from finite inputs unless `may_be_infinite` (masking ops).
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn, bool may_be_infinite = false);
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient buffer for accumulation; allocated as zeros on first use.
  /// Returns nullptr when the node does not need a gradient.
  Tensor* accum(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Linear algebra.
Var matmul(Var a, Var b);
Var transpose(Var x);

// Elementwise, same-shape operands.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double s);
/// x * s where s is a 1x1 tape value.
Var scale_by(Var x, Var s);
/// Adds a 1 x n bias to every row of an m x n matrix.
Var add_row_bias(Var x, Var bias);
/// Multiplies row i of x by g[i]; g is m x 1.
Var scale_rows(Var x, Var g);
/// Adds a non-differentiable tensor (e.g. a {0,-inf} mask).
Var add_constant(Var x, const Tensor& c);

Var sigmoid(Var x);
Var tanh(Var x);
Var abs(Var x);

// Row-stochastic ops.
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
/// Mean over rows of sum_j p ln(p/q), with 0 ln 0 := 0.
Var kl_divergence_rows(Var p, Var q);
/// KL(softmax(a) || softmax(b)) per row, averaged over rows, evaluated in log
/// space so a sharp b never underflows. -inf entries of a are skipped; b must
/// be finite wherever a is.
Var kl_divergence_logits_rows(Var a, Var b);

// Reductions.
Var sum(Var x);
Var mean(Var x);
/// Mean over rows: m x n -> 1 x n.
Var mean_rows(Var x);

// Indexing and assembly.
Var row(Var x, std::size_t i);
Var gather_rows(Var x, const std::vector<std::size_t>& idx);
Var stack_rows(const std::vector<Var>& rows);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
/// Picks x[r][c] for each position into a 1 x n row.
Var gather_entries(Var x, const std::vector<std::pair<std::size_t, std::size_t>>& pos);
/// Inverse of gather_entries into a rows x cols matrix; other entries = fill.
Var scatter_entries(Var v, std::size_t rows, std::size_t cols,
                    const std::vector<std::pair<std::size_t, std::size_t>>& pos, double fill);

/// Stretched, clamped sigmoid gate:
///   s = sigmoid((ln u - ln(1-u) + logit) / tau),  gate = clamp(s (zeta - gamma) + gamma, 0, 1).
/// Logits equal to -inf give gate 0 with no gradient. The clamp passes the
/// gradient straight through.
Var stretched_gate(Var logits, const Tensor& noise, double tau, double gamma, double zeta);

/// Copy of the value with no gradient connection.
Var detach(Var x);

}  // namespace goce::ad
