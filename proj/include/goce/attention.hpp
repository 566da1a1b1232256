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

// Graph-masked multi-head attention with one key/value projection shared by
// every head, plus the two regularizers attached to it: an expected-L0
// penalty on row gates of the query/key projections and a KL term between the
// ordinary attention distribution and a temperature-sharpened copy.

#include <cstddef>
#include <vector>

#include "goce/autodiff.hpp"
#include "goce/graph_builder.hpp"
#include "goce/tensor.hpp"

namespace goce::attention {

template <class T>
struct Attention {
  T w_q;            // d x (heads * d_k)
  T w_k;            // d x d_k, shared by all heads
  T w_v;            // d x d_k, shared by all heads
  T w_o;            // (heads * d_k) x d
  T q_gate_logits;  // d x 1, one hard-concrete gate per row of w_q
  T k_gate_logits;  // d x 1, one per row of w_k

  template <class Self, class F>
  static void fields(Self& s, F&& f) {
    f("w_q", s.w_q);
    f("w_k", s.w_k);
    f("w_v", s.w_v);
    f("w_o", s.w_o);
    f("q_gate_logits", s.q_gate_logits);
    f("k_gate_logits", s.k_gate_logits);
  }
};
using AttentionParams = Attention<Tensor>;

struct CsailLossConfig {
  double lambda_l0 = 1e-3;
  double tau_cf = 0.5;
  double lambda_kl = 0.1;

  /// Throws ConfigError unless 0 < tau_cf <= 1 and both weights are >= 0.
  void validate() const;
};

/// n_heads x T x T tensor of {0, -inf}: 0 where adj(i, j) or i == j.
Tensor build_head_mask(const graph::Adjacency& adj, std::size_t n_heads);

struct AttentionResult {
  ad::Var output;               // T x d (after the output projection)
  std::vector<ad::Var> scores;  // per head: (Q_h K^T + M) / sqrt(d_k), before temperature
  std::vector<ad::Var> probs;   // per head: softmax(scores / temperature)
};

/// Projections after gating; what csail_attention actually multiplies with.
struct Projections {
  ad::Var w_q, w_k, w_v, w_o;
  std::size_t n_heads = 1;
};

/// Applies the row gates to w_q / w_k. Gates are d x 1 tape values.
Projections gate_projections(const Attention<ad::Var>& p, ad::Var q_gates, ad::Var k_gates);
/// Ungated projections (all gates open).
Projections open_projections(const Attention<ad::Var>& p);

/// Z = concat_h softmax((Q_h K^T + M) / (sqrt(d_k) * temperature)) V, then W_O.
/// `mask` is the n_heads x T x T tensor from build_head_mask.
AttentionResult csail_attention(ad::Var latents, const Projections& proj, const Tensor& mask,
                                double temperature = 1.0);

/// Mean over heads and query rows of KL(softmax(s) || softmax(s / tau_cf)).
ad::Var kl_consistency_loss(const std::vector<ad::Var>& scores, double tau_cf);
ad::Var kl_consistency_loss(ad::Var latents, const Projections& proj, const Tensor& mask, double tau_cf);

/// P(gate != 0) under the hard-concrete distribution: sigmoid(logit - tau ln(-gamma / zeta)).
ad::Var expected_open(ad::Var gate_logits, const graph::HardConcreteConfig& hc);
double expected_open(double gate_logit, const graph::HardConcreteConfig& hc);

/// lambda * (sum of expected-open probabilities of the q and k row gates).
ad::Var l0_penalty(const Attention<ad::Var>& p, double lambda_l0, const graph::HardConcreteConfig& hc);

}  // namespace goce::attention
