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

// Causally conditioned sparse experts.
//
// Tokens are routed one at a time in topological order. A token may only pick
// experts that some token of its causal neighbourhood (itself plus direct
// parents and children) has already used; when nothing in the neighbourhood
// has been routed yet every expert is eligible. Among eligible experts the k
// largest router logits win and each selected expert's output is weighted by
// sigmoid(logit) and added to the residual stream.

#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"

#include "goce/autodiff.hpp"
#include "goce/graph_builder.hpp"
#include "goce/tensor.hpp"

namespace goce::moe {

template <class T>
struct Router {
  T w;  // d x n_experts
  T b;  // 1 x n_experts

  template <class Self, class F>
  static void fields(Self& s, F&& f) {
    f("w", s.w);
    f("b", s.b);
  }
};
using RouterParams = Router<Tensor>;

/// n_experts two-layer networks d -> d_ff -> d stored as stacked blocks:
/// expert e owns rows [e*d, (e+1)*d) of w1, row e of b1, rows
/// [e*d_ff, (e+1)*d_ff) of w2 and row e of b2.
template <class T>
struct Experts {
  T w1;  // (n_experts * d) x d_ff
  T b1;  // n_experts x d_ff
  T w2;  // (n_experts * d_ff) x d
  T b2;  // n_experts x d

  template <class Self, class F>
  static void fields(Self& s, F&& f) {
    f("w1", s.w1);
    f("b1", s.b1);
    f("w2", s.w2);
    f("b2", s.b2);
  }
};
using ExpertParams = Experts<Tensor>;

/// Routing of one token.
struct RoutingDecision {
  std::size_t token = 0;
  std::vector<std::size_t> neighborhood;  // v_t, ascending
  std::vector<std::size_t> eligible;      // E_{v_t}, ascending
  std::vector<std::size_t> selected;      // E_t, by descending logit
  std::vector<double> gates;              // sigmoid(logit) per selected expert
};

/// Per-token record of selected experts; empty until the token is routed.
using RouteHistory = std::vector<std::vector<std::size_t>>;

/// Counts expert evaluations, indexed by token.
struct EvalCounter {
  std::vector<std::size_t> per_token;
  std::size_t total = 0;
  void record(std::size_t token);
};

/// {t} plus every j with adj(t, j) or adj(j, t), ascending.
std::vector<std::size_t> causal_neighborhood(const graph::Adjacency& adj, std::size_t t);

/// Union of experts already selected at tokens of `neighborhood`; all experts
/// when that union is empty.
std::vector<std::size_t> eligible_experts(const RouteHistory& history, std::span<const std::size_t> neighborhood,
                                          std::size_t n_experts);

/// Indices of the k largest logits among `eligible` (descending; ties to the
/// lower index). Selects all of `eligible` when k exceeds its size.
std::vector<std::size_t> masked_topk(std::span<const double> logits, std::span<const std::size_t> eligible,
                                     std::size_t k);

struct Route {
  std::vector<std::size_t> selected;
  ad::Var gates;   // 1 x |selected|, sigmoid of the selected logits
  ad::Var logits;  // 1 x n_experts, unmasked router output
};

/// Router logits for one token (1 x d), masked top-k and sigmoid gates.
Route masked_topk_route(ad::Var token, const Router<ad::Var>& router, std::span<const std::size_t> eligible,
                        std::size_t k);

/// h + sum over selected e of gates[e] * FFN_e(h). Only selected experts run.
ad::Var expert_forward(ad::Var token, std::span<const std::size_t> selected, ad::Var gates,
                       const Experts<ad::Var>& experts, EvalCounter* counter = nullptr, std::size_t token_index = 0);

/// FFN_e(h) for one expert.
ad::Var expert_network(ad::Var token, std::size_t expert, const Experts<ad::Var>& experts);

struct MoeResult {
  ad::Var output;  // T x d
  std::vector<RoutingDecision> decisions;  // in routing (topological) order
};

/// Routes every token in `order`, history reset per call.
MoeResult moe_layer(ad::Var latents, const graph::Adjacency& adj, const std::vector<std::size_t>& order,
                    const Router<ad::Var>& router, const Experts<ad::Var>& experts, std::size_t k,
                    EvalCounter* counter = nullptr);

nlohmann::ordered_json to_json(const std::vector<RoutingDecision>& decisions);

}  // namespace goce::moe
