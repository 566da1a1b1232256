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

#include "goce/moe.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

#include "goce/errors.hpp"

namespace goce::moe {

namespace {

std::vector<std::size_t> index_range(std::size_t begin, std::size_t count) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

}  // namespace

void EvalCounter::record(std::size_t token) {
  if (per_token.size() <= token) per_token.resize(token + 1, 0);
  ++per_token[token];
  ++total;
}

std::vector<std::size_t> causal_neighborhood(const graph::Adjacency& adj, std::size_t t) {
  if (t >= adj.size()) throw IndexError("causal_neighborhood: token " + std::to_string(t) + " out of range");
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < adj.size(); ++j)
    if (j == t || adj(t, j) || adj(j, t)) out.push_back(j);
  return out;
}

std::vector<std::size_t> eligible_experts(const RouteHistory& history, std::span<const std::size_t> neighborhood,
                                          std::size_t n_experts) {
  std::vector<bool> seen(n_experts, false);
  for (std::size_t j : neighborhood) {
    if (j >= history.size()) continue;
    for (std::size_t e : history[j]) seen[e] = true;
  }
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < n_experts; ++e)
    if (seen[e]) out.push_back(e);
  if (out.empty()) out = index_range(0, n_experts);
  return out;
}

std::vector<std::size_t> masked_topk(std::span<const double> logits, std::span<const std::size_t> eligible,
                                     std::size_t k) {
  if (k == 0) throw ConfigError("masked_topk: k must be >= 1");
  if (eligible.empty()) throw ConfigError("masked_topk: empty eligible set");
  // Ineligible experts sit at the sentinel and are never candidates.
  std::vector<double> masked(logits.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t e : eligible) {
    if (e >= logits.size()) throw IndexError("masked_topk: expert " + std::to_string(e) + " out of range");
    masked[e] = logits[e];
  }
  std::vector<std::size_t> order(eligible.begin(), eligible.end());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (masked[a] != masked[b]) return masked[a] > masked[b];
    return a < b;
  });
  order.resize(std::min(k, order.size()));
  return order;
}

Route masked_topk_route(ad::Var token, const Router<ad::Var>& router, std::span<const std::size_t> eligible,
                        std::size_t k) {
  Route r;
  r.logits = ad::add_row_bias(ad::matmul(token, router.w), router.b);
  r.selected = masked_topk(r.logits.value().data(), eligible, k);
  std::vector<std::pair<std::size_t, std::size_t>> pos;
  for (std::size_t e : r.selected) pos.emplace_back(0, e);
  r.gates = ad::sigmoid(ad::gather_entries(r.logits, pos));
  return r;
}

ad::Var expert_network(ad::Var token, std::size_t expert, const Experts<ad::Var>& experts) {
  const std::size_t d = token.cols();
  const std::size_t d_ff = experts.b1.cols();
  ad::Var w1 = ad::gather_rows(experts.w1, index_range(expert * d, d));
  ad::Var w2 = ad::gather_rows(experts.w2, index_range(expert * d_ff, d_ff));
  ad::Var hidden = ad::tanh(ad::add(ad::matmul(token, w1), ad::row(experts.b1, expert)));
  return ad::add(ad::matmul(hidden, w2), ad::row(experts.b2, expert));
}

ad::Var expert_forward(ad::Var token, std::span<const std::size_t> selected, ad::Var gates,
                       const Experts<ad::Var>& experts, EvalCounter* counter, std::size_t token_index) {
  if (selected.empty()) throw ConfigError("expert_forward: no expert selected");
  if (gates.value().size() != selected.size()) throw DimensionError("expert_forward: one gate per selected expert");
  ad::Var out = token;
  for (std::size_t k = 0; k < selected.size(); ++k) {
    if (counter) counter->record(token_index);
    ad::Var y = expert_network(token, selected[k], experts);
    out = ad::add(out, ad::scale_by(y, ad::gather_entries(gates, {{0, k}})));
  }
  return out;
}

MoeResult moe_layer(ad::Var latents, const graph::Adjacency& adj, const std::vector<std::size_t>& order,
                    const Router<ad::Var>& router, const Experts<ad::Var>& experts, std::size_t k,
                    EvalCounter* counter) {
  const std::size_t t = latents.rows();
  const std::size_t n_experts = router.w.cols();
  if (adj.size() != t || order.size() != t) throw DimensionError("moe_layer: graph does not match token count");

  RouteHistory history(t);
  std::vector<ad::Var> rows(t);
  MoeResult out;
  for (std::size_t tok : order) {
    RoutingDecision dec;
    dec.token = tok;
    dec.neighborhood = causal_neighborhood(adj, tok);
    dec.eligible = eligible_experts(history, dec.neighborhood, n_experts);
    ad::Var h = ad::row(latents, tok);
    Route route = masked_topk_route(h, router, dec.eligible, k);
    dec.selected = route.selected;
    dec.gates.assign(route.gates.value().data().begin(), route.gates.value().data().end());
    rows[tok] = expert_forward(h, route.selected, route.gates, experts, counter, tok);
    history[tok] = route.selected;
    out.decisions.push_back(std::move(dec));
  }
  out.output = ad::stack_rows(rows);
  return out;
}

nlohmann::ordered_json to_json(const std::vector<RoutingDecision>& decisions) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& d : decisions) {
    nlohmann::ordered_json j;
    j["token"] = d.token;
    j["neighborhood"] = d.neighborhood;
    j["eligible"] = d.eligible;
    j["selected"] = d.selected;
    j["gates"] = d.gates;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace goce::moe
