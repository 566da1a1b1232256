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

#include "goce/graph_builder.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <limits>
#include <queue>
#include <sstream>

#include "goce/errors.hpp"

namespace goce::graph {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Strongly connected components of the subgraph induced by `alive` (Tarjan).
std::vector<std::vector<std::size_t>> strongly_connected(const Adjacency& adj, const std::vector<bool>& alive) {
  const std::size_t n = adj.size();
  std::vector<int> index(n, -1), low(n, 0);
  std::vector<bool> on_stack(n, false);
  std::vector<std::size_t> stack;
  std::vector<std::vector<std::size_t>> out;
  int counter = 0;

  std::function<void(std::size_t)> visit = [&](std::size_t v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = true;
    // successors of v: every i with adj(i, v) (edge v -> i)
    for (std::size_t w = 0; w < n; ++w) {
      if (!alive[w] || !adj(w, v)) continue;
      if (index[w] < 0) {
        visit(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack[w]) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<std::size_t> comp;
      std::size_t w = 0;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[w] = false;
        comp.push_back(w);
      } while (w != v);
      std::sort(comp.begin(), comp.end());
      out.push_back(std::move(comp));
    }
  };
  for (std::size_t v = 0; v < n; ++v)
    if (alive[v] && index[v] < 0) visit(v);
  return out;
}

}  // namespace

std::size_t Adjacency::edge_count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Adjacency Adjacency::ancestors_closure() const {
  Adjacency reach = *this;
  for (std::size_t i = 0; i < n_; ++i) reach.set(i, i);
  for (std::size_t k = 0; k < n_; ++k)
    for (std::size_t i = 0; i < n_; ++i)
      if (reach(i, k))
        for (std::size_t j = 0; j < n_; ++j)
          if (reach(k, j)) reach.set(i, j);
  return reach;
}

void HardConcreteConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("hard-concrete: tau must be > 0, got " + std::to_string(tau));
  if (!(gamma < 0.0)) throw ConfigError("hard-concrete: gamma must be < 0, got " + std::to_string(gamma));
  if (!(zeta > 1.0)) throw ConfigError("hard-concrete: zeta must be > 1, got " + std::to_string(zeta));
}

ad::Var score_edges(ad::Var latents, const EdgeScorer<ad::Var>& scorer) {
  ad::Tape& tape = *latents.tape;
  const std::size_t t = latents.rows();
  const std::size_t d = latents.cols();
  if (scorer.w1.rows() != 2 * d) {
    throw DimensionError("score_edges: scorer expects input width " + std::to_string(scorer.w1.rows()) +
                         ", latents give 2 x " + std::to_string(d));
  }
  if (t == 1) return tape.constant(Tensor::full(1, 1, kNegInf));

  std::vector<std::size_t> child, parent;
  std::vector<std::pair<std::size_t, std::size_t>> pos;
  for (std::size_t i = 1; i < t; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      child.push_back(i);
      parent.push_back(j);
      pos.emplace_back(i, j);
    }
  }
  ad::Var pairs = ad::concat_cols({ad::gather_rows(latents, child), ad::gather_rows(latents, parent)});
  ad::Var hidden = ad::tanh(ad::add_row_bias(ad::matmul(pairs, scorer.w1), scorer.b1));
  ad::Var scores = ad::add_row_bias(ad::matmul(hidden, scorer.w2), scorer.b2);  // P x 1
  return ad::scatter_entries(scores, t, t, pos, kNegInf);
}

Tensor gate_noise(const Shape& shape, const HardConcreteConfig& cfg, Rng& rng) {
  Tensor noise(shape, 0.5);
  if (cfg.mode == HardConcreteConfig::Mode::kSample) {
    for (auto& u : noise.vec()) u = rng.uniform_open();
  }
  return noise;
}

ad::Var hard_concrete(ad::Var logits, const HardConcreteConfig& cfg, Rng& rng) {
  cfg.validate();
  return ad::stretched_gate(logits, gate_noise(logits.value().shape(), cfg, rng), cfg.tau, cfg.gamma, cfg.zeta);
}

Adjacency binarize(const Tensor& gates, double threshold) {
  const std::size_t t = gates.rows();
  if (gates.cols() != t) throw DimensionError("binarize: gates must be square, got " + shape_str(gates.shape()));
  Adjacency adj(t);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (gates.at(i, j) >= threshold) adj.set(i, j);
  return adj;
}

std::vector<std::size_t> topological_sort(const Adjacency& adj) {
  const std::size_t n = adj.size();
  std::vector<std::size_t> indegree(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (adj(i, j)) ++indegree[i];

  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t v = 0; v < n; ++v)
    if (indegree[v] == 0) ready.push(v);

  std::vector<std::size_t> order;
  order.reserve(n);
  while (!ready.empty()) {
    const std::size_t v = ready.top();
    ready.pop();
    order.push_back(v);
    for (std::size_t w = 0; w < n; ++w) {
      if (adj(w, v) && --indegree[w] == 0) ready.push(w);
    }
  }
  if (order.size() == n) return order;

  std::vector<bool> alive(n, true);
  for (std::size_t v : order) alive[v] = false;
  for (auto& comp : strongly_connected(adj, alive)) {
    if (comp.size() > 1 || adj(comp[0], comp[0])) {
      std::string msg = "topological_sort: cycle through nodes {";
      for (std::size_t k = 0; k < comp.size(); ++k) msg += (k ? ", " : "") + std::to_string(comp[k]);
      throw CycleError(msg + "}", std::move(comp));
    }
  }
  throw CycleError("topological_sort: cycle detected", {});
}

ad::Var causal_readout(ad::Var latents, ad::Var gates, const Adjacency& adj, const std::vector<std::size_t>& order,
                       const Readout<ad::Var>& readout) {
  ad::Tape& tape = *latents.tape;
  const std::size_t t = latents.rows();
  const std::size_t d = latents.cols();
  if (adj.size() != t || gates.rows() != t || gates.cols() != t) {
    throw DimensionError("causal_readout: graph size does not match " + std::to_string(t) + " latents");
  }
  if (readout.w1.rows() != 2 * d || readout.w2.cols() != d) {
    throw DimensionError("causal_readout: readout shapes " + shape_str(readout.w1.value().shape()) + ", " +
                         shape_str(readout.w2.value().shape()) + " do not fit latent width " + std::to_string(d));
  }

  std::vector<std::size_t> position(t, t);
  if (order.size() != t) throw OrderError("causal_readout: order has wrong length");
  for (std::size_t k = 0; k < t; ++k) {
    if (order[k] >= t || position[order[k]] != t) throw OrderError("causal_readout: order is not a permutation");
    position[order[k]] = k;
  }
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j)
      if (adj(i, j) && position[j] >= position[i]) {
        throw OrderError("causal_readout: parent " + std::to_string(j) + " is not processed before child " +
                         std::to_string(i));
      }

  const ad::Var zero_context = tape.constant(Tensor::zeros(1, d));
  std::vector<ad::Var> refined(t);
  for (std::size_t i : order) {
    std::vector<std::size_t> parents;
    for (std::size_t j = 0; j < t; ++j)
      if (adj(i, j)) parents.push_back(j);

    ad::Var context = zero_context;
    if (!parents.empty()) {
      std::vector<std::pair<std::size_t, std::size_t>> pos;
      std::vector<ad::Var> parent_rows;
      for (std::size_t j : parents) {
        pos.emplace_back(i, j);
        parent_rows.push_back(refined[j]);
      }
      context = ad::matmul(ad::gather_entries(gates, pos), ad::stack_rows(parent_rows));
    }
    ad::Var own = ad::row(latents, i);
    ad::Var hidden = ad::tanh(ad::add_row_bias(ad::matmul(ad::concat_cols({own, context}), readout.w1), readout.b1));
    refined[i] = ad::add(own, ad::add_row_bias(ad::matmul(hidden, readout.w2), readout.b2));
  }
  return ad::stack_rows(refined);
}

BuiltGraph build(ad::Var latents, const EdgeScorer<ad::Var>& scorer, const Readout<ad::Var>& readout,
                 const HardConcreteConfig& cfg, Rng& rng, double threshold) {
  BuiltGraph out;
  out.logits = score_edges(latents, scorer);
  out.gates = hard_concrete(out.logits, cfg, rng);
  out.graph.logits = out.logits.value();
  out.graph.gates = out.gates.value();
  out.graph.adj = binarize(out.graph.gates, threshold);
  out.graph.order = topological_sort(out.graph.adj);
  out.refined = causal_readout(latents, out.gates, out.graph.adj, out.graph.order, readout);
  return out;
}

nlohmann::ordered_json to_json(const CausalGraph& graph) {
  const std::size_t t = graph.adj.size();
  nlohmann::ordered_json j;
  j["num_nodes"] = t;
  auto edges = nlohmann::ordered_json::array();
  auto adjacency = nlohmann::ordered_json::array();
  auto gates = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < t; ++i) {
    auto arow = nlohmann::ordered_json::array();
    auto grow = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < t; ++k) {
      arow.push_back(graph.adj(i, k) ? 1 : 0);
      grow.push_back(graph.gates.at(i, k));
    }
    adjacency.push_back(std::move(arow));
    gates.push_back(std::move(grow));
  }
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t k = 0; k < t; ++k)
      if (graph.adj(i, k)) edges.push_back({k, i, graph.gates.at(i, k)});
  j["edges"] = std::move(edges);
  j["adjacency"] = std::move(adjacency);
  j["gates"] = std::move(gates);
  j["topo_order"] = graph.order;
  return j;
}

std::string to_dot(const CausalGraph& graph, std::string_view name) {
  const std::size_t t = graph.adj.size();
  std::ostringstream os;
  os << "digraph " << name << " {\n";
  for (std::size_t v = 0; v < t; ++v) os << "  t" << v << " [label=\"" << v << "\"];\n";
  char buf[32];
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t k = 0; k < t; ++k)
      if (graph.adj(i, k)) {
        std::snprintf(buf, sizeof(buf), "%.4f", graph.gates.at(i, k));
        os << "  t" << k << " -> t" << i << " [label=\"" << buf << "\"];\n";
      }
  os << "}\n";
  return os.str();
}

}  // namespace goce::graph
