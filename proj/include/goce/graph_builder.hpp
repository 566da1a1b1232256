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

// Latent causal graph construction.
//
// Token latents are compared pairwise by a two-layer edge scorer. Only pairs
// (i, j) with j < i get a logit, so sequence order is a valid causal order
// and every graph this module builds is acyclic. Logits pass through a
// hard-concrete gate, are thresholded into a binary adjacency, verified by a
// topological sort, and finally used to refine each latent from its
// (already refined) parents.
//
// Convention: adj(i, j) == 1 means token j is a parent of token i (edge j -> i).

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "goce/autodiff.hpp"
#include "goce/rng.hpp"
#include "goce/tensor.hpp"

namespace goce::graph {

/// Binary T x T matrix.
class Adjacency {
 public:
  Adjacency() = default;
  explicit Adjacency(std::size_t n) : n_(n), bits_(n * n, 0) {}

  std::size_t size() const { return n_; }
  bool operator()(std::size_t i, std::size_t j) const { return bits_[i * n_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool on = true) { bits_[i * n_ + j] = on ? 1 : 0; }
  std::size_t edge_count() const;
  /// Reflexive-transitive closure: reach[i][j] == 1 iff j == i or j is an ancestor of i.
  Adjacency ancestors_closure() const;

  friend bool operator==(const Adjacency&, const Adjacency&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> bits_;
};

template <class T>
struct EdgeScorer {
  T w1;  // 2d x hidden
  T b1;  // 1 x hidden
  T w2;  // hidden x 1
  T b2;  // 1 x 1

  template <class Self, class F>
  static void fields(Self& s, F&& f) {
    f("w1", s.w1);
    f("b1", s.b1);
    f("w2", s.w2);
    f("b2", s.b2);
  }
};
using EdgeScorerParams = EdgeScorer<Tensor>;

/// Residual fusion g(h_i, c_i) = h_i + W2 tanh([h_i, c_i] W1 + b1) + b2.
template <class T>
struct Readout {
  T w1;  // 2d x hidden
  T b1;  // 1 x hidden
  T w2;  // hidden x d
  T b2;  // 1 x d

  template <class Self, class F>
  static void fields(Self& s, F&& f) {
    f("w1", s.w1);
    f("b1", s.b1);
    f("w2", s.w2);
    f("b2", s.b2);
  }
};
using ReadoutParams = Readout<Tensor>;

struct HardConcreteConfig {
  enum class Mode { kSample, kDeterministic };

  double tau = 2.0 / 3.0;
  double gamma = -0.1;  // stretch lower bound, < 0
  double zeta = 1.1;    // stretch upper bound, > 1
  Mode mode = Mode::kSample;

  /// Throws ConfigError unless gamma < 0 < 1 < zeta and tau > 0.
  void validate() const;
};

inline constexpr double kDefaultEdgeThreshold = 0.5;

struct CausalGraph {
  Tensor logits;  // T x T, -inf on and above the diagonal
  Tensor gates;   // T x T in [0, 1]
  Adjacency adj;
  std::vector<std::size_t> order;
};

/// Edge logits f(h_i, h_j) for every j < i; other entries are -inf.
ad::Var score_edges(ad::Var latents, const EdgeScorer<ad::Var>& scorer);

/// Noise tensor for the gate: u ~ U(0,1) per entry in sample mode, 0.5 in
/// deterministic mode. Draws are taken in row-major order.
Tensor gate_noise(const Shape& shape, const HardConcreteConfig& cfg, Rng& rng);

/// Hard-concrete relaxation of the logits.
ad::Var hard_concrete(ad::Var logits, const HardConcreteConfig& cfg, Rng& rng);

/// adj(i, j) = gates(i, j) >= threshold, restricted to j < i.
Adjacency binarize(const Tensor& gates, double threshold = kDefaultEdgeThreshold);

/// Kahn's algorithm; ties go to the smallest ready index. Throws CycleError.
std::vector<std::size_t> topological_sort(const Adjacency& adj);

/// Refines latents in `order`: c_i = sum over parents j of gates(i, j) h~_j,
/// using the already refined parents, then h~_i = g(h_i, c_i). Only edges
/// present in `adj` contribute. Throws OrderError when `order` is not a
/// permutation consistent with `adj`.
ad::Var causal_readout(ad::Var latents, ad::Var gates, const Adjacency& adj,
                       const std::vector<std::size_t>& order, const Readout<ad::Var>& readout);

/// Everything the builder produces for one sequence.
struct BuiltGraph {
  CausalGraph graph;
  ad::Var logits;
  ad::Var gates;
  ad::Var refined;  // T x d
};

BuiltGraph build(ad::Var latents, const EdgeScorer<ad::Var>& scorer, const Readout<ad::Var>& readout,
                 const HardConcreteConfig& cfg, Rng& rng, double threshold = kDefaultEdgeThreshold);

/// {"num_nodes", "edges": [[parent, child, gate]...], "gates", "adjacency", "topo_order"}
nlohmann::ordered_json to_json(const CausalGraph& graph);
/// One node per token; one edge per adjacency entry labelled with its gate.
std::string to_dot(const CausalGraph& graph, std::string_view name = "causal_graph");

}  // namespace goce::graph
