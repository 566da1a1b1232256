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

// The full classifier: embeddings -> causal graph + readout (once per
// sequence) -> n_layers x (masked attention, residual; causal MoE) -> mean
// pool -> linear head -> softmax.
//
// Two baseline mask modes replace the learned graph with a fixed adjacency
// and skip the graph builder entirely:
//   chain-predecessor  token i sees only token i-1
//   causal-full        token i sees every j < i

#include <cstddef>
#include <cstdint>
#include <optional>
#include <type_traits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "goce/attention.hpp"
#include "goce/autodiff.hpp"
#include "goce/graph_builder.hpp"
#include "goce/intervention.hpp"
#include "goce/moe.hpp"
#include "goce/rng.hpp"
#include "goce/tensor.hpp"

namespace goce::model {

enum class MaskMode { kGoceGraph, kChainPredecessor, kCausalFull };

std::string_view to_string(MaskMode mode);
/// Accepts "goce-graph", "chain-predecessor", "causal-full"; throws ConfigError.
MaskMode parse_mask_mode(std::string_view name);

struct OptimizerConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
};

struct ModelConfig {
  std::size_t vocab_size = 16;
  std::size_t n_classes = 4;
  std::size_t d = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_k = 8;
  std::size_t n_experts = 4;
  std::size_t k = 1;
  std::size_t d_ff = 64;
  std::size_t max_T = 32;
  std::size_t edge_hidden = 32;
  std::size_t readout_hidden = 32;
  MaskMode mask_mode = MaskMode::kGoceGraph;

  graph::HardConcreteConfig hard_concrete;  // mode applies to training forwards
  double edge_threshold = graph::kDefaultEdgeThreshold;
  double gate_logit_init = 3.0;

  attention::CsailLossConfig csail;  // lambda_l0, tau_cf, lambda_kl
  double lambda_int = 0.1;
  intervention::ClampDefaults clamp;

  OptimizerConfig optimizer;
  std::uint64_t seed = 0;

  /// Throws ConfigError on any out-of-range field.
  void validate() const;
};

template <class T>
struct Layer {
  attention::Attention<T> attn;
  moe::Router<T> router;
  moe::Experts<T> experts;
};

/// Every trainable tensor of the model.
template <class T>
struct Params {
  T token_embedding;     // vocab x d
  T position_embedding;  // max_T x d
  graph::EdgeScorer<T> scorer;
  graph::Readout<T> readout;
  std::vector<Layer<T>> layers;
  T head_w;  // d x n_classes
  T head_b;  // 1 x n_classes

  /// Visits (dotted name, tensor) in a fixed order.
  template <class Self, class F>
  static void fields(Self& s, F&& f);
};
using GoceParams = Params<Tensor>;
using BoundParams = Params<ad::Var>;

template <class T>
template <class Self, class F>
void Params<T>::fields(Self& s, F&& f) {
  auto nested = [&](const std::string& prefix, auto& block) {
    std::remove_cvref_t<decltype(block)>::fields(block, [&](std::string_view name, auto& v) {
      f(prefix + std::string(name), v);
    });
  };
  f(std::string("token_embedding"), s.token_embedding);
  f(std::string("position_embedding"), s.position_embedding);
  nested("scorer.", s.scorer);
  nested("readout.", s.readout);
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    nested(p + "attn.", s.layers[l].attn);
    nested(p + "router.", s.layers[l].router);
    nested(p + "experts.", s.layers[l].experts);
  }
  f(std::string("head_w"), s.head_w);
  f(std::string("head_b"), s.head_b);
}

/// Random initialization from cfg.seed (init stream).
GoceParams init_params(const ModelConfig& cfg);
BoundParams bind_params(ad::Tape& tape, const GoceParams& params, bool requires_grad = true);
GoceParams param_gradients(const ad::Tape& tape, const BoundParams& bound);

std::size_t param_count(const GoceParams& params);
std::vector<double> flatten(const GoceParams& params);
/// Inverse of flatten; `like` supplies the shapes.
GoceParams unflatten(std::span<const double> flat, const GoceParams& like);
/// Throws DimensionError naming every tensor whose shape differs from cfg.
void check_shapes(const GoceParams& params, const ModelConfig& cfg);

/// Fixed adjacency for the baseline modes; throws ConfigError for goce-graph.
graph::Adjacency build_baseline_mask(MaskMode mode, std::size_t num_tokens);

struct ForwardOptions {
  graph::HardConcreteConfig::Mode gate_mode = graph::HardConcreteConfig::Mode::kDeterministic;
  std::uint64_t gate_seed = 0;
  std::optional<MaskMode> mask_override;
  /// Forces every q/k row gate to 1.
  bool force_open_gates = false;
  bool compute_kl = false;
  bool keep_attention = false;
  moe::EvalCounter* counter = nullptr;
};

/// State shared by the observational and the intervened pass: the refined
/// latents, the graph and the sampled projection gates.
struct Backbone {
  ad::Var refined;  // T x d, after causal readout
  graph::CausalGraph graph;
  std::vector<attention::Projections> projections;  // per layer
  MaskMode mode = MaskMode::kGoceGraph;
};

struct Head {
  ad::Var logits;     // 1 x n_classes
  ad::Var log_probs;  // 1 x n_classes
  ad::Var probs;      // 1 x n_classes
  ad::Var pre_head;   // T x d, latents after the last block
  std::optional<ad::Var> kl_consistency;  // mean over layers
  std::vector<std::vector<moe::RoutingDecision>> routing;  // per layer
  std::vector<std::vector<Tensor>> attention;              // per layer, per head
};

/// Throws DataError on an empty/overlong sequence or unknown token id.
void check_tokens(std::span<const std::size_t> tokens, const ModelConfig& cfg);

Backbone run_backbone(const BoundParams& p, std::span<const std::size_t> tokens, const ModelConfig& cfg,
                      const ForwardOptions& opts);

/// Transformer blocks and head on top of a backbone. A non-empty clamp
/// overwrites the clamped rows first; `temperature` divides every attention
/// score.
Head run_blocks(const BoundParams& p, const Backbone& backbone, const ModelConfig& cfg, const ForwardOptions& opts,
                const intervention::InterventionSpec* clamp = nullptr, double temperature = 1.0);

struct ForwardResult {
  intervention::PredictionDistribution prediction;
  graph::CausalGraph graph;
  std::vector<std::vector<moe::RoutingDecision>> routing;
  std::vector<std::vector<Tensor>> attention;
  Tensor pre_head;
  std::optional<double> kl_consistency;
};

/// Value-only forward pass on a private tape.
ForwardResult forward(std::span<const std::size_t> tokens, const GoceParams& params, const ModelConfig& cfg,
                      const ForwardOptions& opts = {});

struct Example {
  std::vector<std::size_t> tokens;
  std::size_t label = 0;
};

struct LossBreakdown {
  double cross_entropy = 0.0;
  double l0 = 0.0;            // lambda_l0 * penalty
  double kl = 0.0;            // unweighted KL consistency (batch mean)
  double intervention = 0.0;  // unweighted intervention loss (batch mean)
  double total = 0.0;
  double mean_edges = 0.0;
  std::vector<std::size_t> expert_usage;  // selections per expert, all layers
};

struct LossAndGrad {
  LossBreakdown loss;
  GoceParams grad;
};

/// Per-example stream seeds for one batch evaluation.
struct BatchSeeds {
  std::uint64_t gate = 0;
  std::uint64_t clamp = 0;
};

/// total = CE + lambda_l0 * L0 + lambda_kl * KL + lambda_int * intervention,
/// each data term averaged over the batch. Examples run on separate tapes
/// (in parallel when OpenMP is available) and are reduced in batch order.
LossAndGrad composite_loss(std::span<const Example> batch, const GoceParams& params, const ModelConfig& cfg,
                           const BatchSeeds& seeds, bool with_grad = true);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

struct TrainLogEntry {
  std::size_t step = 0;
  LossBreakdown loss;
};

struct TrainState {
  GoceParams params;
  AdamState adam;
};

struct TrainResult {
  TrainState state;  // last good state
  std::vector<TrainLogEntry> log;
  bool aborted = false;
  std::string abort_reason;
};

/// Fresh state for cfg (initialized params, zero moments).
TrainState initial_state(const ModelConfig& cfg);

/// Runs `steps` Adam steps over composite_loss starting from `state`.
/// Batches are drawn from a per-epoch shuffle derived from cfg.seed, so a
/// resumed run continues exactly where it stopped.
TrainResult train(std::span<const Example> dataset, const ModelConfig& cfg, std::size_t steps, TrainState state);

/// Deterministic-gate predictions, parallel across examples.
std::vector<intervention::PredictionDistribution> predict(std::span<const Example> dataset, const GoceParams& params,
                                                          const ModelConfig& cfg,
                                                          std::optional<MaskMode> mask_override = std::nullopt);

/// Mean expected-open probability over all q/k row gates.
double mean_expected_open(const GoceParams& params, const ModelConfig& cfg);

}  // namespace goce::model
