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

#include "goce/model.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <numeric>

#include "goce/errors.hpp"
#include "goce/params.hpp"

namespace goce::model {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Fills every tensor of cfg's parameter layout; `rng == nullptr` gives zeros.
GoceParams make_params(const ModelConfig& cfg, Rng* rng) {
  auto normal = [&](std::size_t r, std::size_t c, double std) {
    Tensor t({r, c});
    if (rng)
      for (auto& v : t.vec()) v = std * rng->normal();
    return t;
  };
  auto xavier = [&](std::size_t r, std::size_t c, double gain = 1.0) {
    return normal(r, c, gain / std::sqrt(static_cast<double>(r)));
  };
  auto constant = [&](std::size_t r, std::size_t c, double v) { return Tensor({r, c}, rng ? v : 0.0); };

  const std::size_t d = cfg.d;
  GoceParams p;
  p.token_embedding = normal(cfg.vocab_size, d, 1.0);
  p.position_embedding = normal(cfg.max_T, d, 0.5);
  p.scorer.w1 = xavier(2 * d, cfg.edge_hidden);
  p.scorer.b1 = constant(1, cfg.edge_hidden, 0.0);
  p.scorer.w2 = xavier(cfg.edge_hidden, 1);
  p.scorer.b2 = constant(1, 1, 0.0);
  p.readout.w1 = xavier(2 * d, cfg.readout_hidden);
  p.readout.b1 = constant(1, cfg.readout_hidden, 0.0);
  p.readout.w2 = xavier(cfg.readout_hidden, d, 0.5);
  p.readout.b2 = constant(1, d, 0.0);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    Layer<Tensor> layer;
    layer.attn.w_q = xavier(d, cfg.n_heads * cfg.d_k);
    layer.attn.w_k = xavier(d, cfg.d_k);
    layer.attn.w_v = xavier(d, cfg.d_k);
    layer.attn.w_o = xavier(cfg.n_heads * cfg.d_k, d, 0.5);
    layer.attn.q_gate_logits = constant(d, 1, cfg.gate_logit_init);
    layer.attn.k_gate_logits = constant(d, 1, cfg.gate_logit_init);
    layer.router.w = xavier(d, cfg.n_experts);
    layer.router.b = constant(1, cfg.n_experts, 0.0);
    layer.experts.w1 = normal(cfg.n_experts * d, cfg.d_ff, 1.0 / std::sqrt(static_cast<double>(d)));
    layer.experts.b1 = constant(cfg.n_experts, cfg.d_ff, 0.0);
    layer.experts.w2 = normal(cfg.n_experts * cfg.d_ff, d, 0.5 / std::sqrt(static_cast<double>(cfg.d_ff)));
    layer.experts.b2 = constant(cfg.n_experts, d, 0.0);
    p.layers.push_back(std::move(layer));
  }
  p.head_w = xavier(d, cfg.n_classes);
  p.head_b = constant(1, cfg.n_classes, 0.0);
  return p;
}

std::vector<std::size_t> iota_vec(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void add_into(std::vector<double>& acc, const std::vector<double>& x, double w) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * x[i];
}

}  // namespace

std::string_view to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::kGoceGraph:
      return "goce-graph";
    case MaskMode::kChainPredecessor:
      return "chain-predecessor";
    case MaskMode::kCausalFull:
      return "causal-full";
  }
  return "unknown";
}

MaskMode parse_mask_mode(std::string_view name) {
  if (name == "goce-graph") return MaskMode::kGoceGraph;
  if (name == "chain-predecessor") return MaskMode::kChainPredecessor;
  if (name == "causal-full") return MaskMode::kCausalFull;
  throw ConfigError("unknown mask mode '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  for (auto [name, v] : {std::pair{"vocab_size", vocab_size}, {"n_classes", n_classes}, {"d", d},
                         {"n_layers", n_layers}, {"n_heads", n_heads}, {"d_k", d_k}, {"n_experts", n_experts},
                         {"k", k}, {"d_ff", d_ff}, {"max_T", max_T}, {"edge_hidden", edge_hidden},
                         {"readout_hidden", readout_hidden}, {"batch_size", optimizer.batch_size}}) {
    if (v == 0) throw ConfigError(std::string(name) + " must be >= 1");
  }
  hard_concrete.validate();
  csail.validate();
  clamp.validate();
  if (!(lambda_int >= 0.0)) throw ConfigError("lambda_int must be >= 0");
  if (!(edge_threshold > 0.0 && edge_threshold <= 1.0)) throw ConfigError("edge_threshold must lie in (0, 1]");
  if (!(optimizer.lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(optimizer.eps > 0.0)) throw ConfigError("eps must be > 0");
}

GoceParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "init"));
  return make_params(cfg, &rng);
}

BoundParams bind_params(ad::Tape& tape, const GoceParams& params, bool requires_grad) {
  std::vector<ad::Var> vars;
  GoceParams::fields(params, [&](const std::string&, const Tensor& t) { vars.push_back(tape.leaf(t, requires_grad)); });
  BoundParams out;
  out.layers.resize(params.layers.size());
  std::size_t k = 0;
  BoundParams::fields(out, [&](const std::string&, ad::Var& v) { v = vars[k++]; });
  return out;
}

GoceParams param_gradients(const ad::Tape& tape, const BoundParams& bound) {
  std::vector<Tensor> grads;
  BoundParams::fields(bound, [&](const std::string&, const ad::Var& v) { grads.push_back(tape.grad(v)); });
  GoceParams out;
  out.layers.resize(bound.layers.size());
  std::size_t k = 0;
  GoceParams::fields(out, [&](const std::string&, Tensor& t) { t = std::move(grads[k++]); });
  return out;
}

std::size_t param_count(const GoceParams& params) {
  std::size_t n = 0;
  GoceParams::fields(params, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

std::vector<double> flatten(const GoceParams& params) {
  std::vector<double> flat;
  flat.reserve(param_count(params));
  GoceParams::fields(params, [&](const std::string&, const Tensor& t) {
    flat.insert(flat.end(), t.data().begin(), t.data().end());
  });
  return flat;
}

GoceParams unflatten(std::span<const double> flat, const GoceParams& like) {
  if (flat.size() != param_count(like)) {
    throw DimensionError("unflatten: " + std::to_string(flat.size()) + " values for " +
                         std::to_string(param_count(like)) + " parameters");
  }
  GoceParams out = like;
  std::size_t off = 0;
  GoceParams::fields(out, [&](const std::string&, Tensor& t) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.data().begin());
    off += t.size();
  });
  return out;
}

void check_shapes(const GoceParams& params, const ModelConfig& cfg) {
  const GoceParams expected = make_params(cfg, nullptr);
  std::vector<std::pair<std::string, Shape>> want, got;
  GoceParams::fields(expected, [&](const std::string& n, const Tensor& t) { want.emplace_back(n, t.shape()); });
  GoceParams::fields(params, [&](const std::string& n, const Tensor& t) { got.emplace_back(n, t.shape()); });
  std::string diff;
  if (want.size() != got.size()) {
    diff += "  tensor count: expected " + std::to_string(want.size()) + ", got " + std::to_string(got.size()) + "\n";
  }
  for (std::size_t i = 0; i < std::min(want.size(), got.size()); ++i) {
    if (want[i] != got[i]) {
      diff += "  " + want[i].first + ": expected " + shape_str(want[i].second) + ", got " + got[i].first + " " +
              shape_str(got[i].second) + "\n";
    }
  }
  if (!diff.empty()) throw DimensionError("parameter shapes do not match the model config:\n" + diff);
}

graph::Adjacency build_baseline_mask(MaskMode mode, std::size_t num_tokens) {
  if (num_tokens == 0) throw ConfigError("build_baseline_mask: need at least one token");
  graph::Adjacency adj(num_tokens);
  switch (mode) {
    case MaskMode::kChainPredecessor:
      for (std::size_t i = 1; i < num_tokens; ++i) adj.set(i, i - 1);
      break;
    case MaskMode::kCausalFull:
      for (std::size_t i = 0; i < num_tokens; ++i)
        for (std::size_t j = 0; j < i; ++j) adj.set(i, j);
      break;
    case MaskMode::kGoceGraph:
      throw ConfigError("build_baseline_mask: goce-graph is learned, not a baseline");
  }
  return adj;
}

void check_tokens(std::span<const std::size_t> tokens, const ModelConfig& cfg) {
  if (tokens.empty()) throw DataError("empty token sequence");
  if (tokens.size() > cfg.max_T) {
    throw DataError("sequence length " + std::to_string(tokens.size()) + " exceeds max_T " + std::to_string(cfg.max_T));
  }
  for (std::size_t id : tokens) {
    if (id >= cfg.vocab_size) {
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                      std::to_string(cfg.vocab_size));
    }
  }
}

Backbone run_backbone(const BoundParams& p, std::span<const std::size_t> tokens, const ModelConfig& cfg,
                      const ForwardOptions& opts) {
  check_tokens(tokens, cfg);
  const std::size_t t = tokens.size();
  const std::vector<std::size_t> ids(tokens.begin(), tokens.end());
  ad::Var latents = ad::add(ad::gather_rows(p.token_embedding, ids), ad::gather_rows(p.position_embedding, iota_vec(t)));

  graph::HardConcreteConfig hc = cfg.hard_concrete;
  hc.mode = opts.gate_mode;
  Rng rng(opts.gate_seed);

  Backbone bb;
  bb.mode = opts.mask_override.value_or(cfg.mask_mode);
  if (bb.mode == MaskMode::kGoceGraph) {
    graph::BuiltGraph built = graph::build(latents, p.scorer, p.readout, hc, rng, cfg.edge_threshold);
    bb.refined = built.refined;
    bb.graph = std::move(built.graph);
  } else {
    bb.refined = latents;
    bb.graph.adj = build_baseline_mask(bb.mode, t);
    bb.graph.order = iota_vec(t);
    bb.graph.logits = Tensor({t, t}, kNegInf);
    bb.graph.gates = Tensor({t, t}, 0.0);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j)
        if (bb.graph.adj(i, j)) bb.graph.gates.at(i, j) = 1.0;
  }

  for (const auto& layer : p.layers) {
    if (opts.force_open_gates) {
      bb.projections.push_back(attention::open_projections(layer.attn));
    } else {
      ad::Var q_gates = graph::hard_concrete(layer.attn.q_gate_logits, hc, rng);
      ad::Var k_gates = graph::hard_concrete(layer.attn.k_gate_logits, hc, rng);
      bb.projections.push_back(attention::gate_projections(layer.attn, q_gates, k_gates));
    }
  }
  return bb;
}

Head run_blocks(const BoundParams& p, const Backbone& backbone, const ModelConfig& cfg, const ForwardOptions& opts,
                const intervention::InterventionSpec* clamp, double temperature) {
  ad::Var x = backbone.refined;
  ad::Tape& tape = *x.tape;
  const std::size_t t = x.rows();
  if (clamp != nullptr && !clamp->empty()) {
    clamp->validate(t, x.cols());
    std::vector<ad::Var> rows(t);
    for (std::size_t i = 0; i < t; ++i) rows[i] = ad::row(x, i);
    for (std::size_t k = 0; k < clamp->indices.size(); ++k) {
      Tensor v({1, x.cols()});
      for (std::size_t c = 0; c < x.cols(); ++c) v[c] = clamp->values.at(k, c);
      rows[clamp->indices[k]] = tape.constant(std::move(v));
    }
    x = ad::stack_rows(rows);
  }

  const Tensor mask = attention::build_head_mask(backbone.graph.adj, cfg.n_heads);
  Head head;
  std::vector<ad::Var> kls;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    attention::AttentionResult att = attention::csail_attention(x, backbone.projections[l], mask, temperature);
    if (opts.compute_kl) kls.push_back(attention::kl_consistency_loss(att.scores, cfg.csail.tau_cf));
    if (opts.keep_attention) {
      std::vector<Tensor> maps;
      for (const auto& pr : att.probs) maps.push_back(pr.value());
      head.attention.push_back(std::move(maps));
    }
    x = ad::add(x, att.output);
    moe::MoeResult routed = moe::moe_layer(x, backbone.graph.adj, backbone.graph.order, p.layers[l].router,
                                           p.layers[l].experts, cfg.k, opts.counter);
    x = routed.output;
    head.routing.push_back(std::move(routed.decisions));
  }
  head.pre_head = x;
  head.logits = ad::add_row_bias(ad::matmul(ad::mean_rows(x), p.head_w), p.head_b);
  head.log_probs = ad::log_softmax_rows(head.logits);
  head.probs = ad::softmax_rows(head.logits);
  if (!kls.empty()) head.kl_consistency = ad::mean(ad::stack_rows(kls));
  return head;
}

ForwardResult forward(std::span<const std::size_t> tokens, const GoceParams& params, const ModelConfig& cfg,
                      const ForwardOptions& opts) {
  ad::Tape tape;
  const BoundParams bound = bind_params(tape, params, false);
  Backbone bb = run_backbone(bound, tokens, cfg, opts);
  Head head = run_blocks(bound, bb, cfg, opts);
  ForwardResult out;
  out.prediction.probs = head.probs.value();
  out.graph = std::move(bb.graph);
  out.routing = std::move(head.routing);
  out.attention = std::move(head.attention);
  out.pre_head = head.pre_head.value();
  if (head.kl_consistency) out.kl_consistency = head.kl_consistency->value().item();
  return out;
}

namespace {

struct ExampleOutcome {
  double ce = 0.0, kl = 0.0, intervention = 0.0, total = 0.0;
  std::size_t edges = 0;
  std::vector<std::size_t> usage;
  std::vector<double> grad;
  std::exception_ptr error;
};

ExampleOutcome run_example(const Example& ex, std::size_t index, const GoceParams& params, const ModelConfig& cfg,
                           const BatchSeeds& seeds, bool with_grad) {
  ExampleOutcome out;
  ad::Tape tape;
  const BoundParams bound = bind_params(tape, params, with_grad);

  ForwardOptions opts;
  opts.gate_mode = cfg.hard_concrete.mode;
  opts.gate_seed = derive_seed(seeds.gate, index);
  opts.compute_kl = cfg.csail.lambda_kl > 0.0;
  const Backbone bb = run_backbone(bound, ex.tokens, cfg, opts);
  const Head obs = run_blocks(bound, bb, cfg, opts);

  if (ex.label >= cfg.n_classes) throw DataError("label " + std::to_string(ex.label) + " outside the class range");
  ad::Var ce = ad::scale(ad::gather_entries(obs.log_probs, {{0, ex.label}}), -1.0);
  ad::Var total = ce;
  out.ce = ce.value().item();

  if (obs.kl_consistency) {
    out.kl = obs.kl_consistency->value().item();
    total = ad::add(total, ad::scale(*obs.kl_consistency, cfg.csail.lambda_kl));
  }

  if (cfg.lambda_int > 0.0) {
    ForwardOptions do_opts = opts;
    do_opts.compute_kl = false;
    Rng clamp_rng(derive_seed(seeds.clamp, index));
    std::vector<ad::Var> draws;
    for (std::size_t k = 0; k < cfg.clamp.n_draws; ++k) {
      const intervention::InterventionSpec spec =
          intervention::select_clamp(ex.tokens.size(), cfg.d, cfg.clamp, clamp_rng);
      const Head intervened = run_blocks(bound, bb, cfg, do_opts, &spec, spec.tau_cf);
      draws.push_back(intervention::intervention_loss(obs.probs, intervened.probs, spec.lambda_delta));
    }
    ad::Var li = ad::mean(ad::stack_rows(draws));
    out.intervention = li.value().item();
    total = ad::add(total, ad::scale(li, cfg.lambda_int));
  }
  out.total = total.value().item();

  out.edges = bb.graph.adj.edge_count();
  out.usage.assign(cfg.n_experts, 0);
  for (const auto& layer : obs.routing)
    for (const auto& d : layer)
      for (std::size_t e : d.selected) ++out.usage[e];

  if (with_grad) {
    tape.backward(total);
    out.grad = flatten(param_gradients(tape, bound));
  }
  return out;
}

}  // namespace

LossAndGrad composite_loss(std::span<const Example> batch, const GoceParams& params, const ModelConfig& cfg,
                           const BatchSeeds& seeds, bool with_grad) {
  if (batch.empty()) throw DataError("composite_loss: empty batch");
  const auto n = static_cast<long long>(batch.size());
  std::vector<ExampleOutcome> outcomes(batch.size());
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < n; ++i) {
    const auto b = static_cast<std::size_t>(i);
    try {
      outcomes[b] = run_example(batch[b], b, params, cfg, seeds, with_grad);
    } catch (...) {
      outcomes[b].error = std::current_exception();
    }
  }
  for (const auto& o : outcomes)
    if (o.error) std::rethrow_exception(o.error);

  LossAndGrad out;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  out.loss.expert_usage.assign(cfg.n_experts, 0);
  std::vector<double> grad;
  if (with_grad) grad.assign(param_count(params), 0.0);
  double data_total = 0.0;
  for (const auto& o : outcomes) {
    out.loss.cross_entropy += o.ce * inv_b;
    out.loss.kl += o.kl * inv_b;
    out.loss.intervention += o.intervention * inv_b;
    out.loss.mean_edges += static_cast<double>(o.edges) * inv_b;
    data_total += o.total * inv_b;
    for (std::size_t e = 0; e < cfg.n_experts; ++e) out.loss.expert_usage[e] += o.usage[e];
    if (with_grad) add_into(grad, o.grad, inv_b);
  }

  // The L0 term does not depend on the data.
  ad::Tape tape;
  const BoundParams bound = bind_params(tape, params, with_grad);
  std::vector<ad::Var> penalties;
  for (const auto& layer : bound.layers)
    penalties.push_back(attention::l0_penalty(layer.attn, cfg.csail.lambda_l0, cfg.hard_concrete));
  ad::Var l0 = ad::sum(ad::stack_rows(penalties));
  out.loss.l0 = l0.value().item();
  out.loss.total = data_total + out.loss.l0;
  if (with_grad) {
    tape.backward(l0);
    add_into(grad, flatten(param_gradients(tape, bound)), 1.0);
    out.grad = unflatten(grad, params);
  }
  return out;
}

TrainState initial_state(const ModelConfig& cfg) {
  TrainState s;
  s.params = init_params(cfg);
  const std::size_t n = param_count(s.params);
  s.adam.m.assign(n, 0.0);
  s.adam.v.assign(n, 0.0);
  return s;
}

TrainResult train(std::span<const Example> dataset, const ModelConfig& cfg, std::size_t steps, TrainState state) {
  cfg.validate();
  if (dataset.empty()) throw DataError("train: empty dataset");
  check_shapes(state.params, cfg);
  const std::size_t n_params = param_count(state.params);
  if (state.adam.m.size() != n_params || state.adam.v.size() != n_params) {
    throw DimensionError("train: optimizer state does not match the parameter count");
  }

  const std::size_t n = dataset.size();
  const std::size_t bsz = std::min(cfg.optimizer.batch_size, n);
  const std::uint64_t shuffle_root = derive_seed(cfg.seed, "shuffle");
  const std::uint64_t gate_root = derive_seed(cfg.seed, "hard-concrete");
  const std::uint64_t clamp_root = derive_seed(cfg.seed, "intervention");

  std::size_t cached_epoch = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> perm;
  auto index_at = [&](std::size_t position) {
    const std::size_t epoch = position / n;
    if (epoch != cached_epoch) {
      perm = iota_vec(n);
      Rng rng(derive_seed(shuffle_root, epoch));
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      cached_epoch = epoch;
    }
    return perm[position % n];
  };

  TrainResult result;
  result.state = std::move(state);
  const auto& opt = cfg.optimizer;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t step = result.state.adam.step;
    std::vector<Example> batch;
    batch.reserve(bsz);
    for (std::size_t i = 0; i < bsz; ++i) batch.push_back(dataset[index_at(step * bsz + i)]);

    auto stop = [&](const std::string& why) {
      result.aborted = true;
      result.abort_reason = why + " at step " + std::to_string(step + 1);
      return result;
    };
    auto all_finite = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };

    // Overflowed parameters surface as rows with no finite score before the
    // loss itself turns NaN; both are numeric failures of this step.
    LossAndGrad lg;
    try {
      lg = composite_loss(batch, result.state.params, cfg,
                          BatchSeeds{derive_seed(gate_root, step), derive_seed(clamp_root, step)});
    } catch (const DegenerateRowError& e) {
      return stop(std::string("non-finite forward (") + e.what() + ")");
    } catch (const NumericAbort& e) {
      return stop(std::string("non-finite forward (") + e.what() + ")");
    }
    std::vector<double> g = flatten(lg.grad);
    if (!std::isfinite(lg.loss.total) || !all_finite(g)) return stop("non-finite loss or gradient");

    // Updated into a copy so an overflowing step leaves the last good state intact.
    std::vector<double> theta = flatten(result.state.params);
    AdamState adam = result.state.adam;
    adam.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(adam.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(adam.step));
    for (std::size_t i = 0; i < n_params; ++i) {
      adam.m[i] = opt.beta1 * adam.m[i] + (1.0 - opt.beta1) * g[i];
      adam.v[i] = opt.beta2 * adam.v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      theta[i] -= opt.lr * (adam.m[i] / bc1) / (std::sqrt(adam.v[i] / bc2) + opt.eps);
    }
    if (!all_finite(theta) || !all_finite(adam.v)) return stop("non-finite parameter update");
    result.state.adam = std::move(adam);
    result.state.params = unflatten(theta, result.state.params);
    result.log.push_back(TrainLogEntry{result.state.adam.step, std::move(lg.loss)});
  }
  return result;
}

std::vector<intervention::PredictionDistribution> predict(std::span<const Example> dataset, const GoceParams& params,
                                                          const ModelConfig& cfg,
                                                          std::optional<MaskMode> mask_override) {
  std::vector<intervention::PredictionDistribution> out(dataset.size());
  std::vector<std::exception_ptr> errors(dataset.size());
  ForwardOptions opts;
  opts.mask_override = mask_override;
  const auto n = static_cast<long long>(dataset.size());
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < n; ++i) {
    const auto b = static_cast<std::size_t>(i);
    try {
      out[b] = forward(dataset[b].tokens, params, cfg, opts).prediction;
    } catch (...) {
      errors[b] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

double mean_expected_open(const GoceParams& params, const ModelConfig& cfg) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& layer : params.layers) {
    for (const Tensor* logits : {&layer.attn.q_gate_logits, &layer.attn.k_gate_logits}) {
      for (double l : logits->data()) {
        total += attention::expected_open(l, cfg.hard_concrete);
        ++count;
      }
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace goce::model
