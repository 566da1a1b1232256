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

#include "goce/attention.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "goce/errors.hpp"

namespace goce::attention {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Tensor head_slice(const Tensor& mask, std::size_t head) {
  const std::size_t t = mask.shape()[1];
  Tensor out({t, t});
  const std::size_t off = head * t * t;
  for (std::size_t k = 0; k < t * t; ++k) out[k] = mask[off + k];
  return out;
}

}  // namespace

void CsailLossConfig::validate() const {
  if (!(tau_cf > 0.0 && tau_cf <= 1.0)) throw ConfigError("tau_cf must lie in (0, 1], got " + std::to_string(tau_cf));
  if (!(lambda_l0 >= 0.0)) throw ConfigError("lambda_l0 must be >= 0");
  if (!(lambda_kl >= 0.0)) throw ConfigError("lambda_kl must be >= 0");
}

Tensor build_head_mask(const graph::Adjacency& adj, std::size_t n_heads) {
  const std::size_t t = adj.size();
  Tensor mask({n_heads, t, t}, kNegInf);
  for (std::size_t h = 0; h < n_heads; ++h)
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < t; ++j)
        if (i == j || adj(i, j)) mask[(h * t + i) * t + j] = 0.0;
  return mask;
}

Projections gate_projections(const Attention<ad::Var>& p, ad::Var q_gates, ad::Var k_gates) {
  Projections out;
  out.w_q = ad::scale_rows(p.w_q, q_gates);
  out.w_k = ad::scale_rows(p.w_k, k_gates);
  out.w_v = p.w_v;
  out.w_o = p.w_o;
  out.n_heads = p.w_q.cols() / p.w_k.cols();
  return out;
}

Projections open_projections(const Attention<ad::Var>& p) {
  return Projections{p.w_q, p.w_k, p.w_v, p.w_o, p.w_q.cols() / p.w_k.cols()};
}

AttentionResult csail_attention(ad::Var latents, const Projections& proj, const Tensor& mask, double temperature) {
  const std::size_t t = latents.rows();
  const std::size_t d_k = proj.w_k.cols();
  const std::size_t heads = proj.n_heads;
  if (proj.w_q.cols() != heads * d_k || proj.w_v.cols() != d_k || proj.w_o.rows() != heads * d_k) {
    throw DimensionError("csail_attention: projection widths " + shape_str(proj.w_q.value().shape()) + ", " +
                         shape_str(proj.w_k.value().shape()) + ", " + shape_str(proj.w_v.value().shape()) + ", " +
                         shape_str(proj.w_o.value().shape()) + " are inconsistent with " + std::to_string(heads) +
                         " heads");
  }
  if (mask.rank() != 3 || mask.shape()[0] != heads || mask.shape()[1] != t || mask.shape()[2] != t) {
    throw DimensionError("csail_attention: mask " + shape_str(mask.shape()) + " does not fit " +
                         std::to_string(heads) + " heads over " + std::to_string(t) + " tokens");
  }
  if (!(temperature > 0.0)) throw ConfigError("csail_attention: temperature must be > 0");

  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(d_k));
  ad::Var q = ad::matmul(latents, proj.w_q);
  // Shared across heads: computed once.
  ad::Var k_t = ad::transpose(ad::matmul(latents, proj.w_k));
  ad::Var v = ad::matmul(latents, proj.w_v);

  AttentionResult out;
  std::vector<ad::Var> head_out;
  for (std::size_t h = 0; h < heads; ++h) {
    ad::Var qh = ad::slice_cols(q, h * d_k, d_k);
    ad::Var s = ad::add_constant(ad::scale(ad::matmul(qh, k_t), inv_sqrt_dk), head_slice(mask, h));
    ad::Var pr = ad::softmax_rows(temperature == 1.0 ? s : ad::scale(s, 1.0 / temperature));
    out.scores.push_back(s);
    out.probs.push_back(pr);
    head_out.push_back(ad::matmul(pr, v));
  }
  out.output = ad::matmul(ad::concat_cols(head_out), proj.w_o);
  return out;
}

ad::Var kl_consistency_loss(const std::vector<ad::Var>& scores, double tau_cf) {
  if (!(tau_cf > 0.0 && tau_cf <= 1.0)) throw ConfigError("tau_cf must lie in (0, 1], got " + std::to_string(tau_cf));
  if (scores.empty()) throw DimensionError("kl_consistency_loss: no heads");
  std::vector<ad::Var> per_head;
  for (const ad::Var& s : scores) {
    per_head.push_back(ad::kl_divergence_logits_rows(s, ad::scale(s, 1.0 / tau_cf)));
  }
  return ad::mean(ad::stack_rows(per_head));
}

ad::Var kl_consistency_loss(ad::Var latents, const Projections& proj, const Tensor& mask, double tau_cf) {
  return kl_consistency_loss(csail_attention(latents, proj, mask).scores, tau_cf);
}

ad::Var expected_open(ad::Var gate_logits, const graph::HardConcreteConfig& hc) {
  ad::Tape& tape = *gate_logits.tape;
  const double shift = -hc.tau * std::log(-hc.gamma / hc.zeta);
  const ad::Var offset = tape.constant(Tensor(gate_logits.value().shape(), shift));
  return ad::sigmoid(ad::add(gate_logits, offset));
}

double expected_open(double gate_logit, const graph::HardConcreteConfig& hc) {
  return 1.0 / (1.0 + std::exp(-(gate_logit - hc.tau * std::log(-hc.gamma / hc.zeta))));
}

ad::Var l0_penalty(const Attention<ad::Var>& p, double lambda_l0, const graph::HardConcreteConfig& hc) {
  ad::Var total = ad::add(ad::sum(expected_open(p.q_gate_logits, hc)), ad::sum(expected_open(p.k_gate_logits, hc)));
  return ad::scale(total, lambda_l0);
}

}  // namespace goce::attention
