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

#include "goce/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "goce/errors.hpp"

namespace goce::intervention {

void ClampDefaults::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("clamp fraction must lie in (0, 1]");
  if (!(stddev >= 0.0)) throw ConfigError("clamp stddev must be >= 0");
  if (!(tau_cf > 0.0 && tau_cf <= 1.0)) throw ConfigError("tau_cf must lie in (0, 1]");
  if (!(lambda_delta >= 0.0)) throw ConfigError("lambda_delta must be >= 0");
  if (n_draws == 0) throw ConfigError("n_draws must be >= 1");
}

void InterventionSpec::validate(std::size_t num_tokens, std::size_t width) const {
  if (!(tau_cf > 0.0 && tau_cf <= 1.0)) throw ConfigError("tau_cf must lie in (0, 1], got " + std::to_string(tau_cf));
  if (!(lambda_delta >= 0.0)) throw ConfigError("lambda_delta must be >= 0");
  for (std::size_t i : indices) {
    if (i >= num_tokens) {
      throw IndexError("intervention index " + std::to_string(i) + " out of range for " +
                       std::to_string(num_tokens) + " tokens");
    }
  }
  if (indices.empty()) return;
  if (values.rows() != indices.size() || values.cols() != width) {
    throw DimensionError("intervention values " + shape_str(values.shape()) + " do not match " +
                         std::to_string(indices.size()) + " clamped tokens of width " + std::to_string(width));
  }
}

double PredictionDistribution::expectation(std::size_t r) const {
  double e = 0.0;
  for (std::size_t c = 0; c < probs.cols(); ++c) e += static_cast<double>(c) * probs.at(r, c);
  return e;
}

std::size_t PredictionDistribution::argmax(std::size_t r) const {
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs.cols(); ++c)
    if (probs.at(r, c) > probs.at(r, best)) best = c;
  return best;
}

InterventionSpec select_clamp(std::size_t num_tokens, std::size_t width, const ClampDefaults& defaults, Rng& rng) {
  if (num_tokens == 0) throw ConfigError("select_clamp: need at least one token");
  defaults.validate();
  const auto count = std::min<std::size_t>(
      num_tokens,
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(defaults.fraction * static_cast<double>(num_tokens)))));

  // Partial Fisher-Yates.
  std::vector<std::size_t> pool(num_tokens);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t k = 0; k < count; ++k) std::swap(pool[k], pool[k + rng.below(num_tokens - k)]);
  std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(chosen.begin(), chosen.end());

  InterventionSpec spec;
  spec.indices = std::move(chosen);
  spec.values = Tensor({count, width});
  for (auto& v : spec.values.vec()) v = defaults.stddev * rng.normal();
  spec.tau_cf = defaults.tau_cf;
  spec.lambda_delta = defaults.lambda_delta;
  spec.policy = ClampPolicy::kRandomUniform;
  return spec;
}

InterventionSpec targeted_clamp(std::size_t num_tokens, std::vector<std::size_t> indices, Tensor values,
                                double tau_cf, double lambda_delta) {
  InterventionSpec spec;
  spec.indices = std::move(indices);
  spec.values = std::move(values);
  spec.tau_cf = tau_cf;
  spec.lambda_delta = lambda_delta;
  spec.policy = ClampPolicy::kTargeted;
  spec.validate(num_tokens, spec.indices.empty() ? 0 : spec.values.cols());
  return spec;
}

ad::Var expected_label(ad::Var probs) {
  const std::size_t c = probs.cols();
  Tensor idx({c, 1});
  for (std::size_t k = 0; k < c; ++k) idx[k] = static_cast<double>(k);
  return ad::matmul(probs, probs.tape->constant(std::move(idx)));
}

ad::Var intervention_loss(ad::Var p_obs, ad::Var p_do, double lambda_delta) {
  if (!(lambda_delta >= 0.0)) throw ConfigError("lambda_delta must be >= 0");
  ad::Var kl = ad::kl_divergence_rows(p_obs, p_do);
  if (lambda_delta == 0.0) return kl;
  ad::Var delta = ad::mean(ad::abs(ad::sub(expected_label(p_obs), expected_label(p_do))));
  return ad::add(kl, ad::scale(delta, lambda_delta));
}

double intervention_loss(const PredictionDistribution& p_obs, const PredictionDistribution& p_do,
                         double lambda_delta) {
  ad::Tape tape;
  return intervention_loss(tape.constant(p_obs.probs), tape.constant(p_do.probs), lambda_delta).value().item();
}

}  // namespace goce::intervention
