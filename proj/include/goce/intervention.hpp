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

// do()-style interventions on token latents and the loss comparing the
// observational prediction with the intervened, temperature-sharpened one.
//
// This header has no dependency on the model; the model-facing forward pass
// lives in intervened_forward.hpp.

#include <cstddef>
#include <vector>

#include "goce/autodiff.hpp"
#include "goce/rng.hpp"
#include "goce/tensor.hpp"

namespace goce::intervention {

enum class ClampPolicy { kRandomUniform, kTargeted };

/// Knobs for random clamp selection and the loss.
struct ClampDefaults {
  double fraction = 0.125;    // |S| = max(1, round(fraction * T))
  double stddev = 1.0;        // v ~ N(0, stddev^2)
  double tau_cf = 0.5;
  double lambda_delta = 0.1;
  std::size_t n_draws = 1;    // Monte-Carlo draws of (S, v) per example

  void validate() const;
};

struct InterventionSpec {
  std::vector<std::size_t> indices;  // S, ascending
  Tensor values;                     // |S| x d; empty when S is empty
  double tau_cf = 1.0;
  double lambda_delta = 0.0;
  ClampPolicy policy = ClampPolicy::kTargeted;

  bool empty() const { return indices.empty(); }
  /// Throws IndexError / DimensionError / ConfigError on an invalid spec.
  void validate(std::size_t num_tokens, std::size_t width) const;
};

/// Probabilities over the label vocabulary, one row per query.
struct PredictionDistribution {
  Tensor probs;

  std::size_t num_classes() const { return probs.cols(); }
  /// sum_c c * p(c) for row r.
  double expectation(std::size_t r = 0) const;
  std::size_t argmax(std::size_t r = 0) const;
};

/// Random-uniform policy: distinct indices drawn without replacement and
/// Gaussian clamp values. Indices are drawn before values.
InterventionSpec select_clamp(std::size_t num_tokens, std::size_t width, const ClampDefaults& defaults, Rng& rng);

/// Targeted policy: the caller's indices and values pass through unchanged.
InterventionSpec targeted_clamp(std::size_t num_tokens, std::vector<std::size_t> indices, Tensor values,
                                double tau_cf, double lambda_delta);

/// Column vector of class-index expectations, one per row of `probs`.
ad::Var expected_label(ad::Var probs);

/// KL(p_obs || p_do) + lambda_delta * |E[y]_obs - E[y]_do|, averaged over rows.
ad::Var intervention_loss(ad::Var p_obs, ad::Var p_do, double lambda_delta);
double intervention_loss(const PredictionDistribution& p_obs, const PredictionDistribution& p_do,
                         double lambda_delta);

}  // namespace goce::intervention
