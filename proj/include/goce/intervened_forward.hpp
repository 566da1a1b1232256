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

#include <cstdint>
#include <span>

#include "goce/intervention.hpp"
#include "goce/model.hpp"
#include "json.hpp"

namespace goce::intervention {

/// Full model forward with latents at spec.indices overwritten after the
/// causal readout and every attention score divided by spec.tau_cf.
PredictionDistribution intervened_forward(std::span<const std::size_t> tokens, const model::GoceParams& params,
                                          const model::ModelConfig& cfg, const InterventionSpec& spec,
                                          const model::ForwardOptions& opts = {});

struct InterventionReport {
  InterventionSpec spec;
  PredictionDistribution observational;
  PredictionDistribution intervened;
  double loss = 0.0;
};

/// Observational and intervened pass over one shared backbone.
InterventionReport intervention_report(std::span<const std::size_t> tokens, const model::GoceParams& params,
                                       const model::ModelConfig& cfg, const InterventionSpec& spec,
                                       const model::ForwardOptions& opts = {});

/// Targeted clamp of one token with N(0, stddev^2) values drawn from `seed`.
InterventionSpec single_token_clamp(std::size_t num_tokens, std::size_t index, std::uint64_t seed,
                                    const model::ModelConfig& cfg);

nlohmann::ordered_json to_json(const InterventionReport& report);

}  // namespace goce::intervention
