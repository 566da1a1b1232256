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

#include "goce/intervened_forward.hpp"

#include "goce/rng.hpp"

namespace goce::intervention {

PredictionDistribution intervened_forward(std::span<const std::size_t> tokens, const model::GoceParams& params,
                                          const model::ModelConfig& cfg, const InterventionSpec& spec,
                                          const model::ForwardOptions& opts) {
  ad::Tape tape;
  const model::BoundParams bound = model::bind_params(tape, params, false);
  const model::Backbone bb = model::run_backbone(bound, tokens, cfg, opts);
  spec.validate(tokens.size(), cfg.d);
  const model::Head head = model::run_blocks(bound, bb, cfg, opts, &spec, spec.tau_cf);
  return PredictionDistribution{head.probs.value()};
}

InterventionReport intervention_report(std::span<const std::size_t> tokens, const model::GoceParams& params,
                                       const model::ModelConfig& cfg, const InterventionSpec& spec,
                                       const model::ForwardOptions& opts) {
  ad::Tape tape;
  const model::BoundParams bound = model::bind_params(tape, params, false);
  const model::Backbone bb = model::run_backbone(bound, tokens, cfg, opts);
  spec.validate(tokens.size(), cfg.d);
  const model::Head obs = model::run_blocks(bound, bb, cfg, opts);
  const model::Head cf = model::run_blocks(bound, bb, cfg, opts, &spec, spec.tau_cf);

  InterventionReport r;
  r.spec = spec;
  r.observational.probs = obs.probs.value();
  r.intervened.probs = cf.probs.value();
  r.loss = intervention_loss(obs.probs, cf.probs, spec.lambda_delta).value().item();
  return r;
}

InterventionSpec single_token_clamp(std::size_t num_tokens, std::size_t index, std::uint64_t seed,
                                    const model::ModelConfig& cfg) {
  Rng rng(derive_seed(seed, "intervention"));
  Tensor values({1, cfg.d});
  for (auto& v : values.vec()) v = cfg.clamp.stddev * rng.normal();
  return targeted_clamp(num_tokens, {index}, std::move(values), cfg.clamp.tau_cf, cfg.clamp.lambda_delta);
}

nlohmann::ordered_json to_json(const InterventionReport& report) {
  nlohmann::ordered_json j;
  j["indices"] = report.spec.indices;
  j["values"] = report.spec.values.vec();
  j["tau_cf"] = report.spec.tau_cf;
  j["lambda_delta"] = report.spec.lambda_delta;
  j["observational"] = {{"probs", report.observational.probs.vec()},
                        {"expectation", report.observational.expectation()},
                        {"argmax", report.observational.argmax()}};
  j["intervened"] = {{"probs", report.intervened.probs.vec()},
                     {"expectation", report.intervened.expectation()},
                     {"argmax", report.intervened.argmax()}};
  j["loss"] = report.loss;
  return j;
}

}  // namespace goce::intervention
