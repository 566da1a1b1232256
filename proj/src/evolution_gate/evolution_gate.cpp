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

#include "goce/evolution_gate.hpp"

#include <cmath>
#include <exception>
#include <limits>

#include "goce/errors.hpp"
#include "goce/intervened_forward.hpp"

namespace goce::evolution {

void GateConfig::validate() const {
  if (!(t0 > 0.0)) throw ConfigError("evolution T0 must be > 0");
  if (!(eps0 > 0.0)) throw ConfigError("evolution eps0 must be > 0");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("evolution gamma must lie in (0, 1)");
  if (!(gamma_eps > 0.0 && gamma_eps < 1.0)) throw ConfigError("evolution gamma_eps must lie in (0, 1)");
}

double fitness(const FitnessTerms& terms, const GateConfig& cfg) {
  return -terms.reward + cfg.alpha * terms.cf_loss + cfg.beta * terms.sparsity;
}

double fitness(std::span<const double> theta, const TermEvaluator& reward, const TermEvaluator& cf_loss,
               const TermEvaluator& sparsity, const GateConfig& cfg) {
  return fitness(FitnessTerms{reward(theta), cf_loss(theta), sparsity(theta)}, cfg);
}

std::vector<double> mutate(std::span<const double> theta, double eps, Rng& rng) {
  std::vector<double> out(theta.begin(), theta.end());
  for (double& v : out) v += eps * rng.normal();
  return out;
}

bool accept(double delta_f, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw ConfigError("accept: temperature must be > 0");
  const double u = rng.uniform_open();
  if (delta_f < 0.0) return true;
  return u < std::exp(-delta_f / temperature);
}

EvolutionState initial_state(std::vector<double> theta0, double f0, const GateConfig& cfg) {
  cfg.validate();
  EvolutionState s;
  s.best_theta = theta0;
  s.theta = std::move(theta0);
  s.f = s.best_f = f0;
  s.temperature = cfg.t0;
  s.epsilon = cfg.eps0;
  return s;
}

ArchiveEntry anneal_step(EvolutionState& state, bool accepted, std::vector<double> candidate, double f_candidate,
                         const GateConfig& cfg) {
  state.round += 1;
  ArchiveEntry e;
  e.round = state.round;
  e.f = f_candidate;
  e.accepted = accepted;
  if (accepted) {
    state.theta = candidate;
    state.f = f_candidate;
    state.temperature = cfg.t0;
    state.epsilon = cfg.eps0;
    if (f_candidate < state.best_f) {
      state.best_theta = candidate;
      state.best_f = f_candidate;
      state.best_round = state.round;
    }
    e.theta = std::move(candidate);
  } else {
    state.temperature *= cfg.gamma;
    state.epsilon *= cfg.gamma_eps;
  }
  e.temperature = state.temperature;
  e.epsilon = state.epsilon;
  return e;
}

EvolutionResult evolve(std::size_t rounds, EvolutionState state, const FitnessFn& f, const GateConfig& cfg, Rng& rng,
                       const RoundHook& on_round) {
  cfg.validate();
  EvolutionResult out;
  for (std::size_t r = 0; r < rounds; ++r) {
    std::vector<double> candidate = mutate(state.theta, state.epsilon, rng);
    double fc = 0.0;
    try {
      fc = f(candidate);
    } catch (const Error& ex) {
      throw Error("evolution round " + std::to_string(state.round + 1) + ": " + ex.what());
    }
    // A non-finite candidate is rejected but still consumes its uniform draw.
    const double delta = std::isfinite(fc) ? fc - state.f : std::numeric_limits<double>::infinity();
    const bool ok = accept(delta, state.temperature, rng);
    ArchiveEntry entry = anneal_step(state, ok, std::move(candidate), fc, cfg);
    if (on_round) on_round(entry);
    out.archive.push_back(std::move(entry));
  }
  out.state = std::move(state);
  return out;
}

nlohmann::ordered_json to_json(const ArchiveEntry& entry, const std::string& checkpoint_path) {
  nlohmann::ordered_json j;
  j["round"] = entry.round;
  j["F"] = entry.f;
  j["accepted"] = entry.accepted;
  j["T"] = entry.temperature;
  j["epsilon"] = entry.epsilon;
  if (checkpoint_path.empty()) {
    j["checkpoint"] = nullptr;
  } else {
    j["checkpoint"] = checkpoint_path;
  }
  return j;
}

ModelFitness::ModelFitness(std::vector<model::Example> frozen, model::ModelConfig cfg, model::GoceParams like,
                           std::uint64_t clamp_seed)
    : frozen_(std::move(frozen)), cfg_(std::move(cfg)), like_(std::move(like)), clamp_seed_(clamp_seed) {
  if (frozen_.empty()) throw DataError("evolution: empty evaluation batch");
}

FitnessTerms ModelFitness::terms(std::span<const double> theta) const {
  const model::GoceParams params = model::unflatten(theta, like_);
  const auto n = static_cast<long long>(frozen_.size());
  std::vector<double> correct(frozen_.size()), loss(frozen_.size());
  std::vector<std::exception_ptr> errors(frozen_.size());
#pragma omp parallel for schedule(dynamic)
  for (long long i = 0; i < n; ++i) {
    const auto b = static_cast<std::size_t>(i);
    try {
      const auto& ex = frozen_[b];
      Rng rng(derive_seed(clamp_seed_, b));
      const auto spec = intervention::select_clamp(ex.tokens.size(), cfg_.d, cfg_.clamp, rng);
      const auto rep = intervention::intervention_report(ex.tokens, params, cfg_, spec);
      correct[b] = rep.observational.argmax() == ex.label ? 1.0 : 0.0;
      loss[b] = rep.loss;
    } catch (...) {
      errors[b] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  FitnessTerms t;
  for (std::size_t b = 0; b < frozen_.size(); ++b) {
    t.reward += correct[b];
    t.cf_loss += loss[b];
  }
  t.reward /= static_cast<double>(frozen_.size());
  t.cf_loss /= static_cast<double>(frozen_.size());
  t.sparsity = model::mean_expected_open(params, cfg_);
  return t;
}

}  // namespace goce::evolution
