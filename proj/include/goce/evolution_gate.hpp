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

// Derivative-free refinement of a flat parameter vector by simulated
// annealing: Gaussian mutation, Metropolis acceptance, and accept/reject
// driven cooling of both the temperature and the mutation scale.
//
// The working point follows the Metropolis chain (a worse candidate may be
// accepted); a separate running minimum over accepted rounds is tracked as
// the reported best checkpoint.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "goce/model.hpp"
#include "goce/rng.hpp"
#include "json.hpp"

namespace goce::evolution {

struct GateConfig {
  double alpha = 1.0;  // weight on the intervention loss
  double beta = 0.1;   // weight on the sparsity term
  double t0 = 1.0;
  double eps0 = 0.01;
  double gamma = 0.95;      // temperature decay on reject
  double gamma_eps = 0.95;  // mutation-scale decay on reject
  bool interleave = false;  // reserved: evolution between training steps

  /// Throws ConfigError unless t0, eps0 > 0 and both decays lie in (0, 1).
  void validate() const;
};

struct FitnessTerms {
  double reward = 0.0;   // R: accuracy on the frozen batch
  double cf_loss = 0.0;  // L_cf: intervention loss
  double sparsity = 0.0; // S: mean expected-open gate probability
};

/// F = -R + alpha * L_cf + beta * S.
double fitness(const FitnessTerms& terms, const GateConfig& cfg);

using TermEvaluator = std::function<double(std::span<const double>)>;

/// Evaluates the three terms at theta and combines them.
double fitness(std::span<const double> theta, const TermEvaluator& reward, const TermEvaluator& cf_loss,
               const TermEvaluator& sparsity, const GateConfig& cfg);

/// theta + eps * N(0, I); theta is left untouched.
std::vector<double> mutate(std::span<const double> theta, double eps, Rng& rng);

/// Metropolis rule. One uniform is always drawn so the stream does not
/// depend on the sign of delta_f.
bool accept(double delta_f, double temperature, Rng& rng);

struct ArchiveEntry {
  std::size_t round = 0;  // 1-based
  double f = 0.0;         // candidate fitness
  bool accepted = false;
  double temperature = 0.0;  // after this round's update
  double epsilon = 0.0;
  std::optional<std::vector<double>> theta;  // accepted rounds only
};

struct EvolutionState {
  std::vector<double> theta;  // working point (Metropolis chain)
  double f = 0.0;
  double temperature = 1.0;
  double epsilon = 0.01;
  std::size_t round = 0;

  std::vector<double> best_theta;  // running minimum over accepted entries
  double best_f = 0.0;
  std::size_t best_round = 0;  // 0 = the starting point
};

/// Starting state at theta0 with F(theta0) already evaluated.
EvolutionState initial_state(std::vector<double> theta0, double f0, const GateConfig& cfg);

/// Updates T and epsilon (and the working point on accept) and returns the
/// archive record for this round.
ArchiveEntry anneal_step(EvolutionState& state, bool accepted, std::vector<double> candidate, double f_candidate,
                         const GateConfig& cfg);

struct EvolutionResult {
  EvolutionState state;
  std::vector<ArchiveEntry> archive;
};

using FitnessFn = std::function<double(std::span<const double>)>;
using RoundHook = std::function<void(const ArchiveEntry&)>;

/// Runs mutate -> fitness -> accept -> anneal for `rounds` rounds.
EvolutionResult evolve(std::size_t rounds, EvolutionState state, const FitnessFn& f, const GateConfig& cfg, Rng& rng,
                       const RoundHook& on_round = {});

nlohmann::ordered_json to_json(const ArchiveEntry& entry, const std::string& checkpoint_path = {});

/// Fitness of a model parameter vector on a frozen evaluation batch, with
/// deterministic gates and a fixed clamp seed so F is a pure function of
/// theta. Examples are evaluated in parallel and reduced in order.
class ModelFitness {
 public:
  ModelFitness(std::vector<model::Example> frozen, model::ModelConfig cfg, model::GoceParams like,
               std::uint64_t clamp_seed);

  FitnessTerms terms(std::span<const double> theta) const;
  double operator()(std::span<const double> theta, const GateConfig& gate) const {
    return fitness(terms(theta), gate);
  }

 private:
  std::vector<model::Example> frozen_;
  model::ModelConfig cfg_;
  model::GoceParams like_;
  std::uint64_t clamp_seed_;
};

}  // namespace goce::evolution
