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

#include <cmath>
#include <limits>

#include "doctest.h"
#include "goce/errors.hpp"
#include "goce/evolution_gate.hpp"
#include "goce/intervened_forward.hpp"

using namespace goce;
using namespace goce::evolution;

namespace {

double bowl(std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; }

// Half-width of the 99% normal-approximation binomial interval.
double ci99(double p, int n) { return 2.5758 * std::sqrt(p * (1 - p) / n); }

}  // namespace

TEST_CASE("fitness examples") {
  GateConfig c;
  c.alpha = c.beta = 0.0;
  CHECK(fitness(FitnessTerms{1.0, 0.7, 0.9}, c) == -1.0);
  c.alpha = 1.0;
  CHECK(fitness(FitnessTerms{0.0, 0.5, 0.9}, c) == 0.5);
  c.beta = 0.1;
  CHECK(fitness(FitnessTerms{0.25, 0.5, 0.8}, c) == doctest::Approx(-0.25 + 0.5 + 0.08).epsilon(1e-15));

  const std::vector<double> theta{0.3, -1.2};
  auto r = [](std::span<const double> x) { return x[0]; };
  auto l = [](std::span<const double> x) { return x[1] * x[1]; };
  auto s = [](std::span<const double> x) { return x[0] + x[1]; };
  CHECK(fitness(theta, r, l, s, c) == doctest::Approx(-0.3 + 1.44 + 0.1 * (-0.9)).epsilon(1e-14));
}

TEST_CASE("gate config validation") {
  GateConfig c;
  c.validate();
  using Edit = void (*)(GateConfig&);
  for (Edit bad : {+[](GateConfig& g) { g.t0 = 0; }, +[](GateConfig& g) { g.eps0 = -1; },
                   +[](GateConfig& g) { g.gamma = 1.0; }, +[](GateConfig& g) { g.gamma_eps = 0.0; }}) {
    GateConfig g;
    bad(g);
    CHECK_THROWS_AS(g.validate(), ConfigError);
  }
}

TEST_CASE("mutate") {
  const std::vector<double> theta{1.0, -2.0, 3.0};
  Rng a(1);
  CHECK(mutate(theta, 0.0, a) == theta);
  Rng c(7), d(7);
  CHECK(mutate(theta, 0.1, c) == mutate(theta, 0.1, d));

  const std::size_t n = 100000;
  const std::vector<double> zero(n, 0.5);
  Rng r(3);
  const double eps = 0.02;
  const auto out = mutate(zero, eps, r);
  double m = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) m += (out[i] - 0.5) / eps;
  m /= n;
  for (std::size_t i = 0; i < n; ++i) s2 += std::pow((out[i] - 0.5) / eps - m, 2);
  const double sd = std::sqrt(s2 / (n - 1));
  CHECK(sd >= 0.99);
  CHECK(sd <= 1.01);
  CHECK(std::abs(m) < 0.02);
  CHECK(zero[0] == 0.5);
}

TEST_CASE("accept") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) CHECK(accept(-0.3, 1.0, rng));
  for (int i = 0; i < 1000; ++i) CHECK(!accept(1e6, 1.0, rng));
  CHECK_THROWS_AS(accept(0.1, 0.0, rng), ConfigError);

  for (auto [df, t] : {std::pair{0.5, 1.0}, {1.0, 1.0}, {0.5, 0.5}, {2.0, 3.0}}) {
    const int n = 10000;
    int hits = 0;
    for (int i = 0; i < n; ++i) hits += accept(df, t, rng);
    const double p = std::exp(-df / t);
    CHECK(std::abs(hits / double(n) - p) <= ci99(p, n));
  }
}

TEST_CASE("anneal_step") {
  GateConfig c;
  c.gamma = 0.9;
  c.gamma_eps = 0.8;
  c.t0 = 2.0;
  c.eps0 = 0.05;
  auto s = initial_state({1.0, 1.0}, 2.0, c);
  s.temperature = 1.0;
  auto e = anneal_step(s, false, {0.0, 0.0}, 0.0, c);
  CHECK(s.temperature == 0.9);
  CHECK(s.epsilon == doctest::Approx(0.04).epsilon(1e-15));
  CHECK(s.theta == std::vector<double>{1.0, 1.0});
  CHECK(!e.accepted);
  CHECK(!e.theta);
  CHECK(e.round == 1);

  for (int n = 1; n <= 10; ++n) anneal_step(s, false, {0, 0}, 5.0, c);
  CHECK(s.temperature == doctest::Approx(std::pow(0.9, 11)).epsilon(1e-14));

  e = anneal_step(s, true, {0.5, 0.5}, 0.5, c);
  CHECK(s.temperature == 2.0);
  CHECK(s.epsilon == 0.05);
  CHECK(s.theta == std::vector<double>{0.5, 0.5});
  CHECK(s.best_f == 0.5);
  CHECK(s.best_round == 12);
  CHECK(e.theta == std::vector<double>{0.5, 0.5});

  // A worse accepted candidate moves the working point, not the best.
  anneal_step(s, true, {3.0, 3.0}, 18.0, c);
  CHECK(s.theta == std::vector<double>{3.0, 3.0});
  CHECK(s.f == 18.0);
  CHECK(s.best_theta == std::vector<double>{0.5, 0.5});
  CHECK(s.best_f == 0.5);
}

TEST_CASE("evolve with zero rounds leaves the state unchanged") {
  GateConfig c;
  auto s = initial_state({1.0, 2.0}, 5.0, c);
  Rng rng(1);
  const auto r = evolve(0, s, bowl, c, rng);
  CHECK(r.archive.empty());
  CHECK(r.state.theta == s.theta);
  CHECK(r.state.f == s.f);
  CHECK(r.state.round == 0);
  CHECK(r.state.temperature == s.temperature);
}

TEST_CASE("convex toy") {
  GateConfig c;
  c.t0 = 0.01;
  c.eps0 = 0.5;
  const std::vector<double> x0{3.0, -4.0};
  const double f0 = bowl(x0);
  Rng rng(2024);
  std::size_t hook_calls = 0;
  const auto r = evolve(500, initial_state(x0, f0, c), bowl, c, rng, [&](const ArchiveEntry&) { ++hook_calls; });
  CHECK(hook_calls == 500);
  REQUIRE(r.archive.size() == 500);
  CHECK(r.state.best_f <= 0.05 * f0);
  CHECK(r.state.best_f == bowl(r.state.best_theta));

  double running = f0;
  double last_accepted_f = f0;
  std::vector<double> last_theta = x0;
  for (std::size_t i = 0; i < r.archive.size(); ++i) {
    const auto& e = r.archive[i];
    CHECK(e.round == i + 1);
    CHECK(e.temperature > 0.0);
    CHECK(e.epsilon > 0.0);
    if (e.accepted) {
      REQUIRE(e.theta);
      CHECK(bowl(*e.theta) == e.f);  // archive integrity
      running = std::min(running, e.f);
      last_accepted_f = e.f;
      last_theta = *e.theta;
    }
  }
  CHECK(running == r.state.best_f);
  CHECK(last_theta == r.state.theta);
  CHECK(last_accepted_f == r.state.f);

  SUBCASE("replay from the seed") {
    Rng again(2024);
    const auto r2 = evolve(500, initial_state(x0, f0, c), bowl, c, again);
    for (std::size_t i = 0; i < 500; ++i) {
      CHECK(r2.archive[i].accepted == r.archive[i].accepted);
      CHECK(r2.archive[i].f == r.archive[i].f);
    }
  }
  SUBCASE("T and epsilon are a pure function of the accept sequence") {
    double t = c.t0, eps = c.eps0;
    for (const auto& e : r.archive) {
      t = e.accepted ? c.t0 : c.gamma * t;
      eps = e.accepted ? c.eps0 : c.gamma_eps * eps;
      CHECK(e.temperature == t);
      CHECK(e.epsilon == eps);
    }
  }
}

TEST_CASE("non-finite candidates are rejected") {
  GateConfig c;
  Rng rng(5);
  auto f = [](std::span<const double>) { return std::numeric_limits<double>::quiet_NaN(); };
  const auto r = evolve(20, initial_state({0.0}, 1.0, c), f, c, rng);
  for (const auto& e : r.archive) CHECK(!e.accepted);
  CHECK(r.state.theta == std::vector<double>{0.0});

  auto thrower = [](std::span<const double>) -> double { throw DataError("boom"); };
  CHECK_THROWS_WITH_AS(evolve(1, initial_state({0.0}, 1.0, c), thrower, c, rng), doctest::Contains("round 1"), Error);
}

TEST_CASE("archive json") {
  ArchiveEntry e{3, 0.25, true, 1.0, 0.01, std::vector<double>{1.0}};
  const auto j = to_json(e, "snap.json");
  CHECK(j.dump() == R"({"round":3,"F":0.25,"accepted":true,"T":1.0,"epsilon":0.01,"checkpoint":"snap.json"})");
  CHECK(to_json(e)["checkpoint"].is_null());
}

TEST_CASE("model fitness matches an independent recomputation") {
  model::ModelConfig cfg;
  cfg.vocab_size = 10;
  cfg.d = 8;
  cfg.n_heads = 2;
  cfg.d_k = 4;
  cfg.n_experts = 3;
  cfg.d_ff = 8;
  cfg.max_T = 8;
  cfg.edge_hidden = 8;
  cfg.readout_hidden = 8;
  cfg.seed = 3;
  const auto params = model::init_params(cfg);
  Rng data(4);
  std::vector<model::Example> batch;
  for (int i = 0; i < 12; ++i) {
    model::Example e;
    e.tokens.resize(2 + data.below(7));
    for (auto& t : e.tokens) t = data.below(cfg.vocab_size);
    e.label = data.below(cfg.n_classes);
    batch.push_back(e);
  }
  const std::uint64_t clamp_seed = 99;
  const ModelFitness fit(batch, cfg, params, clamp_seed);
  GateConfig gate;

  Rng mut(6);
  for (int trial = 0; trial < 5; ++trial) {
    const auto theta = mutate(model::flatten(params), 0.05, mut);
    const auto p = model::unflatten(theta, params);
    double reward = 0.0, cf = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto obs = model::forward(batch[b].tokens, p, cfg).prediction;
      reward += obs.argmax() == batch[b].label;
      Rng rng(derive_seed(clamp_seed, b));
      const auto spec = intervention::select_clamp(batch[b].tokens.size(), cfg.d, cfg.clamp, rng);
      const auto dov = intervention::intervened_forward(batch[b].tokens, p, cfg, spec);
      double kl = 0.0;
      for (std::size_t c = 0; c < cfg.n_classes; ++c)
        if (obs.probs[c] > 0) kl += obs.probs[c] * std::log(obs.probs[c] / dov.probs[c]);
      cf += kl + spec.lambda_delta * std::abs(obs.expectation() - dov.expectation());
    }
    reward /= batch.size();
    cf /= batch.size();
    double open = 0.0, n = 0.0;
    for (const auto& l : p.layers)
      for (const Tensor* g : {&l.attn.q_gate_logits, &l.attn.k_gate_logits})
        for (double x : g->data()) {
          open += attention::expected_open(x, cfg.hard_concrete);
          n += 1;
        }
    const auto t = fit.terms(theta);
    CHECK(t.reward == doctest::Approx(reward).epsilon(1e-15));
    CHECK(t.cf_loss == doctest::Approx(cf).epsilon(1e-10));
    CHECK(t.sparsity == doctest::Approx(open / n).epsilon(1e-13));
    CHECK(fit(theta, gate) == doctest::Approx(-reward + gate.alpha * cf + gate.beta * open / n).epsilon(1e-10));
    CHECK(fit(theta, gate) == fit(theta, gate));
  }
  CHECK_THROWS_AS(ModelFitness({}, cfg, params, 1), DataError);
}
