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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "goce/errors.hpp"
#include "goce/moe.hpp"
#include "goce/params.hpp"
#include "test_support.hpp"

using namespace goce;
using namespace goce::moe;
using goce::testing::random_tensor;

namespace {

using Ids = std::vector<std::size_t>;

graph::Adjacency random_dag(std::size_t t, Rng& rng, double density) {
  graph::Adjacency a(t);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (rng.uniform_open() < density) a.set(i, j);
  return a;
}

ExpertParams random_experts(std::size_t n, std::size_t d, std::size_t d_ff, Rng& rng) {
  return {random_tensor(n * d, d_ff, rng), random_tensor(n, d_ff, rng), random_tensor(n * d_ff, d, rng),
          random_tensor(n, d, rng)};
}

// FFN_e by explicit loops.
std::vector<double> ffn_oracle(std::span<const double> h, std::size_t e, const ExpertParams& p) {
  const std::size_t d = h.size(), d_ff = p.b1.cols();
  std::vector<double> hidden(d_ff), out(d);
  for (std::size_t f = 0; f < d_ff; ++f) {
    double acc = p.b1.at(e, f);
    for (std::size_t x = 0; x < d; ++x) acc += h[x] * p.w1.at(e * d + x, f);
    hidden[f] = std::tanh(acc);
  }
  for (std::size_t c = 0; c < d; ++c) {
    double acc = p.b2.at(e, c);
    for (std::size_t f = 0; f < d_ff; ++f) acc += hidden[f] * p.w2.at(e * d_ff + f, c);
    out[c] = acc;
  }
  return out;
}

Ids topk_oracle(const std::vector<double>& logits, const Ids& eligible, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> v;
  for (std::size_t e : eligible) v.push_back({-logits[e], e});
  std::sort(v.begin(), v.end());
  Ids out;
  for (std::size_t i = 0; i < std::min(k, v.size()); ++i) out.push_back(v[i].second);
  return out;
}

}  // namespace

TEST_CASE("causal_neighborhood") {
  graph::Adjacency empty(4);
  for (std::size_t t = 0; t < 4; ++t) CHECK(causal_neighborhood(empty, t) == Ids{t});

  graph::Adjacency a(3);
  a.set(2, 0);  // 0 -> 2
  CHECK(causal_neighborhood(a, 2) == Ids{0, 2});
  CHECK(causal_neighborhood(a, 0) == Ids{0, 2});
  CHECK(causal_neighborhood(a, 1) == Ids{1});

  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t t = 1 + rng.below(9);
    const auto adj = random_dag(t, rng, 0.3);
    for (std::size_t i = 0; i < t; ++i) {
      Ids expect;
      for (std::size_t j = 0; j < t; ++j)
        if (j == i || adj(i, j) || adj(j, i)) expect.push_back(j);
      CHECK(causal_neighborhood(adj, i) == expect);
    }
  }
}

TEST_CASE("eligible_experts") {
  RouteHistory h(3);
  CHECK(eligible_experts(h, Ids{0, 1}, 4) == Ids{0, 1, 2, 3});
  h[0] = {2};
  CHECK(eligible_experts(h, Ids{0, 1}, 4) == Ids{2});
  h[2] = {3, 1};
  CHECK(eligible_experts(h, Ids{0, 1, 2}, 4) == Ids{1, 2, 3});
  CHECK(eligible_experts(h, Ids{1}, 4) == Ids{0, 1, 2, 3});
}

TEST_CASE("masked_topk") {
  const std::vector<double> logits{0.5, 2.0, 1.0};
  CHECK(masked_topk(logits, Ids{0, 2}, 1) == Ids{2});
  CHECK(masked_topk(std::vector<double>(4, 0.7), Ids{0, 1, 2, 3}, 1) == Ids{0});
  CHECK(masked_topk(std::vector<double>(4, 0.7), Ids{1, 3}, 2) == Ids{1, 3});
  CHECK(masked_topk(logits, Ids{0, 2}, 5) == Ids{2, 0});  // k shrinks to |eligible|
  CHECK_THROWS_AS(masked_topk(logits, Ids{}, 1), ConfigError);
  CHECK_THROWS_AS(masked_topk(logits, Ids{0}, 0), ConfigError);

  Rng rng(13);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<double> l(n);
    // Coarse values so ties are frequent.
    for (auto& x : l) x = static_cast<double>(rng.below(4)) - 1.5;
    Ids elig;
    for (std::size_t e = 0; e < n; ++e)
      if (rng.uniform_open() < 0.6) elig.push_back(e);
    if (elig.empty()) elig.push_back(rng.below(n));
    const std::size_t k = 1 + rng.below(n + 1);
    CHECK(masked_topk(l, elig, k) == topk_oracle(l, elig, k));
  }
}

TEST_CASE("masked_topk_route gates are sigmoid of the selected logits") {
  Rng rng(21);
  ad::Tape tape;
  const std::size_t d = 3, n = 5;
  auto router = bind<Router>(tape, RouterParams{random_tensor(d, n, rng), random_tensor(1, n, rng)});
  auto h = tape.constant(random_tensor(1, d, rng));
  const auto r = masked_topk_route(h, router, Ids{0, 2, 4}, 2);
  REQUIRE(r.selected.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    const double logit = r.logits.value()[r.selected[i]];
    CHECK(r.gates.value()[i] == doctest::Approx(1.0 / (1.0 + std::exp(-logit))).epsilon(1e-15));
    CHECK(r.gates.value()[i] > 0.0);
    CHECK(r.gates.value()[i] < 1.0);
  }
}

TEST_CASE("expert_forward examples") {
  Rng rng(31);
  const std::size_t d = 3, d_ff = 4, n = 3;
  ad::Tape tape;
  const Tensor h = random_tensor(1, d, rng);
  auto x = tape.constant(h);

  SUBCASE("zero output layer is the identity") {
    ExpertParams p = random_experts(n, d, d_ff, rng);
    p.w2 = Tensor({n * d_ff, d});
    p.b2 = Tensor({n, d});
    const Tensor out = expert_forward(x, Ids{1, 2}, tape.constant(Tensor::matrix({{0.3, 0.9}})), bind<Experts>(tape, p)).value();
    CHECK(out == h);
  }
  SUBCASE("k = 1 adds g * y") {
    const ExpertParams p = random_experts(n, d, d_ff, rng);
    const double g = 0.37;
    const Tensor out = expert_forward(x, Ids{2}, tape.constant(Tensor::matrix({{g}})), bind<Experts>(tape, p)).value();
    const auto y = ffn_oracle(h.data(), 2, p);
    for (std::size_t c = 0; c < d; ++c) CHECK(out[c] == doctest::Approx(h[c] + g * y[c]).epsilon(1e-13));
  }
  SUBCASE("k = 2 matches the gated sum") {
    const ExpertParams p = random_experts(n, d, d_ff, rng);
    const Tensor out =
        expert_forward(x, Ids{2, 0}, tape.constant(Tensor::matrix({{0.8, 0.15}})), bind<Experts>(tape, p)).value();
    const auto ya = ffn_oracle(h.data(), 2, p), yb = ffn_oracle(h.data(), 0, p);
    for (std::size_t c = 0; c < d; ++c) CHECK(out[c] == doctest::Approx(h[c] + 0.8 * ya[c] + 0.15 * yb[c]).epsilon(1e-13));
  }
  SUBCASE("errors") {
    auto p = bind<Experts>(tape, random_experts(n, d, d_ff, rng));
    CHECK_THROWS_AS(expert_forward(x, Ids{}, tape.constant(Tensor::matrix({{0.5}})), p), ConfigError);
    CHECK_THROWS_AS(expert_forward(x, Ids{0, 1}, tape.constant(Tensor::matrix({{0.5}})), p), DimensionError);
  }
}

TEST_CASE("four-token chain routing matches a hand simulation") {
  // Token t's latent is the unit vector e_t, so router row t is its logits.
  const std::size_t n = 4;
  ad::Tape tape;
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  const Tensor logits = Tensor::matrix({{1, 0, 5, 3}, {9, 4, 0, 1}, {0, 2, 1, 0}, {0, 0, 0, 0}});
  auto router = bind<Router>(tape, RouterParams{logits, Tensor({1, n})});
  Rng rng(2);
  auto experts = bind<Experts>(tape, random_experts(n, 4, 2, rng));

  graph::Adjacency chain(4);
  chain.set(1, 0);
  chain.set(2, 1);
  chain.set(3, 2);
  const Ids order{0, 1, 2, 3};

  SUBCASE("k = 1") {
    const auto res = moe_layer(tape.constant(eye), chain, order, router, experts, 1);
    // 0: bootstrap, argmax {1,0,5,3} = 2. 1..3: only expert 2 has been used nearby.
    const std::vector<Ids> elig{{0, 1, 2, 3}, {2}, {2}, {2}};
    const std::vector<Ids> sel{{2}, {2}, {2}, {2}};
    for (std::size_t t = 0; t < 4; ++t) {
      CHECK(res.decisions[t].eligible == elig[t]);
      CHECK(res.decisions[t].selected == sel[t]);
    }
  }
  SUBCASE("k = 2") {
    const auto res = moe_layer(tape.constant(eye), chain, order, router, experts, 2);
    // 0: top-2 of {1,0,5,3} = {2,3}. 1: eligible {2,3}, logits 0 vs 1 -> {3,2}.
    // 2: parent 1 used {3,2} -> same set, logits 1 vs 0 -> {2,3}. 3: ties -> {2,3}.
    const std::vector<Ids> elig{{0, 1, 2, 3}, {2, 3}, {2, 3}, {2, 3}};
    const std::vector<Ids> sel{{2, 3}, {3, 2}, {2, 3}, {2, 3}};
    for (std::size_t t = 0; t < 4; ++t) {
      CHECK(res.decisions[t].eligible == elig[t]);
      CHECK(res.decisions[t].selected == sel[t]);
    }
  }
  SUBCASE("disconnected token bootstraps again") {
    graph::Adjacency split(4);
    split.set(1, 0);
    split.set(3, 2);
    const auto res = moe_layer(tape.constant(eye), split, order, router, experts, 1);
    CHECK(res.decisions[1].eligible == Ids{2});
    CHECK(res.decisions[2].eligible == Ids{0, 1, 2, 3});
    CHECK(res.decisions[2].selected == Ids{1});
    CHECK(res.decisions[3].eligible == Ids{1});
  }
}

TEST_CASE("routing properties over 10000 calls") {
  Rng rng(77);
  const std::size_t d = 3, d_ff = 2;
  std::size_t calls = 0;
  while (calls < 10000) {
    const std::size_t t = 1 + rng.below(8), n = 1 + rng.below(6), k = 1 + rng.below(3);
    const auto adj = random_dag(t, rng, 0.35);
    // Any topological order works; reverse-free index order is one.
    Ids order(t);
    std::iota(order.begin(), order.end(), 0);
    ad::Tape tape;
    auto router = bind<Router>(tape, RouterParams{random_tensor(d, n, rng, 2.0), random_tensor(1, n, rng)});
    auto experts = bind<Experts>(tape, random_experts(n, d, d_ff, rng));
    EvalCounter counter;
    const auto res = moe_layer(tape.constant(random_tensor(t, d, rng)), adj, order, router, experts, k, &counter);
    REQUIRE(res.decisions.size() == t);
    RouteHistory seen(t);
    for (const auto& dec : res.decisions) {
      ++calls;
      // Eligibility recomputed independently from what was routed so far.
      std::set<std::size_t> u;
      for (std::size_t j : causal_neighborhood(adj, dec.token))
        for (std::size_t e : seen[j]) u.insert(e);
      Ids expect_elig(u.begin(), u.end());
      if (expect_elig.empty()) {
        expect_elig.resize(n);
        std::iota(expect_elig.begin(), expect_elig.end(), 0);
      }
      CHECK(dec.eligible == expect_elig);
      CHECK(dec.selected.size() == std::min(k, dec.eligible.size()));
      CHECK(!dec.selected.empty());
      for (std::size_t e : dec.selected) CHECK(std::binary_search(dec.eligible.begin(), dec.eligible.end(), e));
      for (double g : dec.gates) {
        CHECK(g > 0.0);
        CHECK(g < 1.0);
      }
      CHECK(counter.per_token[dec.token] <= k);
      CHECK(counter.per_token[dec.token] == dec.selected.size());
      seen[dec.token] = dec.selected;
    }
    for (double v : res.output.value().data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("moe_layer is deterministic and rejects mismatched graphs") {
  Rng rng(91);
  const Tensor h = random_tensor(5, 3, rng);
  const RouterParams r{random_tensor(3, 4, rng), random_tensor(1, 4, rng)};
  const ExpertParams e = random_experts(4, 3, 2, rng);
  const auto adj = random_dag(5, rng, 0.5);
  const Ids order{0, 1, 2, 3, 4};
  auto run = [&] {
    ad::Tape tape;
    return moe_layer(tape.constant(h), adj, order, bind<Router>(tape, r), bind<Experts>(tape, e), 2).output.value();
  };
  CHECK(run() == run());
  ad::Tape tape;
  CHECK_THROWS_AS(moe_layer(tape.constant(h), graph::Adjacency(4), Ids{0, 1, 2, 3}, bind<Router>(tape, r),
                            bind<Experts>(tape, e), 1),
                  DimensionError);
}

TEST_CASE("expert gating gradients match finite differences") {
  Rng rng(101);
  const std::size_t t = 4, d = 3, d_ff = 3, n = 3;
  for (int inst = 0; inst < 20; ++inst) {
    const auto adj = random_dag(t, rng, 0.5);
    const Ids order{0, 1, 2, 3};
    const Tensor w = random_tensor(t, d, rng);
    const ExpertParams e = random_experts(n, d, d_ff, rng);
    auto f = [&](ad::Tape& tape, const std::vector<ad::Var>& v) {
      Router<ad::Var> router{v[1], v[2]};
      Experts<ad::Var> experts{v[3], tape.constant(e.b1), v[4], tape.constant(e.b2)};
      auto out = moe_layer(v[0], adj, order, router, experts, 2).output;
      return ad::sum(ad::mul(out, tape.constant(w)));
    };
    const auto r = goce::testing::check_gradients(
        f, {random_tensor(t, d, rng), random_tensor(d, n, rng), random_tensor(1, n, rng), e.w1, e.w2});
    CHECK(r.max_rel_error <= 1e-4);
  }
}
