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

#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "goce/checkpoint.hpp"
#include "goce/errors.hpp"

using namespace goce;
using nlohmann::json;

namespace {

model::ModelConfig small_config() {
  model::ModelConfig c;
  c.vocab_size = 10;
  c.d = 8;
  c.n_heads = 2;
  c.d_k = 4;
  c.n_experts = 3;
  c.d_ff = 8;
  c.max_T = 8;
  c.edge_hidden = 8;
  c.readout_hidden = 8;
  c.seed = 17;
  return c;
}

std::filesystem::path temp_file(const char* name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("model config json round-trip") {
  auto c = small_config();
  c.mask_mode = model::MaskMode::kChainPredecessor;
  c.hard_concrete.mode = graph::HardConcreteConfig::Mode::kDeterministic;
  c.csail.lambda_l0 = 0.0123;
  c.clamp.n_draws = 3;
  c.optimizer.lr = 1e-3;
  const auto j = io::to_json(c);
  const auto back = io::model_config_from_json(json::parse(j.dump()));
  CHECK(io::to_json(back).dump() == j.dump());
  CHECK(back.mask_mode == model::MaskMode::kChainPredecessor);
  CHECK(back.clamp.n_draws == 3);

  // Missing keys keep defaults.
  const auto partial = io::model_config_from_json(json::parse(R"({"d": 16})"));
  CHECK(partial.d == 16);
  CHECK(partial.n_layers == model::ModelConfig{}.n_layers);
}

TEST_CASE("config errors") {
  CHECK_THROWS_WITH_AS(io::model_config_from_json(json::parse(R"({"dd": 1})")), doctest::Contains("dd"), ConfigError);
  CHECK_THROWS_WITH_AS(io::model_config_from_json(json::parse(R"({"optimizer": {"momentum": 1}})")),
                       doctest::Contains("momentum"), ConfigError);
  CHECK_THROWS_AS(io::model_config_from_json(json::parse(R"({"d": "wide"})")), ConfigError);
  CHECK_THROWS_AS(io::model_config_from_json(json::parse(R"({"d": 0})")), ConfigError);
  CHECK_THROWS_AS(io::model_config_from_json(json::parse(R"({"mask_mode": "everything"})")), ConfigError);
  CHECK_THROWS_AS(io::gate_config_from_json(json::parse(R"({"gamma": 1.5})")), ConfigError);
  CHECK_THROWS_AS(io::gate_config_from_json(json::parse(R"({"interleave": true})")), ConfigError);
  CHECK_THROWS_AS(io::run_config_from_json(json::parse(R"({"model": {}, "extra": {}})")), ConfigError);

  const auto bad = temp_file("goce_bad_config.json");
  {
    std::ofstream(bad) << "{ not json";
  }
  CHECK_THROWS_AS(io::load_run_config(bad.string()), ConfigError);
  std::filesystem::remove(bad);
}

TEST_CASE("run config round-trip") {
  io::RunConfig rc;
  rc.model = small_config();
  rc.evolution.alpha = 0.5;
  rc.evolution.t0 = 2.0;
  const auto j = io::to_json(rc);
  const auto back = io::run_config_from_json(json::parse(j.dump()));
  CHECK(io::to_json(back).dump() == j.dump());
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  const auto cfg = small_config();
  io::Checkpoint ck;
  ck.config = cfg;
  ck.params = model::init_params(cfg);
  const auto n = model::param_count(ck.params);
  ck.adam.m.assign(n, 0.0);
  ck.adam.v.assign(n, 0.0);
  Rng rng(3);
  for (std::size_t i = 0; i < n; ++i) {
    ck.adam.m[i] = rng.normal() * 1e-7;
    ck.adam.v[i] = rng.uniform_open() / 3.0;
  }
  ck.adam.step = 42;
  ck.rng_seed = cfg.seed;
  ck.rng_step = 42;

  const auto path = temp_file("goce_ckpt_roundtrip.json");
  io::save_checkpoint(path.string(), ck);
  const auto back = io::load_checkpoint(path.string());
  CHECK(model::flatten(back.params) == model::flatten(ck.params));
  CHECK(back.adam.m == ck.adam.m);
  CHECK(back.adam.v == ck.adam.v);
  CHECK(back.adam.step == 42);
  CHECK(back.rng_seed == cfg.seed);
  CHECK(back.rng_step == 42);
  CHECK(io::to_json(back).dump() == io::to_json(ck).dump());

  const auto again = temp_file("goce_ckpt_roundtrip2.json");
  io::save_checkpoint(again.string(), back);
  std::ifstream a(path), b(again);
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  std::filesystem::remove(path);
  std::filesystem::remove(again);
}

TEST_CASE("checkpoint validation") {
  const auto cfg = small_config();
  io::Checkpoint ck;
  ck.config = cfg;
  ck.params = model::init_params(cfg);
  ck.adam.m.assign(model::param_count(ck.params), 0.0);
  ck.adam.v = ck.adam.m;
  const auto good = io::to_json(ck);

  SUBCASE("shape mismatch") {
    auto j = json::parse(good.dump());
    j["config"]["d"] = 12;
    CHECK_THROWS_AS(io::checkpoint_from_json(j), DimensionError);
  }
  SUBCASE("missing tensor") {
    auto j = json::parse(good.dump());
    j["params"].erase("head_w");
    CHECK_THROWS_WITH_AS(io::checkpoint_from_json(j), doctest::Contains("head_w"), Error);
  }
  SUBCASE("extra tensor") {
    auto j = json::parse(good.dump());
    j["params"]["bogus"] = {{"shape", {1, 1}}, {"data", {0.0}}};
    CHECK_THROWS_WITH_AS(io::checkpoint_from_json(j), doctest::Contains("bogus"), Error);
  }
  SUBCASE("data length disagrees with shape") {
    auto j = json::parse(good.dump());
    j["params"]["head_b"]["data"].push_back(1.0);
    CHECK_THROWS_AS(io::checkpoint_from_json(j), Error);
  }
  SUBCASE("format version") {
    auto j = json::parse(good.dump());
    j["format_version"] = 99;
    CHECK_THROWS_AS(io::checkpoint_from_json(j), Error);
  }
  SUBCASE("unknown top-level key") {
    auto j = json::parse(good.dump());
    j["notes"] = "x";
    CHECK_THROWS_WITH_AS(io::checkpoint_from_json(j), doctest::Contains("notes"), DataError);
  }
  SUBCASE("unreadable path") { CHECK_THROWS_AS(io::load_checkpoint("/nonexistent/ckpt.json"), Error); }
  SUBCASE("unwritable path") { CHECK_THROWS_AS(io::write_json_file("/nonexistent/dir/x.json", good), DataError); }
}
