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

// goce: data generation, training, evaluation, evolution and graph dumps.
//
// Primary outputs go to files or stdout as JSON; diagnostics go to stderr
// at the level selected by GOCE_LOG={error,info,debug}.
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric abort.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "goce/checkpoint.hpp"
#include "goce/errors.hpp"
#include "goce/evolution_gate.hpp"
#include "goce/intervened_forward.hpp"
#include "goce/model.hpp"
#include "goce/tasks_metrics.hpp"
#include "json.hpp"

namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericAbort = 4 };

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("goce");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("GOCE_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
    if (level != "info") spdlog::warn("unknown GOCE_LOG level '{}', using info", level);
  }
}

void print_json(const ordered_json& j) { std::cout << j.dump(2) << '\n'; }

std::vector<goce::model::Example> load_examples(const std::string& path) {
  const auto data = goce::tasks::read_jsonl(path);
  spdlog::info("loaded {} examples from {}", data.size(), path);
  return goce::tasks::to_examples(data);
}

std::vector<std::size_t> labels_of(const std::vector<goce::model::Example>& data) {
  std::vector<std::size_t> y;
  y.reserve(data.size());
  for (const auto& ex : data) y.push_back(ex.label);
  return y;
}

std::vector<std::size_t> parse_tokens(const std::string& text) {
  std::vector<std::size_t> out;
  std::string body = text;
  if (!body.empty() && body.front() == '[') {
    try {
      return nlohmann::json::parse(body).get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw goce::DataError("--input: " + std::string(e.what()));
    }
  }
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(item, &pos);
      if (v < 0 || pos != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw goce::DataError("--input: '" + item + "' is not a token id");
    }
  }
  if (out.empty()) throw goce::DataError("--input: no tokens");
  return out;
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::size_t hops = 2, count = 2000, group_order = 4, entities = goce::tasks::kDefaultEntities;
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen_data(const GenDataArgs& a) {
  const auto data = goce::tasks::generate(a.count, a.hops, a.group_order, a.seed, a.entities);
  goce::tasks::write_jsonl(a.out, data);
  std::vector<std::size_t> hist(a.group_order, 0);
  for (const auto& ex : data) ++hist[ex.label];
  const goce::tasks::TaskLayout layout{a.group_order, a.entities};
  print_json({{"count", data.size()},
              {"histogram", hist},
              {"tokens_per_example", 2 * a.hops + 2},
              {"vocab_size", layout.vocab_size()}});
  return kOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string config, data, ckpt_out, log_out, init_ckpt;
  std::size_t steps = 200;
  std::optional<std::uint64_t> seed;
};

ordered_json log_line(const goce::model::TrainLogEntry& e) {
  ordered_json j;
  j["step"] = e.step;
  j["cross_entropy"] = e.loss.cross_entropy;
  j["l0"] = e.loss.l0;
  j["kl"] = e.loss.kl;
  j["intervention"] = e.loss.intervention;
  j["total"] = e.loss.total;
  j["edges"] = e.loss.mean_edges;
  j["expert_usage"] = e.loss.expert_usage;
  return j;
}

int run_train(const TrainArgs& a) {
  goce::io::Checkpoint ckpt;
  goce::model::TrainState state;
  if (!a.init_ckpt.empty()) {
    if (!a.config.empty()) throw goce::ConfigError("--config and --init-ckpt are mutually exclusive");
    ckpt = goce::io::load_checkpoint(a.init_ckpt);
    if (a.seed && *a.seed != ckpt.config.seed) {
      throw goce::ConfigError("--seed differs from the seed stored in --init-ckpt");
    }
    state.params = ckpt.params;
    state.adam = ckpt.adam;
  } else {
    if (!a.config.empty()) ckpt.config = goce::io::load_run_config(a.config).model;
    if (a.seed) ckpt.config.seed = *a.seed;
    ckpt.config.validate();
    state = goce::model::initial_state(ckpt.config);
  }
  const auto data = load_examples(a.data);
  spdlog::info("training {} steps, {} parameters, mask mode {}", a.steps, goce::model::param_count(state.params),
               goce::model::to_string(ckpt.config.mask_mode));

  goce::model::TrainResult result = goce::model::train(data, ckpt.config, a.steps, std::move(state));

  ckpt.params = result.state.params;
  ckpt.adam = result.state.adam;
  ckpt.rng_seed = ckpt.config.seed;
  ckpt.rng_step = result.state.adam.step;
  goce::io::save_checkpoint(a.ckpt_out, ckpt);

  if (!a.log_out.empty()) {
    std::ofstream os(a.log_out, std::ios::binary);
    if (!os) throw goce::DataError("cannot open '" + a.log_out + "' for writing");
    for (const auto& e : result.log) os << log_line(e).dump() << '\n';
  }
  for (const auto& e : result.log) {
    spdlog::debug("step {} ce {:.6f} total {:.6f} edges {:.2f}", e.step, e.loss.cross_entropy, e.loss.total,
                  e.loss.mean_edges);
  }
  ordered_json summary;
  summary["steps"] = result.log.size();
  summary["optimizer_step"] = result.state.adam.step;
  if (!result.log.empty()) {
    summary["first"] = log_line(result.log.front());
    summary["last"] = log_line(result.log.back());
  }
  summary["aborted"] = result.aborted;
  print_json(summary);
  if (result.aborted) {
    spdlog::error("{}; last good state written to {}", result.abort_reason, a.ckpt_out);
    return kNumericAbort;
  }
  return kOk;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt, data, config, mask_mode;
  bool contrast = false;
  std::optional<std::uint64_t> seed;
};

ordered_json evaluate(const std::vector<goce::model::Example>& data, const goce::io::Checkpoint& ckpt,
                      goce::model::MaskMode mode) {
  const auto preds = goce::model::predict(data, ckpt.params, ckpt.config, mode);
  auto j = goce::tasks::to_json(goce::tasks::metrics(preds, labels_of(data)));
  j["mask_mode"] = std::string(goce::model::to_string(mode));
  return j;
}

int run_eval(const EvalArgs& a) {
  goce::io::Checkpoint ckpt = goce::io::load_checkpoint(a.ckpt);
  if (!a.config.empty()) {
    const auto cfg = goce::io::load_run_config(a.config).model;
    goce::model::check_shapes(ckpt.params, cfg);
  }
  const auto data = load_examples(a.data);
  if (a.contrast) {
    ordered_json out;
    for (auto mode : {goce::model::MaskMode::kGoceGraph, goce::model::MaskMode::kChainPredecessor,
                      goce::model::MaskMode::kCausalFull}) {
      out[std::string(goce::model::to_string(mode))] = evaluate(data, ckpt, mode);
    }
    print_json(out);
  } else {
    const auto mode = a.mask_mode.empty() ? ckpt.config.mask_mode : goce::model::parse_mask_mode(a.mask_mode);
    print_json(evaluate(data, ckpt, mode));
  }
  return kOk;
}

// ------------------------------------------------------------------ evolve

struct EvolveArgs {
  std::string ckpt, data, config, archive_out, ckpt_out, working_out;
  std::size_t rounds = 50, frozen = 256;
  std::optional<std::uint64_t> seed;
};

int run_evolve(const EvolveArgs& a) {
  goce::io::Checkpoint ckpt = goce::io::load_checkpoint(a.ckpt);
  goce::evolution::GateConfig gate;
  if (!a.config.empty()) {
    const auto rc = goce::io::load_run_config(a.config);
    goce::model::check_shapes(ckpt.params, rc.model);
    gate = rc.evolution;
  }
  gate.validate();
  const std::uint64_t seed = a.seed.value_or(ckpt.config.seed);

  auto data = load_examples(a.data);
  if (data.size() > a.frozen) data.resize(a.frozen);
  const goce::evolution::ModelFitness model_fitness(data, ckpt.config, ckpt.params,
                                                    goce::derive_seed(seed, "evolution-clamp"));
  const auto f = [&](std::span<const double> theta) { return model_fitness(theta, gate); };

  const std::vector<double> theta0 = goce::model::flatten(ckpt.params);
  const double f0 = f(theta0);
  auto state = goce::evolution::initial_state(theta0, f0, gate);
  goce::Rng rng(goce::derive_seed(seed, "evolution"));

  const fs::path archive_path(a.archive_out);
  const fs::path snapshot_dir = archive_path.parent_path() / (archive_path.filename().string() + ".d");
  std::ofstream archive(a.archive_out, std::ios::binary);
  if (!archive) throw goce::DataError("cannot open '" + a.archive_out + "' for writing");

  auto snapshot = [&](const std::vector<double>& theta) {
    goce::io::Checkpoint c = ckpt;
    c.params = goce::model::unflatten(theta, ckpt.params);
    return c;
  };
  auto on_round = [&](const goce::evolution::ArchiveEntry& e) {
    std::string path;
    if (e.accepted) {
      fs::create_directories(snapshot_dir);
      char name[32];
      std::snprintf(name, sizeof name, "round_%06zu.json", e.round);
      path = (snapshot_dir / name).string();
      goce::io::save_checkpoint(path, snapshot(*e.theta));
    }
    archive << goce::evolution::to_json(e, path).dump() << '\n';
    spdlog::debug("round {} F {:.6f} accepted {} T {:.4g} eps {:.4g}", e.round, e.f, e.accepted, e.temperature,
                  e.epsilon);
  };
  const auto result = goce::evolution::evolve(a.rounds, std::move(state), f, gate, rng, on_round);

  goce::io::save_checkpoint(a.ckpt_out, snapshot(result.state.best_theta));
  if (!a.working_out.empty()) goce::io::save_checkpoint(a.working_out, snapshot(result.state.theta));

  std::size_t accepted = 0;
  for (const auto& e : result.archive) accepted += e.accepted ? 1 : 0;
  print_json({{"rounds", result.archive.size()},
              {"accepted", accepted},
              {"initial_F", f0},
              {"best_F", result.state.best_f},
              {"best_round", result.state.best_round},
              {"working_F", result.state.f},
              {"T", result.state.temperature},
              {"epsilon", result.state.epsilon}});
  return kOk;
}

// -------------------------------------------------------------- dump-graph

struct DumpArgs {
  std::string ckpt, input, dot_out, intervene, mask_mode;
  bool attn = false;
  std::optional<std::uint64_t> seed;
};

int run_dump_graph(const DumpArgs& a) {
  const goce::io::Checkpoint ckpt = goce::io::load_checkpoint(a.ckpt);
  const auto tokens = parse_tokens(a.input);
  goce::model::ForwardOptions opts;
  opts.keep_attention = a.attn;
  if (!a.mask_mode.empty()) opts.mask_override = goce::model::parse_mask_mode(a.mask_mode);
  const auto fwd = goce::model::forward(tokens, ckpt.params, ckpt.config, opts);

  ordered_json out;
  out["tokens"] = tokens;
  out["graph"] = goce::graph::to_json(fwd.graph);
  out["probs"] = fwd.prediction.probs.vec();
  auto routing = ordered_json::array();
  for (const auto& layer : fwd.routing) routing.push_back(goce::moe::to_json(layer));
  out["routing"] = std::move(routing);
  if (a.attn) {
    auto layers = ordered_json::array();
    for (const auto& heads : fwd.attention) {
      auto hs = ordered_json::array();
      for (const auto& m : heads) {
        auto rows = ordered_json::array();
        for (std::size_t i = 0; i < m.rows(); ++i) {
          std::vector<double> row(m.cols());
          for (std::size_t j = 0; j < m.cols(); ++j) row[j] = m.at(i, j);
          rows.push_back(row);
        }
        hs.push_back(std::move(rows));
      }
      layers.push_back(std::move(hs));
    }
    out["attention"] = std::move(layers);
  }
  if (!a.intervene.empty()) {
    const auto colon = a.intervene.find(':');
    if (colon == std::string::npos) throw goce::ConfigError("--intervene expects idx:seed");
    std::size_t idx = 0;
    std::uint64_t seed = 0;
    try {
      idx = std::stoull(a.intervene.substr(0, colon));
      seed = std::stoull(a.intervene.substr(colon + 1));
    } catch (const std::exception&) {
      throw goce::ConfigError("--intervene expects idx:seed, got '" + a.intervene + "'");
    }
    const auto spec = goce::intervention::single_token_clamp(tokens.size(), idx, seed, ckpt.config);
    out["intervention"] = goce::intervention::to_json(
        goce::intervention::intervention_report(tokens, ckpt.params, ckpt.config, spec, opts));
  }
  if (!a.dot_out.empty()) {
    std::ofstream os(a.dot_out, std::ios::binary);
    if (!os) throw goce::DataError("cannot open '" + a.dot_out + "' for writing");
    os << goce::graph::to_dot(fwd.graph);
  }
  print_json(out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Causal-graph transformer toolkit: data, training, evaluation, evolution, graph dumps"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic relation-composition task as JSONL");
  gen_cmd->add_option("--hops", gen.hops, "Relations composed per example")->capture_default_str();
  gen_cmd->add_option("--count", gen.count, "Number of examples")->capture_default_str();
  gen_cmd->add_option("--group-order", gen.group_order, "Order of the cyclic relation group")->capture_default_str();
  gen_cmd->add_option("--entities", gen.entities, "Number of entity tokens")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Root seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output JSONL path")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--config", tr.config, "Run config JSON");
  train_cmd->add_option("--data", tr.data, "Training JSONL")->required();
  train_cmd->add_option("--steps", tr.steps, "Optimizer steps")->capture_default_str();
  train_cmd->add_option("--ckpt-out", tr.ckpt_out, "Checkpoint output path")->required();
  train_cmd->add_option("--log-out", tr.log_out, "Per-step JSONL log path");
  train_cmd->add_option("--init-ckpt", tr.init_ckpt, "Resume from this checkpoint");
  train_cmd->add_option("--seed", tr.seed, "Root seed (overrides the config)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; prints a metric report");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Evaluation JSONL")->required();
  eval_cmd->add_option("--config", ev.config, "Run config to check the checkpoint against");
  auto* mm = eval_cmd->add_option("--mask-mode", ev.mask_mode, "goce-graph, chain-predecessor or causal-full");
  eval_cmd->add_flag("--contrast", ev.contrast, "Report all three mask modes")->excludes(mm);
  eval_cmd->add_option("--seed", ev.seed, "Root seed (evaluation is deterministic)");

  EvolveArgs evo;
  auto* evolve_cmd = app.add_subcommand("evolve", "Refine a checkpoint with the annealing gate");
  evolve_cmd->add_option("--ckpt", evo.ckpt, "Starting checkpoint")->required();
  evolve_cmd->add_option("--data", evo.data, "Held-out JSONL; the first --frozen examples are used")->required();
  evolve_cmd->add_option("--rounds", evo.rounds, "Evolution rounds")->capture_default_str();
  evolve_cmd->add_option("--frozen", evo.frozen, "Size of the frozen evaluation batch")->capture_default_str();
  evolve_cmd->add_option("--config", evo.config, "Run config (evolution section)");
  evolve_cmd->add_option("--archive-out", evo.archive_out, "Archive JSONL path")->required();
  evolve_cmd->add_option("--ckpt-out", evo.ckpt_out, "Best (running-minimum) checkpoint path")->required();
  evolve_cmd->add_option("--working-out", evo.working_out, "Final working-point checkpoint path");
  evolve_cmd->add_option("--seed", evo.seed, "Root seed (defaults to the checkpoint's)");

  DumpArgs dump;
  auto* dump_cmd = app.add_subcommand("dump-graph", "Dump the causal graph for one input as JSON (and DOT)");
  dump_cmd->add_option("--ckpt", dump.ckpt, "Checkpoint")->required();
  dump_cmd->add_option("--input", dump.input, "Token ids, comma separated or a JSON array")->required();
  dump_cmd->add_flag("--attn", dump.attn, "Include attention maps per layer and head");
  dump_cmd->add_option("--dot", dump.dot_out, "Write the graph in DOT format to this path");
  dump_cmd->add_option("--mask-mode", dump.mask_mode, "Override the checkpoint's mask mode");
  dump_cmd->add_option("--intervene", dump.intervene, "idx:seed, clamp token idx and report both predictions");
  dump_cmd->add_option("--seed", dump.seed, "Root seed (the dump is deterministic)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*evolve_cmd) return run_evolve(evo);
    if (*dump_cmd) return run_dump_graph(dump);
  } catch (const goce::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfigError;
  } catch (const goce::DimensionError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfigError;
  } catch (const goce::NumericAbort& e) {
    spdlog::error("numeric abort: {}", e.what());
    return kNumericAbort;
  } catch (const goce::Error& e) {
    // Data, index and order errors all stem from the inputs.
    spdlog::error("data error: {}", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kFailure;
}
