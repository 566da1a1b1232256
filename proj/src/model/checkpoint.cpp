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

#include "goce/checkpoint.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "goce/errors.hpp"

namespace goce::io {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Parsed text yields unsigned values; programmatically built JSON may hold
// signed ones.
bool non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Reads fields of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected a JSON object");
  }

  void size(const char* key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!non_negative_integer(*v)) throw ConfigError(where(key) + "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void u64(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!non_negative_integer(*v)) throw ConfigError(where(key) + "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void real(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + "expected a number");
      out = v->get<double>();
    }
  }
  void boolean(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + "expected true or false");
      out = v->get<bool>();
    }
  }
  void text(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + "expected a string");
      out = v->get<std::string>();
    }
  }
  const json* object(const char* key) { return find(key); }
  std::string child(const char* key) const { return path_ + key + "."; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + path_ + key + "'");
    }
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string where(const char* key = "") const { return "config '" + path_ + key + "': "; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string mode_name(graph::HardConcreteConfig::Mode m) {
  return m == graph::HardConcreteConfig::Mode::kSample ? "sample" : "deterministic";
}

graph::HardConcreteConfig::Mode parse_mode(const std::string& s) {
  if (s == "sample") return graph::HardConcreteConfig::Mode::kSample;
  if (s == "deterministic") return graph::HardConcreteConfig::Mode::kDeterministic;
  throw ConfigError("unknown hard-concrete mode '" + s + "' (expected sample or deterministic)");
}

ordered_json tensor_json(const Tensor& t) {
  ordered_json j;
  j["shape"] = t.shape();
  j["data"] = t.vec();
  return j;
}

Tensor tensor_from_json(const json& j, const std::string& name) {
  try {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    return Tensor(std::move(shape), std::move(data));
  } catch (const json::exception& e) {
    throw DataError("checkpoint tensor '" + name + "': " + e.what());
  } catch (const DimensionError& e) {
    throw DataError("checkpoint tensor '" + name + "': " + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json parse_file(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError(path + ": invalid JSON (" + e.what() + ")");
  }
}

}  // namespace

ordered_json to_json(const model::ModelConfig& c) {
  ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["n_classes"] = c.n_classes;
  j["d"] = c.d;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["d_k"] = c.d_k;
  j["n_experts"] = c.n_experts;
  j["k"] = c.k;
  j["d_ff"] = c.d_ff;
  j["max_T"] = c.max_T;
  j["edge_hidden"] = c.edge_hidden;
  j["readout_hidden"] = c.readout_hidden;
  j["mask_mode"] = std::string(model::to_string(c.mask_mode));
  j["hard_concrete"] = {{"tau", c.hard_concrete.tau},
                        {"gamma", c.hard_concrete.gamma},
                        {"zeta", c.hard_concrete.zeta},
                        {"mode", mode_name(c.hard_concrete.mode)}};
  j["edge_threshold"] = c.edge_threshold;
  j["gate_logit_init"] = c.gate_logit_init;
  j["lambda_l0"] = c.csail.lambda_l0;
  j["lambda_kl"] = c.csail.lambda_kl;
  j["tau_cf"] = c.csail.tau_cf;
  j["lambda_int"] = c.lambda_int;
  j["clamp"] = {{"fraction", c.clamp.fraction},
                {"stddev", c.clamp.stddev},
                {"tau_cf", c.clamp.tau_cf},
                {"lambda_delta", c.clamp.lambda_delta},
                {"n_draws", c.clamp.n_draws}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"batch_size", c.optimizer.batch_size}};
  j["seed"] = c.seed;
  return j;
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig c;
  ObjectReader r(j, "model.");
  r.size("vocab_size", c.vocab_size);
  r.size("n_classes", c.n_classes);
  r.size("d", c.d);
  r.size("n_layers", c.n_layers);
  r.size("n_heads", c.n_heads);
  r.size("d_k", c.d_k);
  r.size("n_experts", c.n_experts);
  r.size("k", c.k);
  r.size("d_ff", c.d_ff);
  r.size("max_T", c.max_T);
  r.size("edge_hidden", c.edge_hidden);
  r.size("readout_hidden", c.readout_hidden);
  std::string mask(model::to_string(c.mask_mode));
  r.text("mask_mode", mask);
  c.mask_mode = model::parse_mask_mode(mask);
  if (const json* hc = r.object("hard_concrete")) {
    ObjectReader h(*hc, r.child("hard_concrete"));
    h.real("tau", c.hard_concrete.tau);
    h.real("gamma", c.hard_concrete.gamma);
    h.real("zeta", c.hard_concrete.zeta);
    std::string mode = mode_name(c.hard_concrete.mode);
    h.text("mode", mode);
    c.hard_concrete.mode = parse_mode(mode);
    h.finish();
  }
  r.real("edge_threshold", c.edge_threshold);
  r.real("gate_logit_init", c.gate_logit_init);
  r.real("lambda_l0", c.csail.lambda_l0);
  r.real("lambda_kl", c.csail.lambda_kl);
  r.real("tau_cf", c.csail.tau_cf);
  r.real("lambda_int", c.lambda_int);
  if (const json* cl = r.object("clamp")) {
    ObjectReader h(*cl, r.child("clamp"));
    h.real("fraction", c.clamp.fraction);
    h.real("stddev", c.clamp.stddev);
    h.real("tau_cf", c.clamp.tau_cf);
    h.real("lambda_delta", c.clamp.lambda_delta);
    h.size("n_draws", c.clamp.n_draws);
    h.finish();
  }
  if (const json* op = r.object("optimizer")) {
    ObjectReader h(*op, r.child("optimizer"));
    h.real("lr", c.optimizer.lr);
    h.real("beta1", c.optimizer.beta1);
    h.real("beta2", c.optimizer.beta2);
    h.real("eps", c.optimizer.eps);
    h.size("batch_size", c.optimizer.batch_size);
    h.finish();
  }
  r.u64("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

ordered_json to_json(const evolution::GateConfig& c) {
  ordered_json j;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["t0"] = c.t0;
  j["eps0"] = c.eps0;
  j["gamma"] = c.gamma;
  j["gamma_eps"] = c.gamma_eps;
  j["interleave"] = c.interleave;
  return j;
}

evolution::GateConfig gate_config_from_json(const json& j) {
  evolution::GateConfig c;
  ObjectReader r(j, "evolution.");
  r.real("alpha", c.alpha);
  r.real("beta", c.beta);
  r.real("t0", c.t0);
  r.real("eps0", c.eps0);
  r.real("gamma", c.gamma);
  r.real("gamma_eps", c.gamma_eps);
  r.boolean("interleave", c.interleave);
  r.finish();
  c.validate();
  if (c.interleave) throw ConfigError("evolution.interleave is not supported; evolution runs after training");
  return c;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig rc;
  ObjectReader r(j, "");
  if (const json* m = r.object("model")) rc.model = model_config_from_json(*m);
  if (const json* e = r.object("evolution")) rc.evolution = gate_config_from_json(*e);
  r.finish();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON (" + e.what() + ")");
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j);
}

ordered_json to_json(const RunConfig& cfg) {
  return ordered_json{{"model", to_json(cfg.model)}, {"evolution", to_json(cfg.evolution)}};
}

ordered_json to_json(const Checkpoint& ckpt) {
  ordered_json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["config"] = to_json(ckpt.config);
  ordered_json params = ordered_json::object();
  model::GoceParams::fields(ckpt.params,
                            [&](const std::string& name, const Tensor& t) { params[name] = tensor_json(t); });
  j["params"] = std::move(params);
  j["optimizer"] = {{"step", ckpt.adam.step}, {"m", ckpt.adam.m}, {"v", ckpt.adam.v}};
  j["rng"] = {{"seed", ckpt.rng_seed}, {"step", ckpt.rng_step}};
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  if (!j.is_object()) throw DataError("checkpoint: expected a JSON object");
  static const std::set<std::string> kKeys{"format_version", "config", "params", "optimizer", "rng"};
  for (const auto& key : kKeys) {
    if (!j.contains(key)) throw DataError("checkpoint: missing '" + key + "'");
  }
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.count(key)) throw DataError("checkpoint: unknown key '" + key + "'");
  }
  if (j["format_version"] != kCheckpointFormatVersion) {
    throw DataError("checkpoint: unsupported format_version " + j["format_version"].dump());
  }
  Checkpoint c;
  c.config = model_config_from_json(j["config"]);

  const json& params = j["params"];
  if (!params.is_object()) throw DataError("checkpoint: 'params' must be an object");
  c.params.layers.resize(c.config.n_layers);
  std::set<std::string> expected;
  std::string missing;
  model::GoceParams::fields(c.params, [&](const std::string& name, Tensor& t) {
    expected.insert(name);
    auto it = params.find(name);
    if (it == params.end()) {
      missing += "  " + name + ": missing\n";
      return;
    }
    t = tensor_from_json(*it, name);
  });
  for (const auto& [name, _] : params.items()) {
    if (!expected.count(name)) missing += "  " + name + ": not part of the configured model\n";
  }
  if (!missing.empty()) throw DimensionError("checkpoint parameters do not match the config:\n" + missing);
  model::check_shapes(c.params, c.config);

  try {
    const json& opt = j["optimizer"];
    c.adam.step = opt.at("step").get<std::size_t>();
    c.adam.m = opt.at("m").get<std::vector<double>>();
    c.adam.v = opt.at("v").get<std::vector<double>>();
    c.rng_seed = j["rng"].at("seed").get<std::uint64_t>();
    c.rng_step = j["rng"].at("step").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  const std::size_t n = model::param_count(c.params);
  if (c.adam.m.size() != n || c.adam.v.size() != n) {
    throw DimensionError("checkpoint: optimizer moments do not match the parameter count");
  }
  return c;
}

void write_json_file(const std::string& path, const ordered_json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << j.dump() << '\n';
  if (!os) throw DataError("failed writing '" + path + "'");
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { write_json_file(path, to_json(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) {
  try {
    return checkpoint_from_json(parse_file(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace goce::io
