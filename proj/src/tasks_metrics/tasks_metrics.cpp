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

#include "goce/tasks_metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>

#include "goce/errors.hpp"
#include "goce/rng.hpp"

namespace goce::tasks {

std::vector<SyntheticExample> generate(std::size_t count, std::size_t hops, std::size_t group_order,
                                       std::uint64_t seed, std::size_t n_entities) {
  if (group_order < 2) throw ConfigError("group_order must be >= 2");
  if (hops < 1) throw ConfigError("hops must be >= 1");
  if (n_entities < 1) throw ConfigError("n_entities must be >= 1");
  const TaskLayout layout{group_order, n_entities};
  Rng rng(derive_seed(seed, "data"));
  std::vector<SyntheticExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SyntheticExample ex;
    ex.hops = hops;
    ex.tokens.reserve(2 * hops + 2);
    std::size_t sum = 0;
    ex.tokens.push_back(layout.entity_token(rng.below(n_entities)));
    for (std::size_t h = 0; h < hops; ++h) {
      const std::size_t r = rng.below(group_order);
      sum += r;
      ex.tokens.push_back(layout.relation_token(r));
      ex.tokens.push_back(layout.entity_token(rng.below(n_entities)));
    }
    ex.tokens.push_back(kQueryToken);
    ex.label = sum % group_order;
    out.push_back(std::move(ex));
  }
  return out;
}

void write_jsonl(std::ostream& os, std::span<const SyntheticExample> data) {
  for (const auto& ex : data) {
    nlohmann::ordered_json j;
    j["tokens"] = ex.tokens;
    j["label"] = ex.label;
    j["hops"] = ex.hops;
    os << j.dump() << '\n';
  }
}

void write_jsonl(const std::string& path, std::span<const SyntheticExample> data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_jsonl(os, data);
  if (!os) throw DataError("failed writing '" + path + "'");
}

namespace {

std::size_t as_index(const nlohmann::json& v, const std::string& what, std::size_t line) {
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
    throw DataError("line " + std::to_string(line) + ": " + what + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

std::vector<SyntheticExample> read_jsonl(std::istream& is) {
  std::vector<SyntheticExample> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(is, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("line " + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError("line " + std::to_string(line) + ": expected a JSON object");
    for (const auto& [key, _] : j.items()) {
      if (key != "tokens" && key != "label" && key != "hops") {
        throw DataError("line " + std::to_string(line) + ": unknown key '" + key + "'");
      }
    }
    if (!j.contains("tokens") || !j["tokens"].is_array()) {
      throw DataError("line " + std::to_string(line) + ": missing 'tokens' array");
    }
    if (!j.contains("label")) throw DataError("line " + std::to_string(line) + ": missing 'label'");
    SyntheticExample ex;
    for (const auto& t : j["tokens"]) ex.tokens.push_back(as_index(t, "token", line));
    if (ex.tokens.empty()) throw DataError("line " + std::to_string(line) + ": empty token list");
    ex.label = as_index(j["label"], "label", line);
    if (j.contains("hops")) ex.hops = as_index(j["hops"], "hops", line);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<SyntheticExample> read_jsonl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  try {
    return read_jsonl(is);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::vector<model::Example> to_examples(std::span<const SyntheticExample> data) {
  std::vector<model::Example> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(model::Example{ex.tokens, ex.label});
  return out;
}

MetricReport metrics(std::span<const intervention::PredictionDistribution> predictions,
                     std::span<const std::size_t> labels) {
  if (predictions.empty()) throw DataError("metrics: no examples");
  if (predictions.size() != labels.size()) {
    throw DataError("metrics: " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(labels.size()) + " labels");
  }
  const std::size_t n_classes = predictions.front().num_classes();
  const double n = static_cast<double>(predictions.size());

  MetricReport r;
  r.count = predictions.size();
  std::vector<std::size_t> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  std::vector<double> bin_conf(kEceBins, 0.0), bin_acc(kEceBins, 0.0);
  std::vector<std::size_t> bin_n(kEceBins, 0);

  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    const std::size_t y = labels[i];
    if (p.num_classes() != n_classes) throw DataError("metrics: inconsistent class count");
    if (y >= n_classes) throw DataError("metrics: label " + std::to_string(y) + " outside the class range");
    const std::size_t pred = p.argmax();
    const bool hit = pred == y;
    r.accuracy_at_1 += hit ? 1.0 : 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double diff = p.probs.at(0, c) - (c == y ? 1.0 : 0.0);
      r.brier += diff * diff;
    }
    r.nll -= std::log(std::max(p.probs.at(0, y), std::numeric_limits<double>::min()));
    if (hit) {
      ++tp[y];
    } else {
      ++fp[pred];
      ++fn[y];
    }
    const double conf = p.probs.at(0, pred);
    const std::size_t b = std::min(kEceBins - 1, static_cast<std::size_t>(conf * static_cast<double>(kEceBins)));
    bin_conf[b] += conf;
    bin_acc[b] += hit ? 1.0 : 0.0;
    ++bin_n[b];
  }
  r.accuracy_at_1 /= n;
  r.brier /= n;
  r.nll /= n;
  for (std::size_t b = 0; b < kEceBins; ++b) {
    if (bin_n[b] == 0) continue;
    const double nb = static_cast<double>(bin_n[b]);
    r.ece += (nb / n) * std::abs(bin_acc[b] / nb - bin_conf[b] / nb);
  }
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (tp[c] + fp[c] + fn[c] == 0) continue;  // class absent from labels and predictions
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    f1_sum += 2.0 * static_cast<double>(tp[c]) / denom;
    ++r.f1_classes;
  }
  r.macro_f1 = r.f1_classes ? f1_sum / static_cast<double>(r.f1_classes) : 0.0;
  return r;
}

nlohmann::ordered_json to_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["accuracy_at_1"] = report.accuracy_at_1;
  j["brier"] = report.brier;
  j["macro_f1"] = report.macro_f1;
  j["ece"] = report.ece;
  j["nll"] = report.nll;
  j["count"] = report.count;
  j["f1_classes"] = report.f1_classes;
  return j;
}

}  // namespace goce::tasks
