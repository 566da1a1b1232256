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

// Synthetic multi-hop relation composition and the classification metrics.
//
// Vocabulary layout for group order G and n entities:
//   0            QUERY
//   1 .. G       relations r = 0 .. G-1 (token 1 + r)
//   G+1 .. G+n   entities
// A k-hop example reads  e r e r ... r e QUERY  (2k + 2 tokens) and its label
// is the sum of the k relations modulo G.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "goce/intervention.hpp"
#include "goce/model.hpp"
#include "json.hpp"

namespace goce::tasks {

inline constexpr std::size_t kQueryToken = 0;
inline constexpr std::size_t kDefaultEntities = 8;

struct TaskLayout {
  std::size_t group_order = 4;
  std::size_t n_entities = kDefaultEntities;

  std::size_t relation_token(std::size_t r) const { return 1 + r; }
  std::size_t entity_token(std::size_t e) const { return 1 + group_order + e; }
  std::size_t vocab_size() const { return 1 + group_order + n_entities; }
};

struct SyntheticExample {
  std::vector<std::size_t> tokens;
  std::size_t label = 0;
  std::size_t hops = 0;
};

/// Deterministic under seed. Throws ConfigError for group_order < 2 or hops < 1.
std::vector<SyntheticExample> generate(std::size_t count, std::size_t hops, std::size_t group_order,
                                       std::uint64_t seed, std::size_t n_entities = kDefaultEntities);

void write_jsonl(std::ostream& os, std::span<const SyntheticExample> data);
void write_jsonl(const std::string& path, std::span<const SyntheticExample> data);

/// Reads {"tokens": [...], "label": int, "hops": int?} per line; blank lines
/// are skipped. Throws DataError naming the offending line.
std::vector<SyntheticExample> read_jsonl(std::istream& is);
std::vector<SyntheticExample> read_jsonl(const std::string& path);

std::vector<model::Example> to_examples(std::span<const SyntheticExample> data);

struct MetricReport {
  double accuracy_at_1 = 0.0;
  double brier = 0.0;
  double macro_f1 = 0.0;
  double ece = 0.0;
  double nll = 0.0;
  std::size_t count = 0;      // examples
  std::size_t f1_classes = 0; // classes averaged in macro-F1
};

inline constexpr std::size_t kEceBins = 10;

/// Throws DataError on empty input, a length mismatch, or a label outside
/// the prediction's class range.
MetricReport metrics(std::span<const intervention::PredictionDistribution> predictions,
                     std::span<const std::size_t> labels);

nlohmann::ordered_json to_json(const MetricReport& report);

}  // namespace goce::tasks
