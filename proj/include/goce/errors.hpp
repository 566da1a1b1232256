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

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace goce {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A softmax row had no finite entry.
class DegenerateRowError : public Error {
 public:
  using Error::Error;
};

/// KL support violation: p > 0 where q == 0.
class SupportError : public Error {
 public:
  using Error::Error;
};

/// backward() called on a non-scalar.
class RankError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Adjacency contains a directed cycle. `nodes` is one strongly connected
/// set with more than one member (or a self-loop).
class CycleError : public Error {
 public:
  CycleError(const std::string& what, std::vector<std::size_t> nodes) : Error(what), nodes(std::move(nodes)) {}
  std::vector<std::size_t> nodes;
};

/// Processing order inconsistent with the gate support.
class OrderError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset or checkpoint content.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss during training.
class NumericAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace goce
