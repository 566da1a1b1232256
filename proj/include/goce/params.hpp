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

// Parameter blocks are templates over their storage type: `Block<Tensor>`
// owns values, `Block<ad::Var>` is the same block bound onto a tape. Every
// block exposes a static `fields(self, f)` that visits (name, member) pairs
// in a fixed order, which is all bind() and the model's flattening need.

#include <cstddef>
#include <string_view>
#include <vector>

#include "goce/autodiff.hpp"
#include "goce/tensor.hpp"

namespace goce {

/// Leaves for every tensor of a parameter block.
template <template <class> class Block>
Block<ad::Var> bind(ad::Tape& tape, const Block<Tensor>& params, bool requires_grad = true) {
  std::vector<ad::Var> vars;
  Block<Tensor>::fields(params, [&](std::string_view, const Tensor& t) { vars.push_back(tape.leaf(t, requires_grad)); });
  Block<ad::Var> out;
  std::size_t k = 0;
  Block<ad::Var>::fields(out, [&](std::string_view, ad::Var& v) { v = vars[k++]; });
  return out;
}

/// Gradients of a bound block, shaped like the value block.
template <template <class> class Block>
Block<Tensor> gradients(const ad::Tape& tape, const Block<ad::Var>& vars) {
  std::vector<Tensor> grads;
  Block<ad::Var>::fields(vars, [&](std::string_view, const ad::Var& v) { grads.push_back(tape.grad(v)); });
  Block<Tensor> out;
  std::size_t k = 0;
  Block<Tensor>::fields(out, [&](std::string_view, Tensor& t) { t = std::move(grads[k++]); });
  return out;
}

}  // namespace goce
