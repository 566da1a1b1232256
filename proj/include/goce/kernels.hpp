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

// Dense kernels used by the autodiff tape.
//
// Two implementations of every kernel exist: `serial::` is the plain
// reference loop nest, `parallel::` splits the output rows across OpenMP
// threads. Each output element is accumulated by exactly one thread in the
// same k order as the serial version, so results are bit-identical.

#include <cstddef>
#include <span>

namespace goce::kernels {

/// Problems smaller than this many multiply-adds stay on one thread.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

namespace serial {

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);

/// Row-wise max-subtracted softmax; -inf entries map to exactly 0.
/// Returns false if some row has no finite entry.
bool softmax_rows(std::span<const double> x, std::span<double> y, std::size_t m, std::size_t n);

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
bool softmax_rows(std::span<const double> x, std::span<double> y, std::size_t m, std::size_t n);

}  // namespace parallel

/// Number of OpenMP threads available (1 when built without OpenMP).
int max_threads();

}  // namespace goce::kernels
