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

#include "goce/kernels.hpp"

#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace goce::kernels {

namespace {

inline void gemm_nn_rows(const double* a, const double* b, double* c, std::size_t r0, std::size_t r1,
                         std::size_t k, std::size_t n) {
  for (std::size_t i = r0; i < r1; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

inline void gemm_nt_rows(const double* a, const double* b, double* c, std::size_t r0, std::size_t r1,
                         std::size_t k, std::size_t n) {
  for (std::size_t i = r0; i < r1; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

inline void gemm_tn_rows(const double* a, const double* b, double* c, std::size_t r0, std::size_t r1,
                         std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = r0; i < r1; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double api = a[p * m + i];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

inline bool softmax_row(const double* x, double* y, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = x[j] > mx ? x[j] : mx;
  if (!std::isfinite(mx)) return false;
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double e = std::isinf(x[j]) ? 0.0 : std::exp(x[j] - mx);
    y[j] = e;
    total += e;
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  return true;
}

}  // namespace

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  gemm_nn_rows(a.data(), b.data(), c.data(), 0, m, k, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  gemm_nt_rows(a.data(), b.data(), c.data(), 0, m, k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  gemm_tn_rows(a.data(), b.data(), c.data(), 0, m, m, k, n);
}

bool softmax_rows(std::span<const double> x, std::span<double> y, std::size_t m, std::size_t n) {
  bool ok = true;
  for (std::size_t i = 0; i < m; ++i) ok = softmax_row(x.data() + i * n, y.data() + i * n, n) && ok;
  return ok;
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    gemm_nn_rows(pa, pb, pc, r, r + 1, k, n);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    gemm_nt_rows(pa, pb, pc, r, r + 1, k, n);
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    gemm_tn_rows(pa, pb, pc, r, r + 1, m, k, n);
  }
}

bool softmax_rows(std::span<const double> x, std::span<double> y, std::size_t m, std::size_t n) {
  const double* px = x.data();
  double* py = y.data();
  const auto rows = static_cast<long long>(m);
  int bad = 0;
#pragma omp parallel for schedule(static) reduction(+ : bad) if (m * n >= kParallelThreshold)
  for (long long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    if (!softmax_row(px + r * n, py + r * n, n)) ++bad;
  }
  return bad == 0;
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace goce::kernels
