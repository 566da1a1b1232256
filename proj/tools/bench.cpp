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

// Serial reference kernels against their OpenMP counterparts, plus batch
// prediction against a one-example-at-a-time loop.
//
//   goce_bench [repetitions]
//
// Each row reports the median wall time and whether both paths produced
// bit-identical results.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "goce/kernels.hpp"
#include "goce/model.hpp"
#include "goce/rng.hpp"
#include "goce/tasks_metrics.hpp"

using namespace goce;

namespace {

double median_ms(int reps, const std::function<void()>& fn) {
  std::vector<double> ms;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  return ms[ms.size() / 2];
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = 2.0 * rng.uniform_open() - 1.0;
  return v;
}

void row(const std::string& name, double serial_ms, double parallel_ms, bool identical) {
  std::printf("%-28s %12.3f %12.3f %8.2fx   %s\n", name.c_str(), serial_ms, parallel_ms, serial_ms / parallel_ms,
              identical ? "yes" : "NO");
}

using Gemm = void (*)(std::span<const double>, std::span<const double>, std::span<double>, std::size_t, std::size_t,
                      std::size_t);

void bench_gemm(const char* layout, Gemm serial, Gemm parallel, std::size_t n, int reps, Rng& rng) {
  const auto a = random_vec(n * n, rng), b = random_vec(n * n, rng);
  std::vector<double> cs(n * n), cp(n * n);
  const double ts = median_ms(reps, [&] {
    std::fill(cs.begin(), cs.end(), 0.0);
    serial(a, b, cs, n, n, n);
  });
  const double tp = median_ms(reps, [&] {
    std::fill(cp.begin(), cp.end(), 0.0);
    parallel(a, b, cp, n, n, n);
  });
  row(std::string("gemm_") + layout + " " + std::to_string(n), ts, tp, cs == cp);
}

void bench_softmax(std::size_t m, std::size_t n, int reps, Rng& rng) {
  auto x = random_vec(m * n, rng);
  for (std::size_t i = 0; i < x.size(); i += 7) x[i] = -std::numeric_limits<double>::infinity();
  std::vector<double> ys(m * n), yp(m * n);
  const double ts = median_ms(reps, [&] { kernels::serial::softmax_rows(x, ys, m, n); });
  const double tp = median_ms(reps, [&] { kernels::parallel::softmax_rows(x, yp, m, n); });
  row("softmax " + std::to_string(m) + "x" + std::to_string(n), ts, tp, ys == yp);
}

void bench_predict(std::size_t count, int reps) {
  const model::ModelConfig cfg;
  const auto params = model::init_params(cfg);
  const auto data = tasks::to_examples(tasks::generate(count, 2, 4, 3));
  std::vector<intervention::PredictionDistribution> loop, batch;
  const double ts = median_ms(reps, [&] {
    loop.clear();
    for (const auto& e : data) loop.push_back(model::forward(e.tokens, params, cfg).prediction);
  });
  const double tp = median_ms(reps, [&] { batch = model::predict(data, params, cfg); });
  bool identical = loop.size() == batch.size();
  for (std::size_t i = 0; identical && i < loop.size(); ++i) identical = loop[i].probs == batch[i].probs;
  row("predict " + std::to_string(count) + " examples", ts, tp, identical);
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::max(1, std::atoi(argv[1])) : 5;
  Rng rng(1);
  std::printf("threads: %d, repetitions: %d\n", kernels::max_threads(), reps);
  std::printf("%-28s %12s %12s %9s   %s\n", "kernel", "serial ms", "parallel ms", "speedup", "bit-identical");
  for (std::size_t n : {64, 128, 256, 512}) {
    bench_gemm("nn", kernels::serial::gemm_nn, kernels::parallel::gemm_nn, n, reps, rng);
  }
  bench_gemm("nt", kernels::serial::gemm_nt, kernels::parallel::gemm_nt, 256, reps, rng);
  bench_gemm("tn", kernels::serial::gemm_tn, kernels::parallel::gemm_tn, 256, reps, rng);
  for (std::size_t n : {256, 1024}) bench_softmax(n, n, reps, rng);
  bench_predict(256, reps);
  return 0;
}
