// Copyright 2026 The visorsim Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include "visorsim/campaign.hpp"
#include "visorsim/sim.hpp"

namespace {

using namespace visorsim;

void BM_RunOnce1AppVm(benchmark::State& state) {
  auto cfg = config::preset_1appvm();
  std::uint64_t seed = 1;
  for (auto _ : state) {
    auto r = sim::run_once(cfg, seed++);
    benchmark::DoNotOptimize(r.trace_digest);
  }
}
BENCHMARK(BM_RunOnce1AppVm);

void BM_RunOnce3AppVm(benchmark::State& state) {
  auto cfg = config::preset_3appvm();
  std::uint64_t seed = 1;
  for (auto _ : state) {
    auto r = sim::run_once(cfg, seed++);
    benchmark::DoNotOptimize(r.trace_digest);
  }
}
BENCHMARK(BM_RunOnce3AppVm);

void BM_Campaign100(benchmark::State& state) {
  config::CampaignConfig cc;
  cc.scenario = config::preset_1appvm();
  cc.run_count = 100;
  for (auto _ : state) {
    cc.master_seed++;
    auto out = campaign::run_campaign(cc);
    benchmark::DoNotOptimize(out.report.runs_digest);
  }
}
BENCHMARK(BM_Campaign100);

void BM_DiagnosticMatrix(benchmark::State& state) {
  for (auto _ : state) {
    auto rows = campaign::run_diagnostic_matrix();
    benchmark::DoNotOptimize(rows.size());
  }
}
BENCHMARK(BM_DiagnosticMatrix);

}  // namespace

BENCHMARK_MAIN();
