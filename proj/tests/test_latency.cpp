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

#include <doctest.h>

#include "visorsim/latency.hpp"
#include "visorsim/sim.hpp"

using namespace visorsim;
using namespace visorsim::latency;

TEST_CASE("default costs reproduce the published breakdown") {
  LatencyModel m;
  CHECK(recovery_latency(m, {false, false}).total_ms == 2895);
  CHECK(recovery_latency(m, {true, true}).total_ms == 715);
  CHECK(recovery_latency(m, {true, false}).total_ms == 815);
  CHECK(recovery_latency(m, {false, true}).total_ms == 2795);
}

TEST_CASE("breakdown components sum to the total for all flag combinations") {
  LatencyModel m;
  for (bool scrub : {false, true}) {
    for (bool nmi : {false, true}) {
      auto b = recovery_latency(m, {scrub, nmi});
      SimTime sum = 0;
      for (const auto& s : b.steps) sum += s.cost_ms;
      CHECK(sum == b.total_ms);
    }
  }
}

TEST_CASE("overridden costs flow through") {
  LatencyModel m;
  m.scrub_unallocated_ms = 1000;
  m.cpu_init_ms = 100;
  CHECK(recovery_latency(m, {false, false}).total_ms ==
        100 + 410 + 20 + 30 + 200 + 1000 + 5);
}

TEST_CASE("the simulated pause interval equals the model total") {
  faults::FaultSpec spec;
  spec.fault_class = faults::FaultClass::kHandlerLockHeld;
  spec.trigger.delay_ms = 2000;
  sim::RunOptions opts;
  opts.fault_override = spec;
  auto cfg = config::preset_1appvm();
  SUBCASE("no optimizations") {
    auto r = sim::run_once(cfg, 3, opts);
    CHECK(r.recovery_latency_ms == 2895);
  }
  SUBCASE("both optimizations") {
    cfg.recovery.skip_scrub = true;
    cfg.recovery.skip_nmi_check = true;
    auto r = sim::run_once(cfg, 3, opts);
    CHECK(r.recovery_latency_ms == 715);
  }
}

TEST_CASE("skip_scrub assumption holds: the free set is scrubbed pre-failure") {
  // Scrub-on-free keeps every free page zeroed, which is what entitles
  // the recovery path to skip the scrub step.
  auto w = sim::boot_world(config::preset_1appvm(), 4);
  CHECK(w->hv.heap.unscrubbed_free.empty());
  for (PageNum p : w->hv.heap.free_pages)
    CHECK(w->machine.page_content[static_cast<std::size_t>(p)] == 0);
  auto diag = config::preset_1appvm();
  diag.diagnostics.disable_scrub_on_free = true;
  auto w2 = sim::boot_world(diag, 4);
  CHECK(!w2->hv.heap.unscrubbed_free.empty());
}
