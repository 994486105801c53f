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

#include "visorsim/guests.hpp"
#include "visorsim/sim.hpp"

using namespace visorsim;
using namespace visorsim::guests;

TEST_CASE("step_workload walks the script and completes") {
  DomainState d;
  d.domain_id = 1;
  d.status = DomainStatus::kRunning;
  WorkloadStep io;
  io.kind = WorkloadStep::kIo;
  io.object = 3;
  WorkloadStep compute;
  compute.kind = WorkloadStep::kCompute;
  compute.duration_ms = 10;
  d.workload.script = {io, compute};
  auto a1 = step_workload(d, 5);
  CHECK(a1.kind == WorkloadAction::kIo);
  auto a2 = step_workload(d, 6);
  CHECK(a2.kind == WorkloadAction::kCompute);
  auto a3 = step_workload(d, 16);
  CHECK(a3.kind == WorkloadAction::kDone);
  CHECK(d.workload.completed);
  CHECK(d.workload.completed_at == 16);
}

TEST_CASE("driver timeout scan resends stale requests and flags the budget") {
  DomainState d;
  d.domain_id = 1;
  d.frontends = {0};
  std::vector<Ring> rings(1);
  rings[0].frontend = 1;
  IoRequest fresh;
  fresh.req_id = 1;
  fresh.issued_ms = 900;
  IoRequest stale;
  stale.req_id = 2;
  stale.issued_ms = 100;
  IoRequest exhausted;
  exhausted.req_id = 3;
  exhausted.issued_ms = 100;
  exhausted.resends = 3;
  rings[0].in_flight = {{1, fresh}, {2, stale}, {3, exhausted}};
  auto actions = driver_timeout_scan(d, rings, 1000, 500, 3);
  REQUIRE(actions.size() == 2);
  CHECK(actions[0].req_id == 2);
  CHECK(!actions[0].budget_exhausted);
  CHECK(actions[1].req_id == 3);
  CHECK(actions[1].budget_exhausted);
}

TEST_CASE("blk evaluator: fault-free run succeeds, missing ack fails") {
  DomainState d;
  d.workload.kind = WorkloadKind::kBlk;
  d.workload.completed = true;
  d.workload.writes_issued = 4;
  d.workload.writes_acked = 4;
  d.workload.objects = {{1, 10}, {2, 20}};
  d.workload.reference_objects = d.workload.objects;
  EvalContext ctx;
  CHECK(evaluate_completion(d, ctx).success);

  SUBCASE("an unacknowledged write fails") {
    d.workload.writes_acked = 3;
    CHECK(!evaluate_completion(d, ctx).success);
  }
  SUBCASE("an object differing from the reference image fails") {
    d.workload.objects[1] = 11;
    CHECK(!evaluate_completion(d, ctx).success);
  }
  SUBCASE("reported I/O errors fail") {
    d.workload.io_errors = 1;
    CHECK(!evaluate_completion(d, ctx).success);
  }
}

TEST_CASE("net evaluator: gap and window rules") {
  DomainState d;
  d.workload.kind = WorkloadKind::kNet;
  EvalContext ctx;
  ctx.net_started_ms = 0;
  ctx.net_deadline_ms = 14000;
  ctx.net_nominal_per_sec = 1000;

  SUBCASE("healthy 1ms stream passes") {
    for (SimTime t = 1; t < 14000; ++t) ctx.net_rx_times.push_back(t);
    CHECK(evaluate_completion(d, ctx).success);
  }
  SUBCASE("a 12s interruption fails") {
    for (SimTime t = 1; t < 1000; ++t) ctx.net_rx_times.push_back(t);
    for (SimTime t = 13000; t < 14000; ++t) ctx.net_rx_times.push_back(t);
    auto v = evaluate_completion(d, ctx);
    CHECK(!v.success);
  }
  SUBCASE("a sub-10s recovery pause passes via the gap rule") {
    ctx.failure_detected = true;
    ctx.recovery_end_ms = 5000;
    for (SimTime t = 1; t < 2100; ++t) ctx.net_rx_times.push_back(t);
    for (SimTime t = 5000; t < 14000; ++t) ctx.net_rx_times.push_back(t);
    CHECK(evaluate_completion(d, ctx).success);
  }
  SUBCASE("a post-recovery throughput drop >10% in a 1s window fails") {
    ctx.failure_detected = true;
    ctx.recovery_end_ms = 2000;
    for (SimTime t = 1; t < 8000; ++t)
      if (t < 6000 || t % 2 == 0) ctx.net_rx_times.push_back(t);
    for (SimTime t = 8000; t < 14000; ++t) ctx.net_rx_times.push_back(t);
    CHECK(!evaluate_completion(d, ctx).success);
  }
}

TEST_CASE("unix evaluator: premature termination on failed hypercalls") {
  DomainState d;
  d.workload.kind = WorkloadKind::kUnix;
  d.workload.completed = true;
  EvalContext ctx;
  CHECK(evaluate_completion(d, ctx).success);
  d.workload.hypercall_failures = 1;
  CHECK(!evaluate_completion(d, ctx).success);
}

TEST_CASE("lvs evaluator: more than two connection timeouts per client fails") {
  DomainState d;
  d.workload.kind = WorkloadKind::kLvsDirector;
  EvalContext ctx;
  ctx.lvs_client_timeouts = {0, 2, 1};
  CHECK(evaluate_completion(d, ctx).success);
  ctx.lvs_client_timeouts = {0, 3, 1};
  CHECK(!evaluate_completion(d, ctx).success);
}

TEST_CASE("fault-free determinism: identical seeds yield identical traces") {
  sim::RunOptions opts;
  faults::FaultSpec none;
  none.fault_class = faults::FaultClass::kNone;
  opts.fault_override = none;
  auto a = sim::run_once(config::preset_3appvm(), 11, opts);
  auto b = sim::run_once(config::preset_3appvm(), 11, opts);
  CHECK(a.trace_digest == b.trace_digest);
  CHECK(a.ended_ms == b.ended_ms);
  REQUIRE(a.verdicts.size() == b.verdicts.size());
  for (std::size_t i = 0; i < a.verdicts.size(); ++i)
    CHECK(a.verdicts[i].success == b.verdicts[i].success);
}

TEST_CASE("FV profile issues no page-table pin hypercalls") {
  auto pv = sim::boot_world(config::preset_3appvm(), 5);
  auto fv_cfg = config::preset_3appvm();
  fv_cfg.topology.fv_appvms = true;
  auto fv = sim::boot_world(fv_cfg, 5);
  auto count_pins = [](const World& w) {
    int pins = 0;
    for (const auto& d : w.domains)
      for (const auto& s : d.workload.script)
        if (s.kind == guests::WorkloadStep::kHypercall &&
            (s.hc_op == HcOp::kPageTablePin || s.hc_op == HcOp::kPageTableUnpin))
          pins++;
    return pins;
  };
  CHECK(count_pins(*pv) > 0);
  CHECK(count_pins(*fv) == 0);
}
