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

#include "visorsim/guests.hpp"

#include <algorithm>

namespace visorsim::guests {

WorkloadAction step_workload(DomainState& d, SimTime now) {
  Workload& w = d.workload;
  WorkloadAction a;
  if (d.status != DomainStatus::kRunning || d.guest_panicked) return a;
  if (!w.started) {
    w.started = true;
    w.started_at = now;
  }
  if (w.cursor >= w.script.size()) {
    if (!w.completed) {
      w.completed = true;
      w.completed_at = now;
    }
    a.kind = WorkloadAction::kDone;
    return a;
  }
  const WorkloadStep& s = w.script[w.cursor++];
  switch (s.kind) {
    case WorkloadStep::kCompute:
      a.kind = WorkloadAction::kCompute;
      break;
    case WorkloadStep::kIo:
      a.kind = WorkloadAction::kIo;
      break;
    case WorkloadStep::kHypercall:
      a.kind = WorkloadAction::kHypercall;
      break;
    case WorkloadStep::kTimerWait:
      a.kind = WorkloadAction::kTimerWait;
      break;
  }
  a.step = s;
  return a;
}

std::vector<ResendAction> driver_timeout_scan(const DomainState& d,
                                              const std::vector<Ring>& rings,
                                              SimTime now, SimTime timeout_ms,
                                              int retry_budget) {
  std::vector<ResendAction> out;
  for (int rid : d.frontends) {
    const Ring& r = rings[static_cast<std::size_t>(rid)];
    for (const auto& [id, req] : r.in_flight) {
      if (now - req.issued_ms < timeout_ms) continue;
      ResendAction ra;
      ra.ring_id = rid;
      ra.req_id = id;
      ra.budget_exhausted = req.resends >= retry_budget;
      out.push_back(ra);
    }
  }
  return out;
}

namespace {

Verdict fail(std::string reason) { return {false, std::move(reason)}; }

Verdict evaluate_blk(const DomainState& d) {
  const Workload& w = d.workload;
  if (d.guest_panicked) return fail("guest panicked: " + d.panic_reason);
  if (!w.completed) return fail("benchmark did not complete");
  if (w.io_errors > 0) return fail("I/O operations reported errors");
  if (w.writes_acked != w.writes_issued)
    return fail("unacknowledged writes remain");
  if (w.objects != w.reference_objects)
    return fail("files/directories differ from reference image");
  return {true, ""};
}

Verdict evaluate_net(const DomainState& d, const EvalContext& ctx) {
  if (d.guest_panicked) return fail("guest panicked: " + d.panic_reason);
  const auto& rx = ctx.net_rx_times;
  // Rule 1: no interruption longer than the limit at any time.
  SimTime prev = ctx.net_started_ms;
  for (SimTime t : rx) {
    if (t - prev > ctx.net_max_gap_ms)
      return fail("reception interrupted for more than " +
                  std::to_string(ctx.net_max_gap_ms) + "ms");
    prev = t;
  }
  if (ctx.net_deadline_ms - prev > ctx.net_max_gap_ms)
    return fail("reception interrupted through end of run");
  // Rule 2: 1s reception-rate windows. After a detected failure the rule
  // applies only once recovery has completed; without detection it
  // applies to the whole run.
  const SimTime scan_from =
      ctx.failure_detected ? ctx.recovery_end_ms : ctx.net_started_ms;
  const double need = ctx.net_nominal_per_sec * (1.0 - ctx.net_drop_fraction);
  for (SimTime t0 = scan_from; t0 + 1000 <= ctx.net_deadline_ms; t0 += 100) {
    auto lo = std::lower_bound(rx.begin(), rx.end(), t0);
    auto hi = std::lower_bound(rx.begin(), rx.end(), t0 + 1000);
    if (static_cast<double>(hi - lo) < need)
      return fail("reception rate dropped >10% in a 1s window");
  }
  return {true, ""};
}

Verdict evaluate_unix(const DomainState& d) {
  const Workload& w = d.workload;
  if (d.guest_panicked) return fail("guest panicked: " + d.panic_reason);
  if (w.hypercall_failures > 0)
    return fail("programs terminated prematurely (failed system calls)");
  if (!w.completed) return fail("benchmark did not complete");
  if (w.io_errors > 0) return fail("output differs from reference");
  return {true, ""};
}

// The cluster-level rule: clients tolerate at most `lvs_max_timeouts`
// connection timeouts each.
Verdict evaluate_lvs(const DomainState& d, const EvalContext& ctx) {
  if (d.guest_panicked) return fail("guest panicked: " + d.panic_reason);
  for (std::size_t c = 0; c < ctx.lvs_client_timeouts.size(); ++c) {
    if (ctx.lvs_client_timeouts[c] > ctx.lvs_max_timeouts)
      return fail("client " + std::to_string(c) + " saw more than " +
                  std::to_string(ctx.lvs_max_timeouts) + " connection timeouts");
  }
  return {true, ""};
}

}  // namespace

Verdict evaluate_completion(const DomainState& d, const EvalContext& ctx) {
  switch (d.workload.kind) {
    case WorkloadKind::kBlk:
      return evaluate_blk(d);
    case WorkloadKind::kNet:
      return evaluate_net(d, ctx);
    case WorkloadKind::kUnix:
      return evaluate_unix(d);
    case WorkloadKind::kLvsDirector:
    case WorkloadKind::kLvsServer:
      return evaluate_lvs(d, ctx);
    case WorkloadKind::kIdle:
      return d.guest_panicked ? fail("guest panicked: " + d.panic_reason)
                              : Verdict{true, ""};
  }
  return fail("unknown workload");
}

}  // namespace visorsim::guests
