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

#ifndef VISORSIM_GUESTS_HPP
#define VISORSIM_GUESTS_HPP

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "visorsim/machine.hpp"
#include "visorsim/types.hpp"

namespace visorsim::guests {

enum class DomainRole { kPrivVm, kDvm, kAppVm };
enum class VmProfile { kPv, kFv };
enum class DomainStatus { kRunning, kPaused, kCrashed, kDestroyed };

enum class HcOp {
  kPageTablePin,
  kPageTableUnpin,
  kGrantMap,
  kGrantUnmap,
  kVmPause,
  kVmUnpause,
  kSetTimer,
};

struct PendingHypercall {
  HcOp op = HcOp::kPageTablePin;
  std::array<std::int64_t, 3> args{};
  // Step to resume from on retry. Continuation-style hypercalls (vm_pause)
  // record their progress in the preserved argument registers; the rest
  // restart from step 0 and re-run against whatever state was left behind.
  int resume_step = 0;
};

struct VcpuState {
  int vcpu_id = 0;
  machine::RegisterFile regs;
  // VMM bookkeeping: set on dispatch, cleared on deschedule. Can go stale
  // across a microreboot (the clear-running-flag repair exists for this).
  bool running = false;
  // Hardware truth: the VCPU is executing on its CPU right now.
  bool on_cpu = false;
  CpuId pinned_cpu = 0;
  std::optional<PendingHypercall> pending_hypercall;
  bool regs_corrupted = false;  // saved register block is garbage
};

// One frontend/backend ring connection (split driver model).
struct IoRequest {
  std::int64_t req_id = 0;
  int op = 0;  // blk: 0 create / 1 write / 2 copy / 3 remove; net unused
  std::int64_t object = 0;
  std::uint64_t checksum = 0;
  SimTime issued_ms = 0;
  int resends = 0;
};

struct Ring {
  int ring_id = 0;
  enum Kind { kBlk, kNet } kind = kBlk;
  DomainId frontend = kNoDomain;
  DomainId backend = kNoDomain;
  int device_source = -1;  // machine interrupt source for the device
  std::map<std::int64_t, IoRequest> in_flight;
  std::int64_t next_req_id = 1;
  // Granted buffer pages cycled through a map/unmap churn per request.
  std::vector<PageNum> buffers;
  std::size_t churn_idx = 0;
  // Request ids in motion between the ring's parties.
  std::deque<std::int64_t> pending_backend;  // posted, backend not notified
  std::deque<std::int64_t> completed_reqs;   // device done, backend not told
  std::deque<std::int64_t> responses;        // backend replied, frontend not told
};

// Scripted benchmark. Scripts are expanded from the scenario config at
// boot; the evaluator is a pure function of the run's observables.
struct WorkloadStep {
  enum Kind { kCompute, kIo, kHypercall, kTimerWait } kind = kCompute;
  SimTime duration_ms = 0;     // compute / timer wait
  int io_op = 0;               // kIo
  std::int64_t object = 0;     // kIo object id
  std::uint64_t checksum = 0;  // kIo payload
  HcOp hc_op = HcOp::kPageTablePin;
  std::array<std::int64_t, 3> hc_args{};
};

enum class WorkloadKind { kBlk, kNet, kUnix, kLvsDirector, kLvsServer, kIdle };

struct Workload {
  WorkloadKind kind = WorkloadKind::kIdle;
  std::vector<WorkloadStep> script;
  std::size_t cursor = 0;
  bool started = false;
  bool completed = false;
  SimTime completed_at = 0;
  SimTime started_at = 0;

  // Observables accumulated while the run executes.
  std::map<std::int64_t, std::uint64_t> objects;  // blk: name -> checksum
  std::map<std::int64_t, std::uint64_t> reference_objects;
  std::int64_t writes_issued = 0;
  std::int64_t writes_acked = 0;
  std::int64_t io_errors = 0;
  std::int64_t hypercall_failures = 0;
  std::int64_t timeout_resends = 0;
};

struct DomainState {
  DomainId domain_id = kNoDomain;
  std::string name;
  DomainRole role = DomainRole::kAppVm;
  VmProfile profile = VmProfile::kPv;
  std::vector<VcpuState> vcpus;
  std::set<PageNum> pages;
  std::uint64_t hypercall_page_base = 0;  // one-page range inside `pages`
  std::deque<int> virq_queue;
  std::vector<int> frontends;  // ring ids
  DomainStatus status = DomainStatus::kRunning;
  Workload workload;

  // Hypervisor-side objects backing this domain (heap ids).
  HeapId domain_obj = kNullHandle;
  HeapId virq_queue_obj = kNullHandle;
  HeapId grant_table_obj = kNullHandle;
  HeapId vcpu_save_obj = kNullHandle;

  bool guest_panicked = false;
  std::string panic_reason;
  // Fault effect: this many upcoming virtual interrupts are lost.
  int drop_virqs = 0;
  // Guest-kernel hang (component fault): alive but makes no progress.
  bool guest_hung = false;
  // Blocked on a timer virq.
  bool waiting_timer = false;
  SimTime timer_deadline = 0;
  // PrivVM only: the XenStored process vanished (hostmon's detection
  // target).
  bool xenstored_gone = false;

  bool is_live() const {
    return status == DomainStatus::kRunning || status == DomainStatus::kPaused;
  }
};

constexpr std::uint64_t kHypercallPageSize = 0x1000;

inline bool pc_in_hypercall_page(const DomainState& d, std::uint64_t pc) {
  return pc >= d.hypercall_page_base &&
         pc < d.hypercall_page_base + kHypercallPageSize;
}

// What the guest wants to do next; the simulation loop carries it out.
struct WorkloadAction {
  enum Kind { kNone, kIo, kHypercall, kCompute, kTimerWait, kDone } kind = kNone;
  WorkloadStep step;
};

WorkloadAction step_workload(DomainState& d, SimTime now);

// Frontend driver timeout scan: any in-flight request older than
// `timeout_ms` is reissued, the way kernel block/net drivers resend
// commands when an expected completion interrupt never arrives.
struct ResendAction {
  int ring_id = 0;
  std::int64_t req_id = 0;
  bool budget_exhausted = false;
};
std::vector<ResendAction> driver_timeout_scan(const DomainState& d,
                                              const std::vector<Ring>& rings,
                                              SimTime now, SimTime timeout_ms,
                                              int retry_budget);

struct Verdict {
  bool success = false;
  std::string reason;
};

// Inputs the evaluators need beyond the domain itself.
struct EvalContext {
  // Net: reception timestamps recorded at the remote host model.
  std::vector<SimTime> net_rx_times;
  SimTime net_started_ms = 0;
  SimTime net_deadline_ms = 0;
  double net_nominal_per_sec = 1000.0;
  double net_drop_fraction = 0.10;
  SimTime net_max_gap_ms = 10000;
  // Window scan excludes the recovery pause (the gap rule covers it).
  bool failure_detected = false;
  SimTime recovery_end_ms = 0;
  // LVS: connection timeouts per remote client.
  std::vector<int> lvs_client_timeouts;
  int lvs_max_timeouts = 2;
};

Verdict evaluate_completion(const DomainState& d, const EvalContext& ctx);

}  // namespace visorsim::guests

#endif  // VISORSIM_GUESTS_HPP
