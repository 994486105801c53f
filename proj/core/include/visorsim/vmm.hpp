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

#ifndef VISORSIM_VMM_HPP
#define VISORSIM_VMM_HPP

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "visorsim/guests.hpp"
#include "visorsim/machine.hpp"
#include "visorsim/types.hpp"

namespace visorsim::vmm {

enum class ObjKind {
  kDomainList,
  kDomainHash,
  kDomainStruct,
  kVcpuSaveArea,
  kVirqQueue,
  kGrantTable,
  kTimerHeapRoot,
  kTimerEvent,
  kM2pTable,
  kFreeListHead,
  kSharedPageTracker,
  kIdleDomain,
  kHardwareInfo,
  kXenstoreRing,
  kScratch,
};

struct HeapObject {
  HeapId id = kNullHandle;
  ObjKind kind = ObjKind::kScratch;
  PageNum page = -1;
  std::vector<std::int64_t> payload;
  std::vector<LockId> dynamic_locks;
  bool corrupted = false;
};

struct Heap {
  std::map<HeapId, HeapObject> objects;
  std::set<PageNum> free_pages;
  std::set<PageNum> reserved_init_pages;
  // Pages whose content was not scrubbed on free (diagnostics only; the
  // healthy path scrubs at free time).
  std::set<PageNum> unscrubbed_free;
  HeapId next_id = 1;
};

struct Lock {
  LockId id = 0;
  std::optional<CpuId> held_by;
  DomainId owner_domain = kNoDomain;
  HeapId owner_object = kNullHandle;
};

struct LockRegistry {
  std::map<LockId, Lock> dynamic_locks;
  LockId next_id = 1;
  // The spin lock protecting IPI function-call setup; the failure handler
  // busts it when using NMI IPIs.
  bool ipi_call_lock_held = false;
};

struct GrantEntry {
  PageNum page = -1;
  DomainId grantee = kNoDomain;
  bool mapped = false;
};

struct TimerEvent {
  SimTime deadline_ms = 0;
  TimerId id = 0;
  DomainId domain = kNoDomain;
  HeapId object = kNullHandle;
};

struct TimeVars {
  SimTime system_time_ms = 0;
  std::uint64_t tsc = 0;
};

struct IrqDescriptor {
  int source_id = -1;
  CpuId affinity = 0;
  bool masked = false;
};

// Write-ahead log record for the page-count/page-table pairing; the
// optional alternative to the reset-page-counter repair.
struct WalRecord {
  PageNum page = -1;
  int prior_count = 0;
  bool prior_valid = false;
};

// Static data segment: the named handles restored across a microreboot.
struct StaticSegment {
  HeapId domain_list = kNullHandle;
  HeapId domain_hash = kNullHandle;
  HeapId domain0 = kNullHandle;
  HeapId xmalloc_free_list = kNullHandle;
  HeapId timer_heap_root = kNullHandle;
  HeapId m2p_table = kNullHandle;
  HeapId shared_page_tracker = kNullHandle;
  TimeVars time_vars;
  std::vector<IrqDescriptor> irq_descriptors;
  std::map<ApicId, CpuId> apic_to_cpu;
  std::vector<std::uint64_t> stack_bottom;  // per CPU
  bool microreboot_flag = false;
  std::vector<WalRecord> wal_log;
};

struct RunQueueEntry {
  DomainId domain = kNoDomain;
  int vcpu = 0;
  bool operator==(const RunQueueEntry&) const = default;
};

struct VmmState {
  StaticSegment statics;
  Heap heap;
  LockRegistry locks;
  std::vector<std::deque<RunQueueEntry>> run_queues;  // per CPU
  std::map<DomainId, std::vector<GrantEntry>> grants;
  std::set<std::tuple<SimTime, TimerId, DomainId>> timer_heap;
  std::map<TimerId, TimerEvent> timer_events;
  TimerId next_timer_id = 1;
  std::map<DomainId, int> pause_count;
  bool wal_enabled = false;
  // Fault effect: domain-builder state corrupted; VM creation fails.
  bool create_blocked = false;
  std::uint64_t generation = 0;  // bumped by each microreboot
};

// ---- Heap management -------------------------------------------------

// Allocates one page off the free list for a new object. Returns
// kNullHandle when the heap is exhausted (callers surface this as an
// allocation failure, e.g. VM creation failing).
HeapId xmalloc(VmmState& v, machine::MachineState& m, ObjKind kind,
               std::vector<std::int64_t> payload = {});
void xfree(VmmState& v, machine::MachineState& m, HeapId id);
HeapObject* resolve(VmmState& v, HeapId id);

// ---- Locks ------------------------------------------------------------

std::vector<LockId> alloc_domain_locks(VmmState& v, DomainId d, int count);
void free_domain_locks(VmmState& v, DomainId d);

// ---- Scheduler --------------------------------------------------------

void runqueue_insert(VmmState& v, std::vector<guests::DomainState>& doms,
                     DomainId d, int vcpu);
void runqueue_remove(VmmState& v, DomainId d);
// Dispatches the head of `cpu`'s run queue (sets the running flag).
std::optional<RunQueueEntry> schedule(VmmState& v,
                                      std::vector<guests::DomainState>& doms,
                                      CpuId cpu);
void deschedule(VmmState& v, std::vector<guests::DomainState>& doms,
                DomainId d, int vcpu);

// ---- Timers and time ---------------------------------------------------

TimerId set_timer(VmmState& v, machine::MachineState& m, DomainId domain,
                  SimTime deadline_ms);
// Fires all events with deadline <= now, in (deadline, id) order, and
// returns the virtual interrupts to deliver.
struct FiredTimer {
  DomainId domain;
  TimerId id;
};
std::vector<FiredTimer> fire_due_timers(VmmState& v, machine::MachineState& m,
                                        SimTime now);

void advance_time(VmmState& v, SimTime now);
SimTime time_now(const VmmState& v);

// ---- Virtual interrupts -------------------------------------------------

constexpr int kVirqTimer = 1;
inline int virq_ring_notify(int ring_id) { return 1000 + ring_id; }
inline int virq_ring_response(int ring_id) { return 2000 + ring_id; }
inline int virq_device(int ring_id) { return 3000 + ring_id; }

void deliver_virq(VmmState& v, std::vector<guests::DomainState>& doms,
                  DomainId domain, int virq);

// ---- Grants -------------------------------------------------------------

// The page owner shares `page` with `grantee`. Panics the owner (returns
// false) if a stale entry for the page is still marked mapped.
bool grant_create(VmmState& v, std::vector<guests::DomainState>& doms,
                  DomainId owner, PageNum page, DomainId grantee);

// ---- Hypercalls with numbered failure points ----------------------------

struct HcResult {
  enum Status {
    kOk,
    kError,   // guest-visible error code
    kSpin,    // executing CPU spins in the hypervisor (hang precursor)
    kCrashed  // stopped at the requested crash point
  } status = kOk;
  std::string detail;
};

// Number of internal steps of `op` (crash points are 0..steps inclusive?
// no: crash_before_step in [0, steps) stops before that step; the final
// step is always "return to guest").
int hc_step_count(guests::HcOp op);

// True if the op resumes from its recorded step on retry (hypercall
// continuations); false if a retry restarts from step 0.
bool hc_is_continuation(guests::HcOp op);

// Executes `op` for `caller`'s vcpu starting at `start_step`. If
// `crash_before_step` >= 0 execution stops there, the vcpu is left
// mid-hypercall (PC inside the hypercall page), and kCrashed is returned.
HcResult exec_hypercall(machine::MachineState& m, VmmState& v,
                        std::vector<guests::DomainState>& doms,
                        DomainId caller, int vcpu, guests::HcOp op,
                        std::array<std::int64_t, 3> args, int start_step = 0,
                        int crash_before_step = -1);

// Re-executes the pending hypercall of a vcpu (after PC rewind).
HcResult retry_hypercall(machine::MachineState& m, VmmState& v,
                         std::vector<guests::DomainState>& doms,
                         DomainId domain, int vcpu);

}  // namespace visorsim::vmm

#endif  // VISORSIM_VMM_HPP
