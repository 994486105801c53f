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

#include "visorsim/vmm.hpp"

#include <algorithm>

namespace visorsim::vmm {

using guests::DomainState;
using guests::HcOp;
using machine::MachineState;

namespace {

DomainState* find_domain(std::vector<DomainState>& doms, DomainId id) {
  for (auto& d : doms)
    if (d.domain_id == id) return &d;
  return nullptr;
}

}  // namespace

// ---- Heap ----------------------------------------------------------------

HeapId xmalloc(VmmState& v, MachineState& m, ObjKind kind,
               std::vector<std::int64_t> payload) {
  if (v.heap.free_pages.empty()) return kNullHandle;
  PageNum page = *v.heap.free_pages.begin();
  v.heap.free_pages.erase(v.heap.free_pages.begin());
  v.heap.unscrubbed_free.erase(page);
  m.page(page).owner = PageOwner::vmm();
  HeapObject obj;
  obj.id = v.heap.next_id++;
  obj.kind = kind;
  obj.page = page;
  obj.payload = std::move(payload);
  v.heap.objects.emplace(obj.id, obj);
  return obj.id;
}

void xfree(VmmState& v, MachineState& m, HeapId id) {
  auto it = v.heap.objects.find(id);
  if (it == v.heap.objects.end()) return;
  PageNum page = it->second.page;
  v.heap.objects.erase(it);
  if (page >= 0) {
    m.page(page).owner = PageOwner::free();
    m.page_content[static_cast<std::size_t>(page)] = 0;  // scrub on free
    v.heap.free_pages.insert(page);
  }
}

HeapObject* resolve(VmmState& v, HeapId id) {
  auto it = v.heap.objects.find(id);
  if (it == v.heap.objects.end()) return nullptr;
  return &it->second;
}

// ---- Locks -----------------------------------------------------------------

std::vector<LockId> alloc_domain_locks(VmmState& v, DomainId d, int count) {
  std::vector<LockId> ids;
  for (int i = 0; i < count; ++i) {
    Lock l;
    l.id = v.locks.next_id++;
    l.owner_domain = d;
    v.locks.dynamic_locks.emplace(l.id, l);
    ids.push_back(l.id);
  }
  return ids;
}

void free_domain_locks(VmmState& v, DomainId d) {
  std::erase_if(v.locks.dynamic_locks,
                [d](const auto& kv) { return kv.second.owner_domain == d; });
}

// ---- Scheduler --------------------------------------------------------------

void runqueue_insert(VmmState& v, std::vector<DomainState>& doms, DomainId d,
                     int vcpu) {
  DomainState* dom = find_domain(doms, d);
  VISORSIM_CHECK(dom != nullptr, "runqueue_insert: unknown domain");
  if (v.pause_count[d] > 0) return;  // paused domains are never runnable
  CpuId cpu = dom->vcpus[static_cast<std::size_t>(vcpu)].pinned_cpu;
  auto& q = v.run_queues[static_cast<std::size_t>(cpu)];
  RunQueueEntry e{d, vcpu};
  if (std::find(q.begin(), q.end(), e) != q.end()) return;
  q.push_back(e);
}

void runqueue_remove(VmmState& v, DomainId d) {
  for (auto& q : v.run_queues)
    std::erase_if(q, [d](const RunQueueEntry& e) { return e.domain == d; });
}

std::optional<RunQueueEntry> schedule(VmmState& v,
                                      std::vector<DomainState>& doms,
                                      CpuId cpu) {
  auto& q = v.run_queues[static_cast<std::size_t>(cpu)];
  if (q.empty()) return std::nullopt;
  RunQueueEntry e = q.front();
  q.pop_front();
  DomainState* dom = find_domain(doms, e.domain);
  VISORSIM_CHECK(dom != nullptr, "schedule: queue entry for unknown domain");
  VISORSIM_CHECK(v.pause_count[e.domain] == 0,
                 "schedule: paused domain on run queue");
  auto& vc = dom->vcpus[static_cast<std::size_t>(e.vcpu)];
  vc.running = true;
  vc.on_cpu = true;
  return e;
}

void deschedule(VmmState& v, std::vector<DomainState>& doms, DomainId d,
                int vcpu) {
  (void)v;
  DomainState* dom = find_domain(doms, d);
  if (!dom) return;
  auto& vc = dom->vcpus[static_cast<std::size_t>(vcpu)];
  vc.running = false;
  vc.on_cpu = false;
}

// ---- Timers ------------------------------------------------------------------

TimerId set_timer(VmmState& v, MachineState& m, DomainId domain,
                  SimTime deadline_ms) {
  TimerId id = v.next_timer_id++;
  TimerEvent ev;
  ev.deadline_ms = deadline_ms;
  ev.id = id;
  ev.domain = domain;
  ev.object = xmalloc(v, m, ObjKind::kTimerEvent, {deadline_ms, domain});
  v.timer_events.emplace(id, ev);
  v.timer_heap.insert({deadline_ms, id, domain});
  return id;
}

std::vector<FiredTimer> fire_due_timers(VmmState& v, MachineState& m,
                                        SimTime now) {
  std::vector<FiredTimer> fired;
  while (!v.timer_heap.empty()) {
    auto [deadline, id, domain] = *v.timer_heap.begin();
    if (deadline > now) break;
    v.timer_heap.erase(v.timer_heap.begin());
    auto it = v.timer_events.find(id);
    if (it != v.timer_events.end()) {
      xfree(v, m, it->second.object);
      v.timer_events.erase(it);
    }
    fired.push_back({domain, id});
  }
  return fired;
}

void advance_time(VmmState& v, SimTime now) {
  if (now > v.statics.time_vars.system_time_ms) {
    v.statics.time_vars.tsc += static_cast<std::uint64_t>(
        (now - v.statics.time_vars.system_time_ms) * 1000);
    v.statics.time_vars.system_time_ms = now;
  }
}

SimTime time_now(const VmmState& v) { return v.statics.time_vars.system_time_ms; }

// ---- Virtual interrupts --------------------------------------------------------

void deliver_virq(VmmState& v, std::vector<DomainState>& doms, DomainId domain,
                  int virq) {
  DomainState* dom = find_domain(doms, domain);
  if (!dom || !dom->is_live()) return;
  // The queue lives in a heap object; a corrupted object drops traffic.
  HeapObject* obj = resolve(v, dom->virq_queue_obj);
  if (obj == nullptr || obj->corrupted) return;
  if (dom->drop_virqs > 0) {
    dom->drop_virqs--;
    return;
  }
  dom->virq_queue.push_back(virq);
}

// ---- Grants ----------------------------------------------------------------------

bool grant_create(VmmState& v, std::vector<DomainState>& doms, DomainId owner,
                  PageNum page, DomainId grantee) {
  auto& entries = v.grants[owner];
  for (auto& e : entries) {
    if (e.page != page) continue;
    if (e.mapped) {
      // Stale mapped entry left behind by a failed unmap retry: re-sharing
      // trips the hypervisor's sanity check and panics the owner.
      DomainState* dom = find_domain(doms, owner);
      if (dom) {
        dom->guest_panicked = true;
        dom->panic_reason = "re-shared page with stale mapped grant entry";
        dom->status = guests::DomainStatus::kCrashed;
      }
      return false;
    }
    e.grantee = grantee;
    return true;
  }
  entries.push_back({page, grantee, false});
  return true;
}

// ---- Hypercalls --------------------------------------------------------------------

int hc_step_count(HcOp op) {
  switch (op) {
    case HcOp::kPageTablePin:
      return 10;
    case HcOp::kPageTableUnpin:
      return 8;
    case HcOp::kGrantMap:
      return 4;
    case HcOp::kGrantUnmap:
      return 4;
    case HcOp::kVmPause:
      return 5;
    case HcOp::kVmUnpause:
      return 3;
    case HcOp::kSetTimer:
      return 3;
  }
  return 1;
}

bool hc_is_continuation(HcOp op) { return op == HcOp::kVmPause; }

namespace {

struct HcContext {
  MachineState& m;
  VmmState& v;
  std::vector<DomainState>& doms;
  DomainState& caller;
  guests::VcpuState& vcpu;
  std::array<std::int64_t, 3> args;
};

void enter_hypercall(HcContext& c, HcOp op) {
  if (!guests::pc_in_hypercall_page(c.caller, c.vcpu.regs.pc))
    c.vcpu.regs.pc =
        c.caller.hypercall_page_base + static_cast<std::uint64_t>(op) * 8;
}

void leave_hypercall(HcContext& c) {
  c.vcpu.regs.pc = c.caller.hypercall_page_base + guests::kHypercallPageSize +
                   0x100;  // back in guest text
  c.vcpu.pending_hypercall.reset();
}

void record_crash_point(HcContext& c, HcOp op, int step) {
  guests::PendingHypercall ph;
  ph.op = op;
  ph.args = c.args;
  ph.resume_step = hc_is_continuation(op) ? step : 0;
  c.vcpu.pending_hypercall = ph;
}

HcResult ok() { return {HcResult::kOk, ""}; }
HcResult err(std::string what) { return {HcResult::kError, std::move(what)}; }
HcResult spin(std::string what) { return {HcResult::kSpin, std::move(what)}; }

// Shared-page tracker bookkeeping (payload: page, mapper pairs).
void tracker_add(VmmState& v, PageNum page, DomainId mapper) {
  if (HeapObject* t = resolve(v, v.statics.shared_page_tracker)) {
    t->payload.push_back(page);
    t->payload.push_back(mapper);
  }
}

void tracker_remove(VmmState& v, PageNum page, DomainId mapper) {
  HeapObject* t = resolve(v, v.statics.shared_page_tracker);
  if (!t) return;
  for (std::size_t i = 0; i + 1 < t->payload.size(); i += 2) {
    if (t->payload[i] == page && t->payload[i + 1] == mapper) {
      t->payload.erase(t->payload.begin() + static_cast<std::ptrdiff_t>(i),
                       t->payload.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      return;
    }
  }
}

GrantEntry* find_grant_for_grantee(VmmState& v, DomainId grantee,
                                   PageNum page) {
  for (auto& [owner, entries] : v.grants)
    for (auto& e : entries)
      if (e.page == page && e.grantee == grantee) return &e;
  return nullptr;
}

// Each hypercall body is a flat list of numbered steps so that fault
// timing is expressible as "crash before step k". `step` iterates from
// start_step; returning early models errors and spins.
HcResult run_pin(HcContext& c, int start, int crash_before) {
  const PageNum page = static_cast<PageNum>(c.args[0]);
  auto& pi = c.m.page(page);
  auto& wal = c.v.statics.wal_log;
  for (int step = start; step < hc_step_count(HcOp::kPageTablePin); ++step) {
    if (step == crash_before) {
      record_crash_point(c, HcOp::kPageTablePin, step);
      return {HcResult::kCrashed, "pin crashed before step " + std::to_string(step)};
    }
    switch (step) {
      case 0:  // ownership check
        if (!pi.owner.is_domain() || pi.owner.value != c.caller.domain_id ||
            !c.caller.pages.count(page)) {
          leave_hypercall(c);
          return err("pin: page not owned by caller");
        }
        break;
      case 1:  // validation-in-progress guard
        if (pi.type_use_count > 0 && !pi.validity_bit)
          return spin("pin retry spinning: use count set, validity unset");
        break;
      case 2:  // take the page lock
        if (pi.lock_bit)
          return spin("pin spinning on held page lock bit");
        pi.lock_bit = true;
        break;
      case 3:  // write-ahead log (optional)
        if (c.v.wal_enabled)
          wal.push_back({page, pi.type_use_count, pi.validity_bit});
        break;
      case 4:  // phase A: bump the type use counter
        pi.type_use_count++;
        break;
      case 5:  // validity computation (takes time; no state change)
        break;
      case 6:  // phase B: mark validated
        pi.validity_bit = true;
        break;
      case 7:  // release the page lock
        pi.lock_bit = false;
        break;
      case 8:  // commit: retire the WAL record
        if (c.v.wal_enabled)
          std::erase_if(wal, [page](const WalRecord& r) { return r.page == page; });
        break;
      case 9:  // return to guest
        leave_hypercall(c);
        return ok();
    }
  }
  leave_hypercall(c);
  return ok();
}

HcResult run_unpin(HcContext& c, int start, int crash_before) {
  const PageNum page = static_cast<PageNum>(c.args[0]);
  auto& pi = c.m.page(page);
  auto& wal = c.v.statics.wal_log;
  for (int step = start; step < hc_step_count(HcOp::kPageTableUnpin); ++step) {
    if (step == crash_before) {
      record_crash_point(c, HcOp::kPageTableUnpin, step);
      return {HcResult::kCrashed, "unpin crashed before step " + std::to_string(step)};
    }
    switch (step) {
      case 0:
        if (!pi.owner.is_domain() || pi.owner.value != c.caller.domain_id ||
            pi.type_use_count == 0) {
          leave_hypercall(c);
          return err("unpin: page not pinned by caller");
        }
        break;
      case 1:
        if (pi.lock_bit) return spin("unpin spinning on held page lock bit");
        pi.lock_bit = true;
        break;
      case 2:
        if (c.v.wal_enabled)
          wal.push_back({page, pi.type_use_count, pi.validity_bit});
        break;
      case 3:
        pi.type_use_count--;
        break;
      case 4:
        if (pi.type_use_count == 0) pi.validity_bit = false;
        break;
      case 5:
        pi.lock_bit = false;
        break;
      case 6:
        if (c.v.wal_enabled)
          std::erase_if(wal, [page](const WalRecord& r) { return r.page == page; });
        break;
      case 7:
        leave_hypercall(c);
        return ok();
    }
  }
  leave_hypercall(c);
  return ok();
}

HcResult run_grant_map(HcContext& c, int start, int crash_before) {
  const PageNum page = static_cast<PageNum>(c.args[0]);
  for (int step = start; step < hc_step_count(HcOp::kGrantMap); ++step) {
    if (step == crash_before) {
      record_crash_point(c, HcOp::kGrantMap, step);
      return {HcResult::kCrashed, "grant_map crashed before step " + std::to_string(step)};
    }
    switch (step) {
      case 0: {
        GrantEntry* e = find_grant_for_grantee(c.v, c.caller.domain_id, page);
        if (e == nullptr || e->mapped) {
          leave_hypercall(c);
          return err("grant_map: no grant or already mapped");
        }
        break;
      }
      case 1:
        tracker_add(c.v, page, c.caller.domain_id);
        break;
      case 2:
        find_grant_for_grantee(c.v, c.caller.domain_id, page)->mapped = true;
        break;
      case 3:
        leave_hypercall(c);
        return ok();
    }
  }
  leave_hypercall(c);
  return ok();
}

HcResult run_grant_unmap(HcContext& c, int start, int crash_before) {
  const PageNum page = static_cast<PageNum>(c.args[0]);
  for (int step = start; step < hc_step_count(HcOp::kGrantUnmap); ++step) {
    if (step == crash_before) {
      record_crash_point(c, HcOp::kGrantUnmap, step);
      return {HcResult::kCrashed, "grant_unmap crashed before step " + std::to_string(step)};
    }
    switch (step) {
      case 0: {
        // The check is on the actual mapping, not the grant-table bit; a
        // replay after the mapping was torn down fails here and leaves
        // the grant table stale.
        HeapObject* t = resolve(c.v, c.v.statics.shared_page_tracker);
        bool mapped = false;
        if (t) {
          for (std::size_t i = 0; i + 1 < t->payload.size(); i += 2)
            if (t->payload[i] == page &&
                t->payload[i + 1] == c.caller.domain_id)
              mapped = true;
        }
        if (!mapped) {
          leave_hypercall(c);
          return err("grant_unmap: page not mapped by caller");
        }
        break;
      }
      case 1:  // tear down the caller's mapping
        tracker_remove(c.v, page, c.caller.domain_id);
        break;
      case 2: {  // grant-table bookkeeping
        GrantEntry* e = find_grant_for_grantee(c.v, c.caller.domain_id, page);
        if (e) e->mapped = false;
        break;
      }
      case 3:
        leave_hypercall(c);
        return ok();
    }
  }
  leave_hypercall(c);
  return ok();
}

HcResult run_vm_pause(HcContext& c, int start, int crash_before) {
  const DomainId target_id = static_cast<DomainId>(c.args[0]);
  DomainState* target = find_domain(c.doms, target_id);
  for (int step = start; step < hc_step_count(HcOp::kVmPause); ++step) {
    if (step == crash_before) {
      record_crash_point(c, HcOp::kVmPause, step);
      return {HcResult::kCrashed, "vm_pause crashed before step " + std::to_string(step)};
    }
    switch (step) {
      case 0:
        if (c.caller.role != guests::DomainRole::kPrivVm) {
          leave_hypercall(c);
          return err("vm_pause: caller is not the PrivVM");
        }
        if (target == nullptr || !target->is_live()) {
          leave_hypercall(c);
          return err("vm_pause: no such domain");
        }
        break;
      case 1:
        c.v.pause_count[target_id]++;
        runqueue_remove(c.v, target_id);
        break;
      case 2:
        // Stop IPIs: only a VCPU actually executing gets descheduled. A
        // stale running flag with nothing on the CPU stays stale, which
        // is exactly the mid-pause inconsistency.
        for (auto& vc : target->vcpus)
          if (vc.on_cpu) deschedule(c.v, c.doms, target_id, vc.vcpu_id);
        break;
      case 3:  // wait until every running flag is clear
        for (auto& vc : target->vcpus)
          if (vc.running)
            return spin("vm_pause waiting forever on running flag");
        break;
      case 4:
        if (target->status == guests::DomainStatus::kRunning)
          target->status = guests::DomainStatus::kPaused;
        leave_hypercall(c);
        return ok();
    }
  }
  leave_hypercall(c);
  return ok();
}

HcResult run_vm_unpause(HcContext& c, int start, int crash_before) {
  const DomainId target_id = static_cast<DomainId>(c.args[0]);
  DomainState* target = find_domain(c.doms, target_id);
  for (int step = start; step < hc_step_count(HcOp::kVmUnpause); ++step) {
    if (step == crash_before) {
      record_crash_point(c, HcOp::kVmUnpause, step);
      return {HcResult::kCrashed, "vm_unpause crashed before step " + std::to_string(step)};
    }
    switch (step) {
      case 0:
        if (c.caller.role != guests::DomainRole::kPrivVm ||
            target == nullptr) {
          leave_hypercall(c);
          return err("vm_unpause: bad caller or target");
        }
        break;
      case 1: {
        auto& pc = c.v.pause_count[target_id];
        if (pc > 0) pc--;
        if (pc == 0 && target->status == guests::DomainStatus::kPaused) {
          target->status = guests::DomainStatus::kRunning;
          for (auto& vc : target->vcpus)
            runqueue_insert(c.v, c.doms, target_id, vc.vcpu_id);
        }
        break;
      }
      case 2:
        leave_hypercall(c);
        return ok();
    }
  }
  leave_hypercall(c);
  return ok();
}

HcResult run_set_timer(HcContext& c, int start, int crash_before) {
  for (int step = start; step < hc_step_count(HcOp::kSetTimer); ++step) {
    if (step == crash_before) {
      record_crash_point(c, HcOp::kSetTimer, step);
      return {HcResult::kCrashed, "set_timer crashed before step " + std::to_string(step)};
    }
    switch (step) {
      case 0:
        if (c.args[0] < time_now(c.v)) {
          leave_hypercall(c);
          return err("set_timer: deadline in the past");
        }
        break;
      case 1:
        set_timer(c.v, c.m, c.caller.domain_id, c.args[0]);
        break;
      case 2:
        leave_hypercall(c);
        return ok();
    }
  }
  leave_hypercall(c);
  return ok();
}

}  // namespace

HcResult exec_hypercall(MachineState& m, VmmState& v,
                        std::vector<DomainState>& doms, DomainId caller,
                        int vcpu, HcOp op, std::array<std::int64_t, 3> args,
                        int start_step, int crash_before_step) {
  DomainState* dom = find_domain(doms, caller);
  VISORSIM_CHECK(dom != nullptr, "exec_hypercall: unknown caller domain");
  HcContext c{m, v, doms, *dom,
              dom->vcpus[static_cast<std::size_t>(vcpu)], args};
  enter_hypercall(c, op);
  switch (op) {
    case HcOp::kPageTablePin:
      return run_pin(c, start_step, crash_before_step);
    case HcOp::kPageTableUnpin:
      return run_unpin(c, start_step, crash_before_step);
    case HcOp::kGrantMap:
      return run_grant_map(c, start_step, crash_before_step);
    case HcOp::kGrantUnmap:
      return run_grant_unmap(c, start_step, crash_before_step);
    case HcOp::kVmPause:
      return run_vm_pause(c, start_step, crash_before_step);
    case HcOp::kVmUnpause:
      return run_vm_unpause(c, start_step, crash_before_step);
    case HcOp::kSetTimer:
      return run_set_timer(c, start_step, crash_before_step);
  }
  return {HcResult::kError, "unknown hypercall"};
}

HcResult retry_hypercall(MachineState& m, VmmState& v,
                         std::vector<DomainState>& doms, DomainId domain,
                         int vcpu) {
  DomainState* dom = find_domain(doms, domain);
  VISORSIM_CHECK(dom != nullptr, "retry_hypercall: unknown domain");
  auto& vc = dom->vcpus[static_cast<std::size_t>(vcpu)];
  VISORSIM_CHECK(vc.pending_hypercall.has_value(),
                 "retry_hypercall: nothing pending");
  guests::PendingHypercall ph = *vc.pending_hypercall;
  return exec_hypercall(m, v, doms, domain, vcpu, ph.op, ph.args,
                        ph.resume_step, -1);
}

}  // namespace visorsim::vmm
