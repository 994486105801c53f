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

#include "visorsim/recover.hpp"

#include <algorithm>

namespace visorsim::recover {

using guests::DomainState;
using machine::MachineState;
using vmm::VmmState;

RecoveryConfig RecoveryConfig::stage(int n) {
  RecoveryConfig c;
  if (n >= 1) c.nmi_ipi = true;
  if (n >= 2) c.ack_interrupts = true;
  if (n >= 3) c.hypercall_retry = true;
  if (n >= 4) c.fix_sp = c.nmi_ack = true;
  if (n >= 5) c.reinit_locks = true;
  return c;
}

const char* RecoveryConfig::stage_name(int n) {
  switch (n) {
    case 0: return "basic";
    case 1: return "+nmi_ipi";
    case 2: return "+ack_interrupts";
    case 3: return "+hypercall_retry";
    case 4: return "+fix_sp+nmi_ack";
    case 5: return "+reinit_locks";
  }
  return "?";
}

namespace {

constexpr std::uint64_t kHandlerFrame = 0x200;

// CPUID obtained through the corrupted stack pointer; may or may not point
// back at the sender.
CpuId bogus_cpuid_from_sp(std::uint64_t sp, int ncpus) {
  return static_cast<CpuId>(mix64(sp) % static_cast<std::uint64_t>(ncpus));
}

}  // namespace

HandlerResult failure_handler(MachineState& m, VmmState& v,
                              std::vector<DomainState>& doms,
                              const RecoveryConfig& cfg,
                              const detect::DetectedFailure& failure,
                              const faults::CorruptionRecord* corruption) {
  HandlerResult r;
  const CpuId detector = failure.cpu;
  auto& dcpu = m.cpu(detector);
  bool garbage_saves = false;

  // (1) Stack pointer. The handler never returns, so it can be moved to a
  // safe location outright.
  if (cfg.fix_sp) {
    if (detector < static_cast<int>(v.statics.stack_bottom.size()))
      dcpu.regs.sp =
          v.statics.stack_bottom[static_cast<std::size_t>(detector)] -
          kHandlerFrame;
    dcpu.sp_corrupted = false;
  } else if (dcpu.sp_corrupted) {
    CpuId bogus = bogus_cpuid_from_sp(dcpu.regs.sp, static_cast<int>(m.cpus.size()));
    if (bogus == detector) {
      r.failure = "stop IPI self-targeted via corrupt stack pointer";
      return r;
    }
    // Wrong CPUID survived by luck; the register save below still reads a
    // random region through the bad stack pointer.
    garbage_saves = true;
  }

  // (2) Acknowledge the watchdog NMI so this CPU can take the stop IPI
  // from the boot processor.
  if (failure.kind == detect::FailureKind::kHang && cfg.nmi_ack)
    machine::iret_ack(m, detector);

  // (3) Stop every other CPU. The boot processor drives the microreboot.
  if (cfg.nmi_ipi) {
    v.locks.ipi_call_lock_held = false;  // busted
    for (auto& c : m.cpus) {
      // Destinations come from the APICID->CPUID table, never from
      // stack-derived state.
      CpuId target = machine::cpuid_from_apic(m, c.apic_id);
      if (target == 0) continue;
      if (machine::deliver_nmi(m, target) == machine::NmiOutcome::kBlocked) {
        r.failure = "NMI stop IPI blocked: cpu " + std::to_string(target) +
                    " never acknowledged a previous NMI";
        return r;
      }
      m.cpu(target).stuck_in_vmm = false;
      m.cpu(target).halted = true;
    }
  } else {
    if (v.locks.ipi_call_lock_held) {
      r.failure = "IPI call-setup lock held by failed instance";
      return r;
    }
    for (auto& c : m.cpus) {
      if (c.cpu_id == 0) continue;
      if (c.irqs_disabled || c.stuck_in_vmm) {
        r.failure = "maskable stop IPI not serviced by cpu " +
                    std::to_string(c.cpu_id);
        return r;
      }
      c.halted = true;
    }
  }

  // (4) Save VCPU register blocks from each CPU's stack area.
  for (auto& d : doms) {
    if (!d.is_live()) continue;
    for (auto& vc : d.vcpus) {
      PreservedState::SavedRegs s;
      s.domain = d.domain_id;
      s.vcpu = vc.vcpu_id;
      s.regs = vc.regs;
      s.garbage = vc.regs_corrupted ||
                  (garbage_saves && vc.pinned_cpu == detector);
      r.preserved.vcpu_regs.push_back(s);
    }
  }

  // (5) Interrupt acknowledgment.
  if (cfg.ack_interrupts) {
    for (auto& c : m.cpus) {
      auto in_service = c.in_service;
      for (Vector vec : in_service) machine::eoi(m, c.cpu_id, vec, failure.at_ms);
    }
  }
  if (cfg.ack_interrupts_enhanced) {
    // Mask everything, install dummy handlers, then flush pending
    // interrupts until the request view is empty.
    for (auto& s : m.ic.sources) s.masked = true;
    for (auto& c : m.cpus) {
      while (!c.pending.empty()) {
        auto v2 = machine::begin_service(m, c.cpu_id);
        if (!v2) {  // blocked by an in-service vector we did not ack
          for (Vector vec : c.pending) {
            for (auto& s : m.ic.sources)
              if (s.vector == vec) s.awaiting_ack = false;
          }
          c.pending.clear();
          break;
        }
        machine::eoi(m, c.cpu_id, *v2, failure.at_ms);
      }
    }
  }

  // (6) Snapshot the static segments into the reserved region.
  r.preserved.statics = v.statics;
  r.preserved.old_free_pages = v.heap.free_pages;
  r.preserved.old_reserved_init_pages = v.heap.reserved_init_pages;
  r.ok = true;

  if (corruption && corruption->unrecoverable) {
    // Latent corruption beyond every enhancement: the handler itself dies
    // in a recursive fatal exception.
    r.ok = false;
    r.failure = "triple fault while running the failure handler";
  }
  return r;
}

RebootResult microreboot(MachineState& m, VmmState& v,
                         std::vector<DomainState>& doms,
                         const PreservedState& preserved,
                         const RecoveryConfig& cfg,
                         const faults::CorruptionRecord* corruption,
                         bool restore_time_vars) {
  RebootResult r;
  v.generation++;

  // CPU reset: pending/in-service interrupt state in the processors is
  // lost; the I/O controller's ack state is not. Nothing is executing on
  // any CPU, whatever the preserved running flags claim.
  for (auto& d : doms)
    for (auto& vc : d.vcpus) vc.on_cpu = false;
  for (auto& c : m.cpus) {
    c.pending.clear();
    c.in_service.clear();
    c.nmi_in_progress = false;
    c.halted = false;
    c.stuck_in_vmm = false;
    c.irqs_disabled = false;
    c.sp_corrupted = false;
    if (c.cpu_id < static_cast<int>(preserved.statics.stack_bottom.size()))
      c.regs.sp =
          preserved.statics.stack_bottom[static_cast<std::size_t>(c.cpu_id)];
  }

  if (corruption && corruption->unrecoverable) {
    r.failure = "fatal page fault early in the reboot path";
    return r;
  }

  // Fresh image: statics start from image defaults, then the restore list
  // brings over the handles from the snapshot.
  vmm::StaticSegment fresh;
  fresh.microreboot_flag = true;

  // Walk the old heap to find the free pages. The free-list anchor must
  // resolve or the walk faults.
  if (vmm::resolve(v, preserved.statics.xmalloc_free_list) == nullptr) {
    r.failure = "xmalloc free-list handle corrupt; heap walk faulted";
    return r;
  }
  std::set<PageNum> new_free;
  for (PageNum p : preserved.old_free_pages)
    if (!preserved.old_reserved_init_pages.count(p)) new_free.insert(p);

  // page_info: entries of non-free pages preserved verbatim; free pages
  // reinitialized.
  for (PageNum p : new_free) {
    auto& pi = m.page(p);
    pi.owner = PageOwner::free();
    pi.type_use_count = 0;
    pi.validity_bit = false;
    pi.lock_bit = false;
  }
  v.heap.free_pages = std::move(new_free);
  v.heap.reserved_init_pages = preserved.old_reserved_init_pages;

  // Restore list: domain structures.
  fresh.xmalloc_free_list = preserved.statics.xmalloc_free_list;
  if (vmm::resolve(v, preserved.statics.domain_list) == nullptr ||
      vmm::resolve(v, preserved.statics.domain_hash) == nullptr) {
    r.failure = "domain list/hash handle corrupt; fatal dereference";
    return r;
  }
  fresh.domain_list = preserved.statics.domain_list;
  fresh.domain_hash = preserved.statics.domain_hash;

  // Domain 0 is not re-created; its descriptor pointer is restored.
  if (vmm::resolve(v, preserved.statics.domain0) == nullptr) {
    r.failure = "Domain 0 descriptor handle corrupt";
    return r;
  }
  fresh.domain0 = preserved.statics.domain0;

  if (vmm::resolve(v, preserved.statics.m2p_table) == nullptr) {
    r.failure = "m2p table handle corrupt";
    return r;
  }
  fresh.m2p_table = preserved.statics.m2p_table;

  if (vmm::resolve(v, preserved.statics.shared_page_tracker) == nullptr) {
    r.failure = "shared-page tracker handle corrupt";
    return r;
  }
  fresh.shared_page_tracker = preserved.statics.shared_page_tracker;

  // System time: restored so guests never observe a reset time source.
  if (restore_time_vars) {
    fresh.time_vars = preserved.statics.time_vars;
  } else {
    fresh.time_vars = vmm::TimeVars{};  // diagnostic mode
    r.time_regressed = true;
  }

  // Interrupt routing: IRQ descriptors and I/O APIC configuration.
  fresh.irq_descriptors = preserved.statics.irq_descriptors;
  for (const auto& d : fresh.irq_descriptors) {
    for (auto& s : m.ic.sources) {
      if (s.source_id != d.source_id) continue;
      s.bound_cpu = d.affinity;
      s.masked = d.masked;
    }
  }
  fresh.apic_to_cpu = preserved.statics.apic_to_cpu;
  m.ic.apic_to_cpu = fresh.apic_to_cpu;
  fresh.stack_bottom = preserved.statics.stack_bottom;
  fresh.wal_log = preserved.statics.wal_log;

  // Timer events: walk the old heap's event objects into the new heap.
  if (vmm::resolve(v, preserved.statics.timer_heap_root) == nullptr) {
    r.failure = "page fault walking the old timer heap";
    return r;
  }
  fresh.timer_heap_root = preserved.statics.timer_heap_root;
  v.timer_heap.clear();
  for (auto& [id, ev] : v.timer_events) {
    vmm::HeapObject* obj = vmm::resolve(v, ev.object);
    if (obj == nullptr || obj->corrupted) {
      r.failure = "corrupt timer event object during restore";
      return r;
    }
    v.timer_heap.insert({ev.deadline_ms, ev.id, ev.domain});
  }

  v.statics = fresh;

  // Re-created structures: idle domain and hardware info. Old copies are
  // freed first so these never leak.
  std::vector<HeapId> stale;
  for (auto& [id, obj] : v.heap.objects)
    if (obj.kind == vmm::ObjKind::kIdleDomain ||
        obj.kind == vmm::ObjKind::kHardwareInfo)
      stale.push_back(id);
  for (HeapId id : stale) vmm::xfree(v, m, id);
  vmm::xmalloc(v, m, vmm::ObjKind::kIdleDomain);
  vmm::xmalloc(v, m, vmm::ObjKind::kHardwareInfo);

  // Safe-value reinitialization passes.
  if (cfg.clear_running_flag)
    for (auto& d : doms)
      for (auto& vc : d.vcpus) vc.running = false;

  v.locks.ipi_call_lock_held = false;  // static locks reinit on any boot
  if (cfg.reinit_locks) {
    for (auto& [id, l] : v.locks.dynamic_locks) l.held_by.reset();
    for (auto& pi : m.page_info) pi.lock_bit = false;
  }

  // Page-count repair: WAL undo is the stronger repair and wins when both
  // are configured.
  if (cfg.wal_page_count && v.wal_enabled) {
    for (const auto& rec : v.statics.wal_log) {
      auto& pi = m.page(rec.page);
      pi.type_use_count = rec.prior_count;
      pi.validity_bit = rec.prior_valid;
      pi.lock_bit = false;  // the undone operation held it
    }
    v.statics.wal_log.clear();
  } else if (cfg.reset_page_counter) {
    for (auto& pi : m.page_info)
      if (pi.type_use_count > 0 && !pi.validity_bit) pi.type_use_count = 0;
  }

  // Scheduler re-association: fresh run queues, runnable VCPUs inserted.
  v.run_queues.assign(m.cpus.size(), {});
  for (auto& d : doms) {
    if (d.status != guests::DomainStatus::kRunning) continue;
    if (v.pause_count[d.domain_id] > 0) continue;
    for (auto& vc : d.vcpus)
      vmm::runqueue_insert(v, doms, d.domain_id, vc.vcpu_id);
  }

  // VCPU register blocks saved by the handler.
  for (const auto& s : preserved.vcpu_regs) {
    for (auto& d : doms) {
      if (d.domain_id != s.domain) continue;
      auto& vc = d.vcpus[static_cast<std::size_t>(s.vcpu)];
      vc.regs = s.regs;
      if (s.garbage) {
        vc.regs_corrupted = true;
        r.poisoned_dispatch.push_back({d.domain_id, s.vcpu});
      }
    }
  }

  // Pending hypercalls to deal with before scheduling.
  for (auto& d : doms) {
    if (!d.is_live()) continue;
    for (auto& vc : d.vcpus)
      if (guests::pc_in_hypercall_page(d, vc.regs.pc))
        r.pending_retries.push_back({d.domain_id, vc.vcpu_id});
  }

  // Leak accounting: VMM pages not reachable from any object and not free.
  std::set<PageNum> referenced;
  for (const auto& [id, obj] : v.heap.objects)
    if (obj.page >= 0) referenced.insert(obj.page);
  int leaked = 0;
  for (const auto& pi : m.page_info) {
    if (!pi.owner.is_vmm()) continue;
    if (referenced.count(pi.page_number)) continue;
    if (v.heap.free_pages.count(pi.page_number)) continue;
    if (v.heap.reserved_init_pages.count(pi.page_number)) continue;
    leaked++;
  }
  r.leaked_pages = leaked;
  r.ok = true;
  return r;
}

void retry_pending_hypercalls(std::vector<DomainState>& doms,
                              const RecoveryConfig& cfg) {
  for (auto& d : doms) {
    if (!d.is_live()) continue;
    for (auto& vc : d.vcpus) {
      if (!guests::pc_in_hypercall_page(d, vc.regs.pc)) continue;
      if (cfg.hypercall_retry) {
        // PC already points at the hypercall instruction; arguments are
        // still in the saved registers. The dispatch path re-executes it.
        continue;
      }
      // No retry: the guest resumes right after the call with whatever is
      // in the return register and dies on it.
      vc.pending_hypercall.reset();
      vc.regs.pc = d.hypercall_page_base + guests::kHypercallPageSize + 0x100;
      d.guest_panicked = true;
      d.panic_reason = "bad return value from interrupted hypercall";
      d.status = guests::DomainStatus::kCrashed;
    }
  }
}

}  // namespace visorsim::recover
