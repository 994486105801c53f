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

#include "visorsim/faults.hpp"

#include <algorithm>

namespace visorsim::faults {

using guests::DomainRole;
using guests::DomainState;
using guests::HcOp;
using guests::VmProfile;

const char* fault_class_name(FaultClass c) {
  switch (c) {
    case FaultClass::kRegisterBitFlip: return "register";
    case FaultClass::kCodeBitFlip: return "code";
    case FaultClass::kNop: return "nop";
    case FaultClass::kDestination: return "destination";
    case FaultClass::kSource: return "source";
    case FaultClass::kBranch: return "branch";
    case FaultClass::kLoop: return "loop";
    case FaultClass::kPointer: return "pointer";
    case FaultClass::kInterface: return "interface";
    case FaultClass::kHeldDynamicLock: return "held_dynamic_lock";
    case FaultClass::kMidHypercallCrash: return "mid_hypercall_crash";
    case FaultClass::kUnackedInterrupt: return "unacked_interrupt";
    case FaultClass::kCorruptSP: return "corrupt_sp";
    case FaultClass::kCorruptTimerHandle: return "corrupt_timer_handle";
    case FaultClass::kCorruptDomainListHandle: return "corrupt_domain_list";
    case FaultClass::kDropVirq: return "drop_virq";
    case FaultClass::kMidPauseCrash: return "mid_pause_crash";
    case FaultClass::kCorruptVcpuRegs: return "corrupt_vcpu_regs";
    case FaultClass::kHangNonBootCpu: return "hang_nonboot_cpu";
    case FaultClass::kHandlerLockHeld: return "handler_lock_held";
    case FaultClass::kNone: return "none";
  }
  return "unknown";
}

std::optional<FaultClass> fault_class_from_name(const std::string& name) {
  for (int i = 0; i <= static_cast<int>(FaultClass::kNone); ++i) {
    auto c = static_cast<FaultClass>(i);
    if (name == fault_class_name(c)) return c;
  }
  return std::nullopt;
}

bool is_targeted(FaultClass c) {
  switch (c) {
    case FaultClass::kHeldDynamicLock:
    case FaultClass::kMidHypercallCrash:
    case FaultClass::kUnackedInterrupt:
    case FaultClass::kCorruptSP:
    case FaultClass::kCorruptTimerHandle:
    case FaultClass::kCorruptDomainListHandle:
    case FaultClass::kDropVirq:
    case FaultClass::kMidPauseCrash:
    case FaultClass::kCorruptVcpuRegs:
    case FaultClass::kHangNonBootCpu:
    case FaultClass::kHandlerLockHeld:
      return true;
    default:
      return false;
  }
}

FaultCatalog default_catalog() {
  FaultCatalog cat;
  // Table-style class list; one shared default mixture except the
  // register class, which is likelier to corrupt the stack pointer.
  // Reserved EFLAGS bits are not represented in the abstract register
  // file, so the usual exclusion of reserved/VM-8086 bits is moot here.
  EffectMixture base;
  EffectMixture reg = base;
  reg.sp_corrupt = 0.20;
  cat.classes = {
      {FaultClass::kRegisterBitFlip, 0.30, reg},
      {FaultClass::kCodeBitFlip, 0.15, base},
      {FaultClass::kNop, 0.08, base},
      {FaultClass::kDestination, 0.08, base},
      {FaultClass::kSource, 0.08, base},
      {FaultClass::kBranch, 0.08, base},
      {FaultClass::kLoop, 0.08, base},
      {FaultClass::kPointer, 0.08, base},
      {FaultClass::kInterface, 0.07, base},
  };
  cat.sites = {
      {"pin", HcOp::kPageTablePin, 0.40},
      {"grant_unmap", HcOp::kGrantUnmap, 0.25},
      {"vm_pause", HcOp::kVmPause, 0.05},
      {"set_timer", HcOp::kSetTimer, 0.30},
  };
  return cat;
}

FaultSpec plan_injection(const FaultCatalog& catalog, std::uint64_t run_seed,
                         int ncpus) {
  if (catalog.classes.empty())
    throw ConfigError("fault catalog has no classes");
  Rng rng(derive_seed(run_seed, 0xfa01));
  FaultSpec spec;
  spec.seed = run_seed;
  std::vector<double> cw;
  cw.reserve(catalog.classes.size());
  for (const auto& c : catalog.classes) cw.push_back(c.weight);
  spec.fault_class = catalog.classes[rng.weighted(cw)].fault_class;
  const double tw[] = {catalog.target_vmm, catalog.target_dvm,
                       catalog.target_privvm};
  spec.target = static_cast<InjectTarget>(rng.weighted(tw));
  spec.trigger.delay_ms =
      rng.range(catalog.trigger_delay_min_ms, catalog.trigger_delay_max_ms);
  spec.trigger.instruction_count =
      static_cast<int>(rng.range(0, catalog.trigger_instr_max));
  spec.target_cpu = static_cast<CpuId>(rng.below(static_cast<std::uint64_t>(ncpus)));
  spec.reg_index = static_cast<int>(rng.below(10));
  spec.bit = static_cast<int>(rng.below(64));
  return spec;
}

namespace {

DomainState* find_domain(std::vector<DomainState>& doms, DomainId id) {
  for (auto& d : doms)
    if (d.domain_id == id) return &d;
  return nullptr;
}

DomainState* pick_live(std::vector<DomainState>& doms, Rng& rng,
                       DomainRole role, bool pv_only = false) {
  std::vector<DomainState*> c;
  for (auto& d : doms)
    if (d.role == role && d.is_live() &&
        (!pv_only || d.profile == VmProfile::kPv))
      c.push_back(&d);
  if (c.empty()) return nullptr;
  return c[rng.below(c.size())];
}

DomainState* privvm(std::vector<DomainState>& doms) {
  for (auto& d : doms)
    if (d.role == DomainRole::kPrivVm) return &d;
  return nullptr;
}

// Page-table pins come from PV kernels. AppVMs when paravirtualized,
// otherwise the infrastructure VMs, which are always PV.
DomainState* pick_pin_victim(std::vector<DomainState>& doms, Rng& rng) {
  if (DomainState* d = pick_live(doms, rng, DomainRole::kAppVm, true)) return d;
  if (DomainState* d = pick_live(doms, rng, DomainRole::kDvm)) return d;
  return privvm(doms);
}

// A page the victim owns that is in a clean, pinnable state.
std::optional<PageNum> pinnable_page(FaultWorld& w, DomainState& d) {
  for (PageNum p : d.pages) {
    const auto& pi = w.machine.page(p);
    if (pi.type_use_count == 0 && !pi.validity_bit && !pi.lock_bit &&
        static_cast<std::uint64_t>(p) * guests::kHypercallPageSize !=
            d.hypercall_page_base)
      return p;
  }
  return std::nullopt;
}

void force_in_service(FaultWorld& w, int source_id, CorruptionRecord& rec) {
  auto& src = w.machine.source(source_id);
  if (src.level_triggered && src.awaiting_ack) {
    rec.in_service_irq = true;  // already mid-service organically
    return;
  }
  if (machine::raise_interrupt(w.machine, source_id) ==
      machine::DeliveryOutcome::kDelivered) {
    machine::begin_service(w.machine, src.bound_cpu);
    rec.in_service_irq = true;
  }
}

void force_pending(FaultWorld& w, int source_id, CorruptionRecord& rec) {
  auto& src = w.machine.source(source_id);
  if (src.level_triggered && src.awaiting_ack) return;
  if (machine::raise_interrupt(w.machine, source_id) ==
      machine::DeliveryOutcome::kDelivered)
    rec.pending_irq = true;
}

int pick_level_source(FaultWorld& w, Rng& rng) {
  std::vector<int> level;
  for (const auto& s : w.machine.ic.sources)
    if (s.level_triggered) level.push_back(s.source_id);
  if (level.empty()) return -1;
  return level[rng.below(level.size())];
}

void corrupt_sp(FaultWorld& w, CpuId cpu, Rng& rng, CorruptionRecord& rec) {
  auto& c = w.machine.cpu(cpu);
  c.regs.sp = rng.next_u64() | 1;  // garbage, never a valid stack
  c.sp_corrupted = true;
  rec.sp_corrupted = true;
  rec.cpu = cpu;
}

void hold_dynamic_lock(FaultWorld& w, Rng& rng, CpuId cpu,
                       CorruptionRecord& rec) {
  auto& locks = w.vmm.locks.dynamic_locks;
  if (locks.empty()) return;
  auto it = locks.begin();
  std::advance(it, static_cast<std::ptrdiff_t>(rng.below(locks.size())));
  it->second.held_by = cpu;
  rec.held_lock = true;
  rec.held_lock_id = it->first;
}

// Leaves `victim`'s vcpu stopped mid-hypercall at `crash_before`, with all
// partial state mutations really applied.
bool synthesize_mid_hypercall(FaultWorld& w, DomainState& victim, HcOp op,
                              int crash_before, CorruptionRecord& rec) {
  std::array<std::int64_t, 3> args{0, 0, 0};
  switch (op) {
    case HcOp::kPageTablePin: {
      auto page = pinnable_page(w, victim);
      if (!page) return false;
      args[0] = *page;
      rec.touched_pages.push_back(*page);
      break;
    }
    case HcOp::kGrantUnmap: {
      // Victim must currently map someone's granted page.
      PageNum mapped = -1;
      for (auto& [owner, entries] : w.vmm.grants)
        for (auto& e : entries)
          if (e.grantee == victim.domain_id && e.mapped) mapped = e.page;
      if (mapped < 0) return false;
      args[0] = mapped;
      break;
    }
    case HcOp::kVmPause: {
      // Pick a live AppVM target and make sure a running flag is set so
      // the crash lands between the counter bump and the flag clear.
      DomainState* target = nullptr;
      for (auto& d : w.domains)
        if (d.role == DomainRole::kAppVm && d.is_live()) target = &d;
      if (!target) return false;
      target->vcpus[0].running = true;
      target->vcpus[0].on_cpu = true;
      args[0] = target->domain_id;
      break;
    }
    case HcOp::kSetTimer:
      args[0] = w.vmm.statics.time_vars.system_time_ms + 50;
      break;
    default:
      return false;
  }
  auto res = vmm::exec_hypercall(w.machine, w.vmm, w.domains,
                                 victim.domain_id, 0, op, args, 0,
                                 crash_before);
  if (res.status != vmm::HcResult::kCrashed) return false;
  rec.mid_hypercall = true;
  rec.mid_hc_domain = victim.domain_id;
  rec.mid_hc_op = op;
  rec.mid_hc_step = crash_before;
  return true;
}

void apply_targeted(FaultWorld& w, const FaultSpec& spec, SimTime now,
                    Rng& rng, CorruptionRecord& rec) {
  (void)now;
  rec.manifestation = CorruptionRecord::Manifestation::kCrash;
  rec.cpu = spec.target_cpu;
  switch (spec.fault_class) {
    case FaultClass::kHeldDynamicLock:
      hold_dynamic_lock(w, rng, spec.target_cpu, rec);
      break;
    case FaultClass::kMidHypercallCrash: {
      DomainState* victim = spec.victim_domain != kNoDomain
                                ? find_domain(w.domains, spec.victim_domain)
                                : nullptr;
      if (!victim) {
        victim = spec.hc_op == HcOp::kVmPause || spec.hc_op == HcOp::kGrantUnmap
                     ? privvm(w.domains)
                     : pick_pin_victim(w.domains, rng);
        if (spec.hc_op == HcOp::kGrantUnmap) {
          // the backend holding mappings may be a DVM
          for (auto& d : w.domains)
            for (auto& [owner, entries] : w.vmm.grants)
              for (auto& e : entries)
                if (e.grantee == d.domain_id && e.mapped) victim = &d;
        }
      }
      if (victim)
        synthesize_mid_hypercall(w, *victim, spec.hc_op,
                                 spec.hc_crash_before_step, rec);
      break;
    }
    case FaultClass::kMidPauseCrash: {
      DomainState* pv = privvm(w.domains);
      if (pv) synthesize_mid_hypercall(w, *pv, HcOp::kVmPause, 2, rec);
      break;
    }
    case FaultClass::kUnackedInterrupt: {
      int src = spec.source_id >= 0 ? spec.source_id : pick_level_source(w, rng);
      if (src >= 0) force_in_service(w, src, rec);
      break;
    }
    case FaultClass::kCorruptSP:
      corrupt_sp(w, spec.target_cpu, rng, rec);
      break;
    case FaultClass::kCorruptTimerHandle:
      w.vmm.statics.timer_heap_root = 0x7fffffff;
      rec.timer_handle_corrupted = true;
      break;
    case FaultClass::kCorruptDomainListHandle:
      w.vmm.statics.domain_list = 0x7ffffffe;
      rec.domain_list_corrupted = true;
      break;
    case FaultClass::kCorruptVcpuRegs: {
      DomainState* victim = spec.victim_domain != kNoDomain
                                ? find_domain(w.domains, spec.victim_domain)
                                : pick_live(w.domains, rng, DomainRole::kAppVm);
      if (victim) {
        victim->vcpus[0].regs_corrupted = true;
        rec.vcpu_regs_corrupted = true;
      }
      break;
    }
    case FaultClass::kDropVirq: {
      rec.manifestation = CorruptionRecord::Manifestation::kSilent;
      rec.silent_effect = CorruptionRecord::SilentEffect::kLostVirqs;
      DomainState* victim = spec.victim_domain != kNoDomain
                                ? find_domain(w.domains, spec.victim_domain)
                                : pick_live(w.domains, rng, DomainRole::kAppVm);
      if (victim) {
        rec.silent_victim = victim->domain_id;
        victim->virq_queue.clear();
        victim->drop_virqs += 2;
      }
      break;
    }
    case FaultClass::kHangNonBootCpu: {
      CpuId cpu = spec.target_cpu != 0 ? spec.target_cpu : 1;
      rec.manifestation = CorruptionRecord::Manifestation::kHang;
      rec.cpu = cpu;
      w.machine.cpu(cpu).stuck_in_vmm = true;
      break;
    }
    case FaultClass::kHandlerLockHeld:
      w.vmm.locks.ipi_call_lock_held = true;
      rec.stop_blocked = true;
      break;
    default:
      break;
  }
}

void apply_silent(FaultWorld& w, const EffectMixture& mix, Rng& rng,
                  CorruptionRecord& rec) {
  rec.manifestation = CorruptionRecord::Manifestation::kSilent;
  const double weights[] = {mix.silent_guest_panic, mix.silent_lost_virqs,
                            mix.silent_data_corrupt, mix.silent_create_block,
                            mix.silent_whole_reset};
  switch (rng.weighted(weights)) {
    case 0: {
      DomainState* victim = pick_live(w.domains, rng, DomainRole::kAppVm);
      if (!victim) break;
      rec.silent_effect = CorruptionRecord::SilentEffect::kGuestPanic;
      rec.silent_victim = victim->domain_id;
      victim->guest_panicked = true;
      victim->panic_reason = "state corrupted by hypervisor fault";
      victim->status = guests::DomainStatus::kCrashed;
      break;
    }
    case 1: {
      DomainState* victim = pick_live(w.domains, rng, DomainRole::kAppVm);
      if (!victim) break;
      rec.silent_effect = CorruptionRecord::SilentEffect::kLostVirqs;
      rec.silent_victim = victim->domain_id;
      victim->virq_queue.clear();
      victim->drop_virqs += 2;
      break;
    }
    case 2: {
      DomainState* victim = nullptr;
      for (auto& d : w.domains)
        if (d.workload.kind == guests::WorkloadKind::kBlk && d.is_live())
          victim = &d;
      rec.silent_effect = CorruptionRecord::SilentEffect::kDataCorrupt;
      if (victim && !victim->workload.objects.empty()) {
        rec.silent_victim = victim->domain_id;
        auto it = victim->workload.objects.begin();
        std::advance(it, static_cast<std::ptrdiff_t>(
                             rng.below(victim->workload.objects.size())));
        it->second ^= 1ULL << rng.below(64);
      } else if (victim) {
        rec.silent_victim = victim->domain_id;
        victim->workload.io_errors++;
      } else if (DomainState* any = pick_live(w.domains, rng, DomainRole::kAppVm)) {
        rec.silent_victim = any->domain_id;
        any->workload.io_errors++;
      }
      break;
    }
    case 3:
      rec.silent_effect = CorruptionRecord::SilentEffect::kCreateBlock;
      w.vmm.create_blocked = true;
      break;
    default:
      rec.silent_effect = CorruptionRecord::SilentEffect::kWholeReset;
      break;
  }
}

void apply_catalog_class(FaultWorld& w, const FaultSpec& spec, SimTime now,
                         Rng& rng, CorruptionRecord& rec) {
  (void)now;
  const EffectMixture mix = w.mixture ? *w.mixture : EffectMixture{};
  if (rng.chance(mix.non_manifested)) {
    rec.manifestation = CorruptionRecord::Manifestation::kNone;
    rec.note = "fault did not manifest";
    return;
  }
  if (rng.chance(mix.silent_given_manifested)) {
    apply_silent(w, mix, rng, rec);
    return;
  }
  // Detected failure: draw the inconsistency context; every bit is a real
  // state mutation the recovery pipeline will have to confront.
  rec.manifestation = rng.chance(mix.hang_given_detected)
                          ? CorruptionRecord::Manifestation::kHang
                          : CorruptionRecord::Manifestation::kCrash;
  rec.cpu = spec.target_cpu;
  if (rng.chance(mix.stop_blocked)) {
    w.vmm.locks.ipi_call_lock_held = true;
    rec.stop_blocked = true;
  }
  if (rng.chance(mix.in_service_irq)) {
    int src = pick_level_source(w, rng);
    if (src >= 0) force_in_service(w, src, rec);
  }
  if (rng.chance(mix.pending_irq)) {
    int src = pick_level_source(w, rng);
    if (src >= 0) force_pending(w, src, rec);
  }
  if (rng.chance(mix.mid_hypercall)) {
    const double ow[] = {mix.mid_op_pin, mix.mid_op_grant_unmap,
                         mix.mid_op_vm_pause, mix.mid_op_benign};
    HcOp op = HcOp::kSetTimer;
    switch (rng.weighted(ow)) {
      case 0: op = HcOp::kPageTablePin; break;
      case 1: op = HcOp::kGrantUnmap; break;
      case 2: op = HcOp::kVmPause; break;
      default: op = HcOp::kSetTimer; break;
    }
    DomainState* victim = nullptr;
    if (op == HcOp::kPageTablePin) {
      victim = pick_pin_victim(w.domains, rng);
    } else if (op == HcOp::kVmPause) {
      victim = privvm(w.domains);
    } else if (op == HcOp::kGrantUnmap) {
      for (auto& d : w.domains)
        for (auto& [owner, entries] : w.vmm.grants)
          for (auto& e : entries)
            if (e.grantee == d.domain_id && e.mapped && d.is_live())
              victim = &d;
    } else {
      victim = pick_live(w.domains, rng, DomainRole::kAppVm);
    }
    if (victim) {
      int steps = vmm::hc_step_count(op);
      int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(steps)));
      synthesize_mid_hypercall(w, *victim, op, k, rec);
    }
  }
  // Register-class faults name the architectural register: indexes 0-7
  // are GPRs, 8 the program counter, 9 the stack pointer. A flip landing
  // in SP always yields the corrupt-SP context; the rest flow through
  // the class mixture.
  const bool sp_flip =
      spec.fault_class == FaultClass::kRegisterBitFlip && spec.reg_index == 9;
  if (sp_flip || rng.chance(mix.sp_corrupt))
    corrupt_sp(w, spec.target_cpu, rng, rec);
  if (rng.chance(mix.held_dynamic_lock))
    hold_dynamic_lock(w, rng, spec.target_cpu, rec);
  if (rng.chance(mix.mid_alloc_leak) && !w.vmm.heap.free_pages.empty()) {
    // Crash between taking a page off the free list and recording the
    // object: the page is lost until a full reboot reclaims it.
    PageNum lost = *w.vmm.heap.free_pages.begin();
    w.vmm.heap.free_pages.erase(w.vmm.heap.free_pages.begin());
    w.machine.page(lost).owner = PageOwner::vmm();
    rec.note = "mid-allocation crash leaked page " + std::to_string(lost);
  }
  if (rng.chance(mix.unrecoverable)) rec.unrecoverable = true;
  if (rec.manifestation == CorruptionRecord::Manifestation::kHang) {
    // The hung CPU spins inside the hypervisor; its watchdog counter
    // freezes and detection follows organically.
    w.machine.cpu(rec.cpu).stuck_in_vmm = true;
  }
}

}  // namespace

CorruptionRecord apply_fault(FaultWorld w, const FaultSpec& spec, SimTime now) {
  CorruptionRecord rec;
  rec.fault_class = spec.fault_class;
  Rng rng(derive_seed(spec.seed, 0xfa02));
  if (spec.fault_class == FaultClass::kNone) return rec;
  if (is_targeted(spec.fault_class)) {
    apply_targeted(w, spec, now, rng, rec);
  } else {
    apply_catalog_class(w, spec, now, rng, rec);
  }
  return rec;
}

}  // namespace visorsim::faults
