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

#include "visorsim/recover.hpp"
#include "visorsim/sim.hpp"

using namespace visorsim;
using namespace visorsim::recover;

namespace {

detect::DetectedFailure crash_on(CpuId cpu) {
  return {detect::FailureKind::kCrash, cpu, 3000, "test"};
}

detect::DetectedFailure hang_on(CpuId cpu) {
  return {detect::FailureKind::kHang, cpu, 3000, "test"};
}

}  // namespace

TEST_CASE("handler: hang on a non-boot cpu needs the NMI ack") {
  auto w = sim::boot_world(config::preset_1appvm(), 21);
  // The hang-detecting CPU is wedged inside a watchdog NMI.
  machine::deliver_nmi(w->machine, 1);
  auto cfg = RecoveryConfig::all_on();
  SUBCASE("without nmi_ack the stop NMI IPI is blocked") {
    cfg.nmi_ack = false;
    auto r = failure_handler(w->machine, w->hv, w->domains, cfg, hang_on(1),
                             nullptr);
    CHECK(!r.ok);
  }
  SUBCASE("with nmi_ack the handler irets first and proceeds") {
    auto r = failure_handler(w->machine, w->hv, w->domains, cfg, hang_on(1),
                             nullptr);
    CHECK(r.ok);
  }
}

TEST_CASE("handler: corrupted stack pointer without FixSP") {
  auto cfg = RecoveryConfig::all_on();
  cfg.fix_sp = false;
  int stuck = 0, garbage = 0;
  for (std::uint64_t s = 0; s < 16; ++s) {
    auto w = sim::boot_world(config::preset_1appvm(), s);
    auto& cpu = w->machine.cpu(1);
    cpu.regs.sp = mix64(s) | 1;
    cpu.sp_corrupted = true;
    auto r = failure_handler(w->machine, w->hv, w->domains, cfg, crash_on(1),
                             nullptr);
    if (!r.ok) {
      stuck++;
    } else {
      // Handler survived with a wrong CPUID: the register save through
      // the bad stack pointer is garbage.
      bool any_garbage = false;
      for (const auto& sr : r.preserved.vcpu_regs)
        if (sr.garbage) any_garbage = true;
      CHECK(any_garbage);
      garbage++;
    }
  }
  // Both observed consequences occur across stack pointer values.
  CHECK(stuck > 0);
  CHECK(garbage > 0);
}

TEST_CASE("handler: FixSP neutralizes the corrupt stack pointer") {
  auto w = sim::boot_world(config::preset_1appvm(), 3);
  auto& cpu = w->machine.cpu(1);
  cpu.regs.sp = 0xbad;
  cpu.sp_corrupted = true;
  auto r = failure_handler(w->machine, w->hv, w->domains,
                           RecoveryConfig::all_on(), crash_on(1), nullptr);
  CHECK(r.ok);
  CHECK(!cpu.sp_corrupted);
  for (const auto& sr : r.preserved.vcpu_regs) CHECK(!sr.garbage);
}

TEST_CASE("handler: held call-setup lock defeats maskable stop IPIs only") {
  auto w = sim::boot_world(config::preset_1appvm(), 4);
  w->hv.locks.ipi_call_lock_held = true;
  auto cfg = RecoveryConfig::all_on();
  SUBCASE("maskable IPIs get stuck") {
    cfg.nmi_ipi = false;
    auto r = failure_handler(w->machine, w->hv, w->domains, cfg, crash_on(0),
                             nullptr);
    CHECK(!r.ok);
  }
  SUBCASE("NMI IPIs bust the lock") {
    auto r = failure_handler(w->machine, w->hv, w->domains, cfg, crash_on(0),
                             nullptr);
    CHECK(r.ok);
    CHECK(!w->hv.locks.ipi_call_lock_held);
  }
}

TEST_CASE("handler ack: in-service level interrupt becomes deliverable again") {
  auto w = sim::boot_world(config::preset_1appvm(), 5);
  int blk_src = 0;  // first declared source in the 1AppVM setup
  machine::raise_interrupt(w->machine, blk_src);
  machine::begin_service(w->machine, w->machine.source(blk_src).bound_cpu);
  REQUIRE(w->machine.source(blk_src).awaiting_ack);
  auto cfg = RecoveryConfig::all_on();
  SUBCASE("with ack_interrupts the source is deliverable post-recovery") {
    auto r = failure_handler(w->machine, w->hv, w->domains, cfg, crash_on(0),
                             nullptr);
    REQUIRE(r.ok);
    CHECK(!w->machine.source(blk_src).awaiting_ack);
    auto reboot = microreboot(w->machine, w->hv, w->domains, r.preserved, cfg,
                              nullptr);
    REQUIRE(reboot.ok);
    CHECK(machine::raise_interrupt(w->machine, blk_src) ==
          machine::DeliveryOutcome::kDelivered);
  }
  SUBCASE("without it the device stays blocked after recovery") {
    cfg.ack_interrupts = false;
    cfg.ack_interrupts_enhanced = false;
    auto r = failure_handler(w->machine, w->hv, w->domains, cfg, crash_on(0),
                             nullptr);
    REQUIRE(r.ok);
    auto reboot = microreboot(w->machine, w->hv, w->domains, r.preserved, cfg,
                              nullptr);
    REQUIRE(reboot.ok);
    CHECK(machine::raise_interrupt(w->machine, blk_src) ==
          machine::DeliveryOutcome::kBlocked);
  }
}

TEST_CASE("handler enhanced ack drains pending, CPU-reset alone does not") {
  auto cfg_plain = RecoveryConfig::all_on();
  cfg_plain.ack_interrupts_enhanced = false;
  for (bool enhanced : {false, true}) {
    auto w = sim::boot_world(config::preset_1appvm(), 6);
    int blk_src = 0;
    machine::raise_interrupt(w->machine, blk_src);  // pending, not serviced
    REQUIRE(w->machine.source(blk_src).awaiting_ack);
    auto cfg = enhanced ? RecoveryConfig::all_on() : cfg_plain;
    auto r = failure_handler(w->machine, w->hv, w->domains, cfg, crash_on(0),
                             nullptr);
    REQUIRE(r.ok);
    auto reboot =
        microreboot(w->machine, w->hv, w->domains, r.preserved, cfg, nullptr);
    REQUIRE(reboot.ok);
    auto outcome = machine::raise_interrupt(w->machine, blk_src);
    if (enhanced)
      CHECK(outcome == machine::DeliveryOutcome::kDelivered);
    else
      CHECK(outcome == machine::DeliveryOutcome::kBlocked);
  }
}

TEST_CASE("microreboot preserves domain memory and page metadata") {
  auto w = sim::boot_world(config::preset_1appvm(), 8);
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  // Pin a page so non-trivial metadata must survive.
  PageNum pinned = *std::next(w->domain(blk)->pages.begin(), 3);
  vmm::exec_hypercall(w->machine, w->hv, w->domains, blk, 0,
                      guests::HcOp::kPageTablePin, {pinned, 0, 0});
  std::map<PageNum, std::uint64_t> before_content;
  std::map<PageNum, machine::PageInfo> before_info;
  for (PageNum p : w->domain(blk)->pages) {
    before_content[p] = w->machine.page_content[static_cast<std::size_t>(p)];
    before_info[p] = w->machine.page_info[static_cast<std::size_t>(p)];
  }
  auto free_before = w->hv.heap.free_pages;

  auto cfg = RecoveryConfig::all_on();
  auto hr = failure_handler(w->machine, w->hv, w->domains, cfg, crash_on(0),
                            nullptr);
  REQUIRE(hr.ok);
  auto rr = microreboot(w->machine, w->hv, w->domains, hr.preserved, cfg,
                        nullptr);
  REQUIRE(rr.ok);
  for (PageNum p : w->domain(blk)->pages) {
    CHECK(w->machine.page_content[static_cast<std::size_t>(p)] ==
          before_content[p]);
    CHECK(w->machine.page_info[static_cast<std::size_t>(p)] == before_info[p]);
  }
  // The new heap only reuses pages that were free before the failure.
  for (PageNum p : w->hv.heap.free_pages) CHECK(free_before.count(p) == 1);
  // Idle/hardware-info re-creation freed the old copies: nothing leaked.
  CHECK(rr.leaked_pages == 0);
}

TEST_CASE("microreboot restores time unless the diagnostic mode disables it") {
  auto w = sim::boot_world(config::preset_1appvm(), 12);
  vmm::advance_time(w->hv, 5000);
  auto cfg = RecoveryConfig::all_on();
  auto hr = failure_handler(w->machine, w->hv, w->domains, cfg, crash_on(0),
                            nullptr);
  REQUIRE(hr.ok);
  SUBCASE("restored: monotone across the reboot") {
    auto rr = microreboot(w->machine, w->hv, w->domains, hr.preserved, cfg,
                          nullptr, /*restore_time_vars=*/true);
    REQUIRE(rr.ok);
    CHECK(!rr.time_regressed);
    CHECK(vmm::time_now(w->hv) == 5000);
  }
  SUBCASE("diagnostic: regression happens and is flagged") {
    auto rr = microreboot(w->machine, w->hv, w->domains, hr.preserved, cfg,
                          nullptr, /*restore_time_vars=*/false);
    REQUIRE(rr.ok);
    CHECK(rr.time_regressed);
    CHECK(vmm::time_now(w->hv) < 5000);
  }
}

TEST_CASE("microreboot restores pending timers; corrupt handles are fatal") {
  auto w = sim::boot_world(config::preset_1appvm(), 13);
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  vmm::set_timer(w->hv, w->machine, blk, 7000);
  auto cfg = RecoveryConfig::all_on();
  auto hr = failure_handler(w->machine, w->hv, w->domains, cfg, crash_on(0),
                            nullptr);
  REQUIRE(hr.ok);
  SUBCASE("timers survive the reboot") {
    auto rr = microreboot(w->machine, w->hv, w->domains, hr.preserved, cfg,
                          nullptr);
    REQUIRE(rr.ok);
    auto fired = vmm::fire_due_timers(w->hv, w->machine, 7000);
    REQUIRE(fired.size() == 1);
    CHECK(fired[0].domain == blk);
  }
  SUBCASE("a corrupted timer heap handle faults the reboot (category i)") {
    auto preserved = hr.preserved;
    preserved.statics.timer_heap_root = 0x7fffffff;
    auto rr = microreboot(w->machine, w->hv, w->domains, preserved, cfg,
                          nullptr);
    CHECK(!rr.ok);
  }
  SUBCASE("a corrupted domain-list handle faults the reboot (category i)") {
    auto preserved = hr.preserved;
    preserved.statics.domain_list = 0x7ffffffe;
    auto rr = microreboot(w->machine, w->hv, w->domains, preserved, cfg,
                          nullptr);
    CHECK(!rr.ok);
  }
}

TEST_CASE("microreboot repair passes: locks, page counters, WAL precedence") {
  auto base = config::preset_1appvm();
  SUBCASE("reinit_locks frees dynamic locks and page lock bits") {
    auto w = sim::boot_world(base, 14);
    w->hv.locks.dynamic_locks.begin()->second.held_by = 0;
    w->machine.page(100).lock_bit = true;
    auto cfg = RecoveryConfig::all_on();
    auto hr = failure_handler(w->machine, w->hv, w->domains, cfg, crash_on(0),
                              nullptr);
    REQUIRE(hr.ok);
    auto rr = microreboot(w->machine, w->hv, w->domains, hr.preserved, cfg,
                          nullptr);
    REQUIRE(rr.ok);
    for (const auto& [id, l] : w->hv.locks.dynamic_locks)
      CHECK(!l.held_by.has_value());
    CHECK(!w->machine.page(100).lock_bit);
  }
  SUBCASE("WAL undo takes precedence over the counter reset") {
    auto cfg_wal = base;
    cfg_wal.recovery.wal_page_count = true;
    auto w = sim::boot_world(cfg_wal, 15);
    DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
    PageNum p = *std::next(w->domain(blk)->pages.begin(), 2);
    vmm::exec_hypercall(w->machine, w->hv, w->domains, blk, 0,
                        guests::HcOp::kPageTablePin, {p, 0, 0}, 0, 5);
    REQUIRE(w->machine.page(p).type_use_count == 1);
    auto cfg = w->rcfg;  // wal + reset both on; wal must win
    cfg.reset_page_counter = true;
    auto hr = failure_handler(w->machine, w->hv, w->domains, cfg, crash_on(0),
                              nullptr);
    REQUIRE(hr.ok);
    auto rr = microreboot(w->machine, w->hv, w->domains, hr.preserved, cfg,
                          nullptr);
    REQUIRE(rr.ok);
    CHECK(w->machine.page(p).type_use_count == 0);
    CHECK(!w->machine.page(p).validity_bit);
    CHECK(!w->machine.page(p).lock_bit);
    CHECK(w->hv.statics.wal_log.empty());
  }
}

TEST_CASE("retry_pending_hypercalls: no flag means a guest panic on return") {
  auto w = sim::boot_world(config::preset_1appvm(), 16);
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  PageNum p = *std::next(w->domain(blk)->pages.begin(), 2);
  vmm::exec_hypercall(w->machine, w->hv, w->domains, blk, 0,
                      guests::HcOp::kPageTablePin, {p, 0, 0}, 0, 5);
  REQUIRE(guests::pc_in_hypercall_page(*w->domain(blk),
                                       w->domain(blk)->vcpus[0].regs.pc));
  SUBCASE("flag off") {
    auto cfg = RecoveryConfig::all_on();
    cfg.hypercall_retry = false;
    retry_pending_hypercalls(w->domains, cfg);
    CHECK(w->domain(blk)->guest_panicked);
  }
  SUBCASE("flag on keeps the vcpu poised for re-execution") {
    retry_pending_hypercalls(w->domains, RecoveryConfig::all_on());
    CHECK(!w->domain(blk)->guest_panicked);
    CHECK(w->domain(blk)->vcpus[0].pending_hypercall.has_value());
  }
  SUBCASE("a vcpu outside the hypercall page is untouched") {
    auto* priv = w->domain(w->privvm_id);
    auto pc_before = priv->vcpus[0].regs.pc;
    retry_pending_hypercalls(w->domains, RecoveryConfig::all_on());
    CHECK(priv->vcpus[0].regs.pc == pc_before);
    CHECK(!priv->guest_panicked);
  }
}

TEST_CASE("identity recovery: a clean failure recovers every workload") {
  // Handler-lock fault plus NMI IPIs: the handler busts the lock, nothing
  // else is corrupted, so recovery is an identity operation.
  faults::FaultSpec spec;
  spec.fault_class = faults::FaultClass::kHandlerLockHeld;
  spec.trigger.delay_ms = 2500;
  sim::RunOptions opts;
  opts.fault_override = spec;
  auto res = sim::run_once(config::preset_1appvm(), 30, opts);
  CHECK(res.detected);
  CHECK(res.recovery_success);
  for (const auto& v : res.verdicts) CHECK(v.success);
}

TEST_CASE("flag monotonicity on the targeted suite") {
  // Enabling any additional flag never converts a passing targeted run
  // into a failure: the full stack plus WAL passes everything the full
  // stack passes.
  using faults::FaultClass;
  for (FaultClass fc :
       {FaultClass::kHeldDynamicLock, FaultClass::kUnackedInterrupt,
        FaultClass::kCorruptSP, FaultClass::kHangNonBootCpu,
        FaultClass::kMidPauseCrash, FaultClass::kHandlerLockHeld}) {
    faults::FaultSpec spec;
    spec.fault_class = fc;
    spec.trigger.delay_ms = 2000;
    spec.target_cpu = 1;
    sim::RunOptions opts;
    opts.fault_override = spec;
    auto cfg = config::preset_1appvm();
    cfg.recovery = RecoveryConfig::all_on();
    auto base = sim::run_once(cfg, 55, opts);
    CHECK(base.recovery_success);
    cfg.recovery.wal_page_count = true;  // one more flag
    auto more = sim::run_once(cfg, 55, opts);
    CHECK(more.recovery_success);
  }
}

TEST_CASE("targeted corruption classes land in category (i)") {
  auto cfg = config::preset_1appvm();
  cfg.recovery = RecoveryConfig::all_on();
  sim::RunOptions opts;
  SUBCASE("corrupt saved VCPU registers crash the first dispatch") {
    faults::FaultSpec spec;
    spec.fault_class = faults::FaultClass::kCorruptVcpuRegs;
    spec.trigger.delay_ms = 2000;
    opts.fault_override = spec;
    auto r = sim::run_once(cfg, 61, opts);
    REQUIRE(r.detected);
    CHECK(!r.recovery_success);
    CHECK(r.category == detect::Category::kI);
  }
  SUBCASE("a corrupt timer-heap handle faults the restore walk") {
    faults::FaultSpec spec;
    spec.fault_class = faults::FaultClass::kCorruptTimerHandle;
    spec.trigger.delay_ms = 2000;
    opts.fault_override = spec;
    auto r = sim::run_once(cfg, 62, opts);
    REQUIRE(r.detected);
    CHECK(!r.recovery_success);
    CHECK(r.category == detect::Category::kI);
  }
  SUBCASE("a corrupt domain-list handle faults re-integration") {
    faults::FaultSpec spec;
    spec.fault_class = faults::FaultClass::kCorruptDomainListHandle;
    spec.trigger.delay_ms = 2000;
    opts.fault_override = spec;
    auto r = sim::run_once(cfg, 63, opts);
    REQUIRE(r.detected);
    CHECK(!r.recovery_success);
    CHECK(r.category == detect::Category::kI);
  }
}

TEST_CASE("latent unrecoverable corruption kills the handler (triple fault)") {
  auto w = sim::boot_world(config::preset_1appvm(), 64);
  faults::CorruptionRecord rec;
  rec.unrecoverable = true;
  auto r = failure_handler(w->machine, w->hv, w->domains,
                           RecoveryConfig::all_on(), crash_on(0), &rec);
  CHECK(!r.ok);
}
