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

#ifndef VISORSIM_MACHINE_HPP
#define VISORSIM_MACHINE_HPP

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "visorsim/types.hpp"

namespace visorsim::machine {

// Abstract register file. Instruction execution is abstract (workload
// script steps), so corruption of a register only matters to whichever
// consumer reads it: SP is read by the failure handler, PC by the
// hypercall-retry check.
struct RegisterFile {
  std::array<std::uint64_t, 8> gpr{};
  std::uint64_t pc = 0;
  std::uint64_t sp = 0;
  std::uint64_t flags = 0;
};

struct Cpu {
  CpuId cpu_id = 0;
  ApicId apic_id = 0;
  RegisterFile regs;
  bool halted = false;
  bool nmi_in_progress = false;
  // Vectors currently being serviced, highest priority (= vector) first.
  std::vector<Vector> in_service;
  std::set<Vector> pending;

  // Simulation-side status bits, not architectural registers.
  bool sp_corrupted = false;   // SP holds garbage; consumers decide impact
  bool irqs_disabled = false;  // maskable IPIs to this CPU are dropped
  bool stuck_in_vmm = false;   // spinning in hypervisor context; no guest
                               // progress and no watchdog increments
};

enum class DeliveryOutcome { kDelivered, kBlocked, kMasked };

struct IrqSource {
  int source_id = 0;
  Vector vector = 0;
  bool level_triggered = false;
  bool masked = false;
  // Level-triggered sources hold the line: no new interrupt until the
  // previous one is acknowledged (EOI).
  bool awaiting_ack = false;
  CpuId bound_cpu = 0;
  std::string name;
};

struct InterruptController {
  std::vector<IrqSource> sources;
  std::map<ApicId, CpuId> apic_to_cpu;
};

struct PageInfo {
  PageNum page_number = 0;
  PageOwner owner = PageOwner::free();
  int type_use_count = 0;
  bool validity_bit = false;
  bool lock_bit = false;

  bool operator==(const PageInfo&) const = default;
};

struct Watchdog {
  struct PerCpu {
    std::uint64_t counter = 0;
    std::uint64_t last_counter = 0;
    SimTime last_change_ms = 0;
  };
  std::vector<PerCpu> cpus;
  SimTime period_ms = 100;
  SimTime hang_threshold_ms = 300;
};

struct HangEvent {
  CpuId cpu = 0;
  SimTime at_ms = 0;
};

// Non-fatal protocol violations (e.g. EOI with nothing in service) are
// recorded here rather than thrown; a real controller would just ignore
// the write.
struct ProtocolError {
  SimTime at_ms = 0;
  std::string what;
};

struct MachineState {
  std::vector<Cpu> cpus;
  InterruptController ic;
  std::vector<PageInfo> page_info;
  std::vector<std::uint64_t> page_content;
  Watchdog watchdog;
  std::vector<ProtocolError> protocol_errors;

  Cpu& cpu(CpuId id);
  const Cpu& cpu(CpuId id) const;
  IrqSource& source(int source_id);
  PageInfo& page(PageNum n);
};

// Builds a machine with `ncpus` CPUs (apic ids may be permuted via
// `apic_of_cpu`; identity if empty) and `npages` pages.
MachineState make_machine(int ncpus, int npages,
                          const std::vector<ApicId>& apic_of_cpu = {});

// Interrupt controller entry point for a device asserting its line.
DeliveryOutcome raise_interrupt(MachineState& m, int source_id);

// CPU begins servicing its highest-priority pending vector, if any.
// Returns the vector moved to in-service.
std::optional<Vector> begin_service(MachineState& m, CpuId cpu);

// End-of-interrupt: drops the vector from in-service and releases the
// level-triggered line so the source may fire again.
void eoi(MachineState& m, CpuId cpu, Vector vector, SimTime now = 0);

enum class NmiOutcome { kDelivered, kBlocked };
NmiOutcome deliver_nmi(MachineState& m, CpuId cpu);

// Executes an iret purely to acknowledge an in-progress NMI; control
// stays in the failure handler. Idempotent.
void iret_ack(MachineState& m, CpuId cpu);

// APICID -> CPUID via the controller's mapping table; independent of any
// CPU register state, in particular the stack pointer.
CpuId cpuid_from_apic(const MachineState& m, ApicId apic);

// One watchdog period elapsed. For every CPU still making progress the
// counter is incremented; then each CPU's watchdog NMI (if deliverable)
// checks for a counter frozen >= hang_threshold_ms.
std::vector<HangEvent> watchdog_tick(MachineState& m, SimTime now_ms);

}  // namespace visorsim::machine

#endif  // VISORSIM_MACHINE_HPP
