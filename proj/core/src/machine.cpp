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

#include "visorsim/machine.hpp"

#include <algorithm>

namespace visorsim::machine {

Cpu& MachineState::cpu(CpuId id) {
  if (id < 0 || id >= static_cast<int>(cpus.size()))
    throw ConfigError("unknown cpu id " + std::to_string(id));
  return cpus[static_cast<std::size_t>(id)];
}

const Cpu& MachineState::cpu(CpuId id) const {
  return const_cast<MachineState*>(this)->cpu(id);
}

IrqSource& MachineState::source(int source_id) {
  for (auto& s : ic.sources)
    if (s.source_id == source_id) return s;
  throw ConfigError("unknown interrupt source " + std::to_string(source_id));
}

PageInfo& MachineState::page(PageNum n) {
  if (n < 0 || n >= static_cast<int>(page_info.size()))
    throw ConfigError("page number out of range: " + std::to_string(n));
  return page_info[static_cast<std::size_t>(n)];
}

MachineState make_machine(int ncpus, int npages,
                          const std::vector<ApicId>& apic_of_cpu) {
  MachineState m;
  m.cpus.resize(static_cast<std::size_t>(ncpus));
  for (int i = 0; i < ncpus; ++i) {
    Cpu& c = m.cpus[static_cast<std::size_t>(i)];
    c.cpu_id = i;
    c.apic_id = apic_of_cpu.empty() ? i : apic_of_cpu[static_cast<std::size_t>(i)];
    m.ic.apic_to_cpu[c.apic_id] = i;
  }
  m.page_info.resize(static_cast<std::size_t>(npages));
  m.page_content.assign(static_cast<std::size_t>(npages), 0);
  for (int p = 0; p < npages; ++p)
    m.page_info[static_cast<std::size_t>(p)].page_number = p;
  m.watchdog.cpus.resize(static_cast<std::size_t>(ncpus));
  return m;
}

DeliveryOutcome raise_interrupt(MachineState& m, int source_id) {
  IrqSource& s = m.source(source_id);
  if (s.level_triggered && s.awaiting_ack) return DeliveryOutcome::kBlocked;
  if (s.masked) return DeliveryOutcome::kMasked;
  Cpu& c = m.cpu(s.bound_cpu);
  c.pending.insert(s.vector);
  if (s.level_triggered) s.awaiting_ack = true;
  return DeliveryOutcome::kDelivered;
}

std::optional<Vector> begin_service(MachineState& m, CpuId cpu) {
  Cpu& c = m.cpu(cpu);
  if (c.pending.empty()) return std::nullopt;
  // Highest vector wins; pending lower-or-equal vectors stay blocked by
  // an in-service one.
  Vector v = *c.pending.rbegin();
  if (!c.in_service.empty() && v <= c.in_service.front()) return std::nullopt;
  c.pending.erase(v);
  c.in_service.insert(c.in_service.begin(), v);
  return v;
}

void eoi(MachineState& m, CpuId cpu, Vector vector, SimTime now) {
  Cpu& c = m.cpu(cpu);
  auto it = std::find(c.in_service.begin(), c.in_service.end(), vector);
  if (it == c.in_service.end()) {
    m.protocol_errors.push_back(
        {now, "eoi for vector " + std::to_string(vector) + " not in service on cpu " +
                  std::to_string(cpu)});
    return;
  }
  c.in_service.erase(it);
  for (auto& s : m.ic.sources)
    if (s.vector == vector) s.awaiting_ack = false;
}

NmiOutcome deliver_nmi(MachineState& m, CpuId cpu) {
  Cpu& c = m.cpu(cpu);
  if (c.nmi_in_progress) return NmiOutcome::kBlocked;
  c.nmi_in_progress = true;
  return NmiOutcome::kDelivered;
}

void iret_ack(MachineState& m, CpuId cpu) {
  m.cpu(cpu).nmi_in_progress = false;
}

CpuId cpuid_from_apic(const MachineState& m, ApicId apic) {
  auto it = m.ic.apic_to_cpu.find(apic);
  if (it == m.ic.apic_to_cpu.end())
    throw ConfigError("unknown apic id " + std::to_string(apic));
  return it->second;
}

std::vector<HangEvent> watchdog_tick(MachineState& m, SimTime now_ms) {
  std::vector<HangEvent> hangs;
  for (auto& c : m.cpus) {
    auto& w = m.watchdog.cpus[static_cast<std::size_t>(c.cpu_id)];
    // The normal timer event bumps the counter unless this CPU is wedged
    // inside the hypervisor.
    if (!c.stuck_in_vmm && !c.halted) w.counter++;
    if (w.counter != w.last_counter) {
      w.last_counter = w.counter;
      w.last_change_ms = now_ms;
      continue;
    }
    // The check itself rides a watchdog NMI on this CPU; a CPU wedged
    // mid-NMI cannot take it.
    if (deliver_nmi(m, c.cpu_id) == NmiOutcome::kBlocked) continue;
    if (now_ms - w.last_change_ms >= m.watchdog.hang_threshold_ms) {
      // Hang declared: the failure path is entered from NMI context and
      // never irets, leaving nmi_in_progress set.
      hangs.push_back({c.cpu_id, now_ms});
    } else {
      iret_ack(m, c.cpu_id);  // handler returns normally
    }
  }
  return hangs;
}

}  // namespace visorsim::machine
