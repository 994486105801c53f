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

#include "visorsim/world.hpp"

#include <algorithm>

namespace visorsim {

using guests::DomainRole;
using guests::DomainState;
using guests::VmProfile;
using guests::WorkloadKind;

namespace {

constexpr int kTotalPages = 4096;
constexpr int kReservedInitPages = 32;
constexpr int kLocksPerDomain = 4;

int cpu_count(const config::ScenarioConfig& cfg) {
  switch (cfg.topology.kind) {
    case config::TopologyKind::k1AppVm:
      return 2;
    case config::TopologyKind::k3AppVm:
      // PrivVM, DVM, Net, Unix, plus the post-recovery Blk VM; the spare
      // DVM takes one more when the RVI mechanisms are on.
      return cfg.topology.rvi_enabled ? 6 : 5;
    case config::TopologyKind::k5AppVm:
      return 8;
  }
  return 2;
}

}  // namespace

void World::schedule(SimTime at, int kind, std::int64_t a, std::int64_t b,
                     std::int64_t c) {
  queue.insert(Event{at, next_seq++, kind, a, b, c});
}

DomainState* World::domain(DomainId id) {
  for (auto& d : domains)
    if (d.domain_id == id) return &d;
  return nullptr;
}

DomainState* World::domain_by_name(const std::string& name) {
  for (auto& d : domains)
    if (d.name == name) return &d;
  return nullptr;
}

guests::Ring& World::ring(int id) {
  return rings[static_cast<std::size_t>(id)];
}

bool World::domain_can_run(const DomainState& d) const {
  if (!d.is_live() || d.status == guests::DomainStatus::kPaused) return false;
  if (d.guest_panicked || d.guest_hung) return false;
  if (whole_machine_reset) return false;
  for (const auto& vc : d.vcpus) {
    const auto& c = machine.cpus[static_cast<std::size_t>(vc.pinned_cpu)];
    if (c.stuck_in_vmm || c.halted) return false;
  }
  return true;
}

int World::add_irq_source(const std::string& name, Vector vec, bool level,
                          CpuId bound) {
  machine::IrqSource s;
  s.source_id = static_cast<int>(machine.ic.sources.size());
  s.vector = vec;
  s.level_triggered = level;
  s.bound_cpu = bound;
  s.name = name;
  machine.ic.sources.push_back(s);
  hv.statics.irq_descriptors.push_back({s.source_id, bound, false});
  return s.source_id;
}

DomainId World::create_domain(DomainRole role, VmProfile profile,
                              const std::string& name, int page_quota,
                              WorkloadKind wl, CpuId preferred_cpu) {
  DomainState d;
  d.domain_id = next_domain_id++;
  d.name = name;
  d.role = role;
  d.profile = profile;
  d.status = guests::DomainStatus::kRunning;
  d.workload.kind = wl;

  // Carve the domain's memory off the hypervisor's free pool.
  for (int i = 0; i < page_quota; ++i) {
    if (hv.heap.free_pages.empty()) break;
    PageNum p = *hv.heap.free_pages.begin();
    hv.heap.free_pages.erase(hv.heap.free_pages.begin());
    auto& pi = machine.page(p);
    pi.owner = PageOwner::domain(d.domain_id);
    machine.page_content[static_cast<std::size_t>(p)] =
        mix64(run_seed ^ static_cast<std::uint64_t>(p) ^
              static_cast<std::uint64_t>(d.domain_id) << 32);
    d.pages.insert(p);
  }
  if (d.pages.empty()) throw SimInvariantError("out of pages for domain");
  d.hypercall_page_base = static_cast<std::uint64_t>(*d.pages.begin()) *
                          guests::kHypercallPageSize;

  guests::VcpuState vc;
  vc.vcpu_id = 0;
  if (preferred_cpu >= 0 && preferred_cpu < static_cast<int>(machine.cpus.size()))
    vc.pinned_cpu = preferred_cpu;
  else
    vc.pinned_cpu = next_cpu < static_cast<int>(machine.cpus.size())
                        ? next_cpu++
                        : static_cast<int>(machine.cpus.size()) - 1;
  vc.regs.pc = d.hypercall_page_base + guests::kHypercallPageSize + 0x100;
  vc.regs.sp = 0x7fff0000 + static_cast<std::uint64_t>(d.domain_id) * 0x1000;
  d.vcpus.push_back(vc);

  d.domain_obj = vmm::xmalloc(hv, machine, vmm::ObjKind::kDomainStruct,
                              {d.domain_id});
  d.virq_queue_obj = vmm::xmalloc(hv, machine, vmm::ObjKind::kVirqQueue);
  d.grant_table_obj = vmm::xmalloc(hv, machine, vmm::ObjKind::kGrantTable);
  d.vcpu_save_obj = vmm::xmalloc(hv, machine, vmm::ObjKind::kVcpuSaveArea);
  auto lock_ids =
      vmm::alloc_domain_locks(hv, d.domain_id, kLocksPerDomain);
  if (auto* obj = vmm::resolve(hv, d.domain_obj))
    obj->dynamic_locks = lock_ids;

  hv.pause_count[d.domain_id] = 0;
  if (auto* dl = vmm::resolve(hv, hv.statics.domain_list))
    dl->payload.push_back(d.domain_id);
  if (auto* dh = vmm::resolve(hv, hv.statics.domain_hash))
    dh->payload.push_back(d.domain_id);

  domains.push_back(std::move(d));
  vmm::runqueue_insert(hv, domains, domains.back().domain_id, 0);
  return domains.back().domain_id;
}

void World::destroy_domain(DomainId id) {
  DomainState* d = domain(id);
  if (!d || d->status == guests::DomainStatus::kDestroyed) return;
  d->status = guests::DomainStatus::kDestroyed;
  vmm::runqueue_remove(hv, id);
  vmm::free_domain_locks(hv, id);
  vmm::xfree(hv, machine, d->domain_obj);
  vmm::xfree(hv, machine, d->virq_queue_obj);
  vmm::xfree(hv, machine, d->grant_table_obj);
  vmm::xfree(hv, machine, d->vcpu_save_obj);
  for (PageNum p : d->pages) {
    auto& pi = machine.page(p);
    pi.owner = PageOwner::free();
    pi.type_use_count = 0;
    pi.validity_bit = false;
    pi.lock_bit = false;
    machine.page_content[static_cast<std::size_t>(p)] = 0;
    hv.heap.free_pages.insert(p);
  }
  d->pages.clear();
  if (auto* dl = vmm::resolve(hv, hv.statics.domain_list))
    std::erase(dl->payload, static_cast<std::int64_t>(id));
  if (auto* dh = vmm::resolve(hv, hv.statics.domain_hash))
    std::erase(dh->payload, static_cast<std::int64_t>(id));
}

void World::connect_blk_ring(DomainId frontend, DomainId backend,
                             int device_source) {
  guests::Ring r;
  r.ring_id = static_cast<int>(rings.size());
  r.kind = guests::Ring::kBlk;
  r.frontend = frontend;
  r.backend = backend;
  r.device_source = device_source;
  // Two buffer pages owned by the frontend, granted and mapped by the
  // backend; each request cycles one through an unmap/reshare/map churn.
  DomainState* fe = domain(frontend);
  int taken = 0;
  for (auto it = fe->pages.rbegin(); it != fe->pages.rend() && taken < 2;
       ++it, ++taken)
    r.buffers.push_back(*it);
  rings.push_back(r);
  fe->frontends.push_back(r.ring_id);
  for (PageNum buf : rings.back().buffers) {
    vmm::grant_create(hv, domains, frontend, buf, backend);
    vmm::exec_hypercall(machine, hv, domains, backend, 0,
                        guests::HcOp::kGrantMap, {buf, 0, 0});
  }
}

void World::connect_net_ring(DomainId frontend, DomainId backend,
                             int device_source) {
  guests::Ring r;
  r.ring_id = static_cast<int>(rings.size());
  r.kind = guests::Ring::kNet;
  r.frontend = frontend;
  r.backend = backend;
  r.device_source = device_source;
  rings.push_back(r);
  domain(frontend)->frontends.push_back(r.ring_id);
}

World::World(const config::ScenarioConfig& scenario, std::uint64_t seed)
    : cfg(scenario),
      rcfg(scenario.recovery),
      run_seed(seed),
      rng(derive_seed(seed, 0x5157)) {
  rcfg.normalize();
  const int ncpus = cpu_count(cfg);
  machine = machine::make_machine(ncpus, kTotalPages);
  machine.watchdog.period_ms = cfg.detectors.watchdog_period_ms;
  machine.watchdog.hang_threshold_ms = cfg.detectors.watchdog_threshold_ms;

  hv.wal_enabled = rcfg.wal_page_count;
  for (PageNum p = 0; p < kTotalPages; ++p) {
    if (p < kReservedInitPages) {
      hv.heap.reserved_init_pages.insert(p);
      machine.page(p).owner = PageOwner::vmm();
    } else {
      hv.heap.free_pages.insert(p);
    }
  }
  hv.run_queues.assign(static_cast<std::size_t>(ncpus), {});
  for (CpuId c = 0; c < ncpus; ++c)
    hv.statics.stack_bottom.push_back(0xffff800000000000ULL +
                                      static_cast<std::uint64_t>(c) * 0x10000);
  hv.statics.apic_to_cpu = machine.ic.apic_to_cpu;
  hv.statics.domain_list = vmm::xmalloc(hv, machine, vmm::ObjKind::kDomainList);
  hv.statics.domain_hash = vmm::xmalloc(hv, machine, vmm::ObjKind::kDomainHash);
  hv.statics.m2p_table = vmm::xmalloc(hv, machine, vmm::ObjKind::kM2pTable);
  hv.statics.xmalloc_free_list =
      vmm::xmalloc(hv, machine, vmm::ObjKind::kFreeListHead);
  hv.statics.shared_page_tracker =
      vmm::xmalloc(hv, machine, vmm::ObjKind::kSharedPageTracker);
  hv.statics.timer_heap_root =
      vmm::xmalloc(hv, machine, vmm::ObjKind::kTimerHeapRoot);
  vmm::xmalloc(hv, machine, vmm::ObjKind::kIdleDomain);
  vmm::xmalloc(hv, machine, vmm::ObjKind::kHardwareInfo);
}

}  // namespace visorsim
