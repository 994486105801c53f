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

#include "visorsim/rvi.hpp"

#include <algorithm>

#include "visorsim/world.hpp"

namespace visorsim::rvi {

using guests::DomainRole;
using guests::DomainState;

// ---- pure store logic ------------------------------------------------------

XsResponse apply_xs_request(XenStoreState& xs, const XsRequest& req) {
  XsResponse resp;
  resp.req_id = req.req_id;
  switch (req.op) {
    case XsOp::kRead: {
      auto it = xs.tree.find(req.path);
      resp.ok = it != xs.tree.end();
      if (resp.ok) resp.value = it->second;
      break;
    }
    case XsOp::kWrite:
      xs.tree[req.path] = req.value;
      resp.ok = true;
      break;
    case XsOp::kRm: {
      // Removes the node and its subtree.
      auto it = xs.tree.lower_bound(req.path);
      while (it != xs.tree.end() &&
             it->first.compare(0, req.path.size(), req.path) == 0)
        it = xs.tree.erase(it);
      resp.ok = true;
      break;
    }
    case XsOp::kWatch: {
      auto& v = xs.watches[req.path];
      if (std::find(v.begin(), v.end(), req.from) == v.end())
        v.push_back(req.from);
      resp.ok = true;
      break;
    }
    case XsOp::kTxStart:
      xs.pending_tx.insert(req.tx_id);
      resp.ok = true;
      break;
    case XsOp::kTxEnd:
      xs.pending_tx.erase(req.tx_id);
      resp.ok = true;
      break;
  }
  return resp;
}

std::vector<WatchEvent> watches_fired(const XenStoreState& xs,
                                      const XsRequest& req) {
  std::vector<WatchEvent> out;
  if (req.op != XsOp::kWrite && req.op != XsOp::kRm) return out;
  for (const auto& [path, watchers] : xs.watches) {
    if (req.path.compare(0, path.size(), path) != 0) continue;
    for (DomainId d : watchers) out.push_back({d, path, req.path});
  }
  return out;
}

void xba_mirror_request(XbaState& xba, const XsRequest& req) {
  apply_xs_request(xba.replica, req);
  xba.xs_log.push_back({req, XsPhase::kReceived});
}

void xba_mark_phase(XbaState& xba, std::int64_t req_id, XsPhase phase) {
  for (auto& rec : xba.xs_log)
    if (rec.req.req_id == req_id && rec.phase < phase) rec.phase = phase;
}

void xba_log_vmop(XbaState& xba, const VmOpLogRecord& rec) {
  xba.vmop_log.push_back(rec);
}

void xba_advance_vmop(XbaState& xba, int op_id, VmOpStep step) {
  for (auto& rec : xba.vmop_log)
    if (rec.op_id == op_id && rec.step < step) rec.step = step;
}

bool replica_matches(const XbaState& xba, const XenStoreState& primary) {
  return xba.replica.tree == primary.tree;
}

// ---- orchestration ----------------------------------------------------------

namespace {

bool is_mutating(XsOp op) { return op != XsOp::kRead; }

DomainState* live_privvm(World& w) {
  DomainState* pv = w.domain(w.privvm_id);
  if (!pv || !pv->is_live() || pv->guest_panicked) return nullptr;
  return pv;
}

bool xba_active(World& w) {
  return w.cfg.topology.rvi_enabled && w.xba.available;
}

void crash_privvm_midway(World& w) {
  DomainState* pv = w.domain(w.privvm_id);
  if (!pv) return;
  pv->guest_panicked = true;
  pv->panic_reason = "PrivVM failed mid management operation";
  pv->status = guests::DomainStatus::kCrashed;
}

void fire_watches(World& w, const XsRequest& req) {
  for (const auto& ev : watches_fired(w.xenstore, req))
    w.watch_events.push_back(ev);
}

int source_for(World& w, DomainId dvm, const std::string& kind) {
  DomainState* d = w.domain(dvm);
  if (!d) return -1;
  CpuId cpu = d->vcpus[0].pinned_cpu;
  for (const auto& s : w.machine.ic.sources)
    if (s.bound_cpu == cpu && s.name.find(kind) != std::string::npos)
      return s.source_id;
  return -1;
}

}  // namespace

std::optional<XsResponse> xenstore_request(World& w, const XsRequest& in) {
  XsRequest req = in;
  if (req.req_id == 0) req.req_id = w.xenstore.next_req_id++;
  DomainState* pv = live_privvm(w);
  if (!pv) {
    w.xs_queued.push_back(req);
    w.xs_outstanding.insert(req.req_id);
    return std::nullopt;
  }
  w.xs_outstanding.insert(req.req_id);
  const bool mirror = is_mutating(req.op) && xba_active(w);
  if (mirror) xba_mirror_request(w.xba, req);
  XsResponse resp = apply_xs_request(w.xenstore, req);
  if (mirror) xba_mark_phase(w.xba, req.req_id, XsPhase::kApplied);
  w.xs_responses.push_back(resp);
  w.xs_outstanding.erase(req.req_id);
  if (mirror) xba_mark_phase(w.xba, req.req_id, XsPhase::kResponded);
  fire_watches(w, req);
  if (mirror) xba_mark_phase(w.xba, req.req_id, XsPhase::kComplete);
  return resp;
}

VmCreateResult vm_create_transactional(World& w, const std::string& name,
                                       int crash_before_step,
                                       CpuId preferred_cpu) {
  VmCreateResult res;
  res.attempted = true;
  DomainState* pv = live_privvm(w);
  if (!pv || w.hv.create_blocked) return res;
  const bool log = xba_active(w);
  const int op_id = log ? w.xba.next_op_id++ : 0;
  res.op_id = op_id;

  auto crash_at = [&](int step) {
    if (crash_before_step == step) {
      crash_privvm_midway(w);
      res.crashed_midway = true;
      return true;
    }
    return false;
  };

  if (crash_at(0)) return res;
  if (log) xba_log_vmop(w.xba, {op_id, false, name, kNoDomain, VmOpStep::kStart});

  if (crash_at(1)) return res;
  DomainId vm = w.create_domain(DomainRole::kAppVm,
                                w.cfg.topology.fv_appvms
                                    ? guests::VmProfile::kFv
                                    : guests::VmProfile::kPv,
                                name, 64, guests::WorkloadKind::kIdle,
                                preferred_cpu);
  res.vm = vm;
  if (log) {
    for (auto& rec : w.xba.vmop_log)
      if (rec.op_id == op_id) rec.vm_id = vm;
    xba_advance_vmop(w.xba, op_id, VmOpStep::kBuilt);
  }

  if (crash_at(2)) return res;
  XsRequest write;
  write.op = XsOp::kWrite;
  write.from = w.privvm_id;
  write.path = "/vm/" + name;
  write.value = "config";
  xenstore_request(w, write);
  if (log) xba_advance_vmop(w.xba, op_id, VmOpStep::kXsWritten);

  if (crash_at(3)) return res;
  // Frontend/backend connection for VMs that get a device path.
  if (name == "appvm_blk") {
    DomainId backend = w.privvm_id;
    for (auto& d : w.domains)
      if (d.role == DomainRole::kDvm && d.is_live() && !d.guest_panicked) {
        backend = d.domain_id;
        break;
      }
    if (!w.dvm_pairs.empty()) backend = w.dvm_pairs[0].active;
    int src = source_for(w, backend, "blk");
    if (src >= 0) w.connect_blk_ring(vm, backend, src);
  }
  if (log) xba_advance_vmop(w.xba, op_id, VmOpStep::kConnected);

  if (crash_at(4)) return res;
  if (log) xba_advance_vmop(w.xba, op_id, VmOpStep::kCommitted);

  if (crash_at(5)) return res;
  if (log) xba_advance_vmop(w.xba, op_id, VmOpStep::kResponded);
  w.vmop_responses.push_back({op_id, true});
  res.ok = true;
  return res;
}

std::optional<DomainId> privvm_recover(World& w) {
  if (!w.cfg.topology.rvi_enabled) return std::nullopt;
  if (!w.xba.available) return std::nullopt;  // blocked until DVM_XS is back
  DomainId old_id = w.privvm_id;
  guests::DomainState* old_dom = w.domain(old_id);
  CpuId cpu = old_dom ? old_dom->vcpus[0].pinned_cpu : -1;

  // Release the failed instance's resources and boot pristine images.
  w.destroy_domain(old_id);
  DomainId fresh = w.create_domain(DomainRole::kPrivVm, guests::VmProfile::kPv,
                                   "privvm", 128, guests::WorkloadKind::kIdle,
                                   cpu);
  w.privvm_id = fresh;
  w.hv.statics.domain0 = w.domain(fresh)->domain_obj;

  // Up-to-date XenStore and watch registrations come from the XBA.
  w.xenstore.tree = w.xba.replica.tree;
  w.xenstore.watches = w.xba.replica.watches;
  w.xenstore.pending_tx = w.xba.replica.pending_tx;
  w.xenstore.next_req_id =
      std::max(w.xenstore.next_req_id, w.xba.replica.next_req_id);

  // Replay the request log: every request gets applied, answered, and its
  // watches fired exactly through to completion.
  for (auto& rec : w.xba.xs_log) {
    if (rec.phase >= XsPhase::kComplete) continue;
    if (rec.phase < XsPhase::kApplied) {
      apply_xs_request(w.xenstore, rec.req);
      rec.phase = XsPhase::kApplied;
    }
    if (rec.phase < XsPhase::kResponded) {
      XsResponse resp;
      resp.req_id = rec.req.req_id;
      resp.ok = true;
      w.xs_responses.push_back(resp);
      w.xs_outstanding.erase(rec.req.req_id);
      rec.phase = XsPhase::kResponded;
    }
    fire_watches(w, rec.req);
    rec.phase = XsPhase::kComplete;
  }

  // VM management operations complete or roll back, never half-done.
  for (auto& rec : w.xba.vmop_log) {
    if (rec.step == VmOpStep::kResponded) continue;
    if (rec.step >= VmOpStep::kCommitted) {
      w.vmop_responses.push_back({rec.op_id, true});
      rec.step = VmOpStep::kResponded;
      continue;
    }
    if (rec.vm_id != kNoDomain) w.destroy_domain(rec.vm_id);
    XsRequest rm;
    rm.op = XsOp::kRm;
    rm.from = fresh;
    rm.path = "/vm/" + rec.vm_name;
    xenstore_request(w, rm);
    w.vmop_responses.push_back({rec.op_id, false});
    rec.step = VmOpStep::kResponded;
  }

  // Outstanding requests queued while the PrivVM was down.
  std::deque<XsRequest> queued;
  std::swap(queued, w.xs_queued);
  for (const auto& req : queued) xenstore_request(w, req);

  for (auto& r : w.rings)
    if (r.backend == old_id) r.backend = fresh;
  return fresh;
}

std::optional<DvmFailureEvent> detect_dvm_failure(World& w, DomainId dvm) {
  DomainState* d = w.domain(dvm);
  if (!d) return std::nullopt;
  if (d->guest_panicked)
    return DvmFailureEvent{dvm, DvmFailureEvent::Kind::kCrashHypercall, w.now};
  if (d->status == guests::DomainStatus::kDestroyed)
    return DvmFailureEvent{dvm, DvmFailureEvent::Kind::kVmmKill, w.now};
  if (d->guest_hung) {
    const SimTime stall = w.cfg.detectors.dvm_ring_stall_scans *
                          w.cfg.detectors.dvm_scan_period_ms;
    for (const auto& r : w.rings) {
      if (r.backend != dvm) continue;
      for (const auto& [id, req] : r.in_flight)
        if (w.now - req.issued_ms >= stall)
          return DvmFailureEvent{dvm, DvmFailureEvent::Kind::kRingStall, w.now};
    }
  }
  return std::nullopt;
}

void dvm_failover(World& w, DvmPair& pair) {
  DomainState* spare = w.domain(pair.spare);
  if (!spare || !spare->is_live() || spare->guest_panicked) return;
  DomainId failed = pair.active;
  for (auto& r : w.rings) {
    if (r.backend != failed) continue;
    r.backend = pair.spare;
    std::string kind = r.kind == guests::Ring::kBlk ? "blk" : "net";
    int src = source_for(w, pair.spare, kind);
    if (src >= 0) r.device_source = src;
    // In-flight requests are re-driven by the frontend driver timeouts.
  }
  pair.active = pair.spare;
  pair.spare = kNoDomain;
  pair.pending_destroy = failed;
  if (pair.hosts_xba) {
    // The replica and op log live on the pair's mirrored disk; the new
    // active serves them, re-seeded from the primary when it is alive.
    DomainState* pv = live_privvm(w);
    if (pv) w.xba.replica = w.xenstore;
    w.xba.available = true;
  }
}

DvmReplaceResult dvm_replace(World& w, DvmPair& pair,
                             bool destroy_before_reinit) {
  DvmReplaceResult res;
  DomainState* pv = live_privvm(w);
  if (!pv) {
    res.deferred = true;
    return res;
  }
  DomainId failed = pair.pending_destroy;
  if (failed != kNoDomain) {
    vmm::exec_hypercall(w.machine, w.hv, w.domains, w.privvm_id, 0,
                        guests::HcOp::kVmPause, {failed, 0, 0});
  }
  PageNum dma_victim = -1;
  if (destroy_before_reinit && failed != kNoDomain) {
    // Ordering violation: the failed DVM's memory is released while its
    // device can still DMA into it.
    DomainState* fd = w.domain(failed);
    dma_victim = fd && !fd->pages.empty() ? *fd->pages.begin() : -1;
    w.destroy_domain(failed);
    pair.pending_destroy = kNoDomain;
  }
  guests::DomainState* failed_dom =
      failed != kNoDomain ? w.domain(failed) : nullptr;
  CpuId failed_cpu = failed_dom ? failed_dom->vcpus[0].pinned_cpu : -1;
  DomainId fresh = w.create_domain(DomainRole::kDvm, guests::VmProfile::kPv,
                                   "dvm_new", 128, guests::WorkloadKind::kIdle,
                                   failed_cpu);
  if (dma_victim >= 0) {
    // The in-flight DMA lands after the page was released (and possibly
    // reallocated): whoever owns it now sees clobbered contents.
    w.machine.page_content[static_cast<std::size_t>(dma_victim)] =
        0xdeadbeefdeadbeefULL;
    res.dma_corruption = true;
  }
  // Booting and re-initializing devices takes time; the caller flips the
  // new instance to running (and destroys the failed one) when done.
  w.domain(fresh)->status = guests::DomainStatus::kPaused;
  res.ok = true;
  res.new_dvm = fresh;
  return res;
}

}  // namespace visorsim::rvi
