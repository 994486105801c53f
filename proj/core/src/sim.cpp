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

#include "visorsim/sim.hpp"

#include <algorithm>

#include "visorsim/latency.hpp"

namespace visorsim::sim {

using config::ScenarioConfig;
using config::TopologyKind;
using guests::DomainRole;
using guests::DomainState;
using guests::HcOp;
using guests::VmProfile;
using guests::WorkloadKind;
using guests::WorkloadStep;

namespace {

constexpr SimTime kRetryPollMs = 50;
constexpr long long kEventBudget = 4'000'000;

// ---- Workload script construction -----------------------------------------

void build_blk_script(DomainState& d, int ops, SimTime period,
                      std::uint64_t seed) {
  auto& w = d.workload;
  w.kind = WorkloadKind::kBlk;
  for (int k = 0; k < ops; ++k) {
    WorkloadStep compute;
    compute.kind = WorkloadStep::kCompute;
    compute.duration_ms = period;
    w.script.push_back(compute);
    WorkloadStep io;
    io.kind = WorkloadStep::kIo;
    io.io_op = k % 4;  // create / write / copy / remove cycle
    io.object = (k % 16);
    io.checksum = mix64(seed ^ static_cast<std::uint64_t>(k));
    w.script.push_back(io);
  }
  // Reference image: replay the op stream.
  for (const auto& s : w.script) {
    if (s.kind != WorkloadStep::kIo) continue;
    if (s.io_op == 3)
      w.reference_objects.erase(s.object);
    else
      w.reference_objects[s.object] = s.checksum;
  }
}

void build_net_script(DomainState& d, SimTime duration) {
  auto& w = d.workload;
  w.kind = WorkloadKind::kNet;
  WorkloadStep s;
  s.kind = WorkloadStep::kCompute;
  s.duration_ms = duration;
  w.script.push_back(s);
}

void build_unix_script(DomainState& d, const config::WorkloadConfig& wc) {
  auto& w = d.workload;
  w.kind = WorkloadKind::kUnix;
  // Pages cycled through pin/unpin; skip the hypercall page.
  std::vector<PageNum> pages(std::next(d.pages.begin()), d.pages.end());
  const bool pv = d.profile == VmProfile::kPv;
  for (int k = 0; k < wc.unix_iterations; ++k) {
    PageNum pg = pages[static_cast<std::size_t>(k) % pages.size()];
    if (pv) {
      WorkloadStep pin;
      pin.kind = WorkloadStep::kHypercall;
      pin.hc_op = HcOp::kPageTablePin;
      pin.hc_args = {pg, 0, 0};
      w.script.push_back(pin);
    }
    WorkloadStep compute;
    compute.kind = WorkloadStep::kCompute;
    compute.duration_ms = wc.unix_compute_ms;
    w.script.push_back(compute);
    WorkloadStep tw;
    tw.kind = WorkloadStep::kTimerWait;
    tw.duration_ms = wc.unix_timer_wait_ms;
    w.script.push_back(tw);
    if (pv) {
      WorkloadStep unpin;
      unpin.kind = WorkloadStep::kHypercall;
      unpin.hc_op = HcOp::kPageTableUnpin;
      unpin.hc_args = {pg, 0, 0};
      w.script.push_back(unpin);
    }
  }
}

void build_idle_script(DomainState& d, WorkloadKind kind, SimTime duration) {
  auto& w = d.workload;
  w.kind = kind;
  WorkloadStep s;
  s.kind = WorkloadStep::kCompute;
  s.duration_ms = duration;
  w.script.push_back(s);
}

// ---- Engine ----------------------------------------------------------------

class Engine {
 public:
  explicit Engine(World& w) : w_(w) {}

  void run() {
    long long budget = kEventBudget;
    while (!w_.run_done && !w_.queue.empty()) {
      if (--budget <= 0)
        throw SimInvariantError("event budget exhausted; runaway simulation");
      Event e = *w_.queue.begin();
      w_.queue.erase(w_.queue.begin());
      w_.now = e.at;
      vmm::advance_time(w_.hv, w_.now);
      check_time_monotone();
      w_.trace.emit(e);
      events_++;
      dispatch(e);
    }
    if (!w_.run_done) end_run();
  }

  long long events() const { return events_; }

 private:
  World& w_;
  long long events_ = 0;

  void check_time_monotone() {
    SimTime t = vmm::time_now(w_.hv);
    if (t < w_.last_time_seen && !w_.time_regressed) w_.time_violation = true;
    w_.last_time_seen = std::max(t, w_.last_time_seen);
  }

  // -- generic helpers -------------------------------------------------

  bool defer_if_paused(const Event& e) {
    if (!w_.in_recovery_pause()) return false;
    w_.schedule(w_.paused_until, e.kind, e.a, e.b, e.c);
    return true;
  }

  bool defer_if_stalled(const Event& e, const DomainState& d) {
    if (w_.domain_can_run(d)) return false;
    if (!d.is_live() || w_.whole_machine_reset) return true;  // drop
    w_.schedule(w_.now + kRetryPollMs, e.kind, e.a, e.b, e.c);
    return true;
  }

  void deliver_and_wake(DomainId dom, int virq) {
    vmm::deliver_virq(w_.hv, w_.domains, dom, virq);
    w_.schedule(w_.now, kEvVirqHandle, dom);
  }

  void end_run() {
    w_.run_done = true;
  }

  void guest_panic(DomainState& d, const std::string& why) {
    if (d.guest_panicked) {
      check_settled();
      return;
    }
    d.guest_panicked = true;
    d.panic_reason = why;
    d.status = guests::DomainStatus::kCrashed;
    if (d.role == DomainRole::kDvm)
      w_.schedule(w_.now, kEvDvmFailure, d.domain_id, 0);
    if (d.role == DomainRole::kPrivVm && w_.cfg.topology.rvi_enabled)
      w_.schedule(w_.now, kEvPrivVmFailure);
    check_settled();
  }

  // Run can end early once every workload and the create check resolved.
  void check_settled() {
    if (w_.run_done || w_.in_recovery_pause()) return;
    if (w_.cfg.topology.kind == TopologyKind::k3AppVm && !w_.create_attempted &&
        !w_.whole_machine_reset)
      return;
    // 5AppVM runs wait for the destroy/recreate probe at fault + ~50s.
    if (w_.cfg.topology.kind == TopologyKind::k5AppVm && w_.fault &&
        !w_.node_restarted && !w_.create_attempted && !w_.whole_machine_reset)
      return;
    for (const auto& c : w_.lvs_clients)
      if (c.sent < c.total && !w_.whole_machine_reset) return;
    for (const auto& d : w_.domains) {
      if (d.role != DomainRole::kAppVm) continue;
      if (!d.is_live()) continue;
      if (d.status == guests::DomainStatus::kPaused) return;
      if (d.workload.kind == WorkloadKind::kIdle) continue;
      if (!d.workload.completed && !d.guest_panicked && !d.guest_hung) {
        // Still running, or wedged behind a stuck CPU: either way the run
        // is not settled (a wedged CPU is about to trip the watchdog).
        return;
      }
    }
    if (w_.net_deadline_ms > 0 && w_.now < w_.net_deadline_ms &&
        !w_.whole_machine_reset)
      return;
    end_run();
  }

  // -- dispatch ---------------------------------------------------------

  void dispatch(const Event& e) {
    switch (e.kind) {
      case kEvWorkloadStep: return on_workload_step(e);
      case kEvVirqHandle: return on_virq_handle(e);
      case kEvDeviceDone: return on_device_done(e);
      case kEvNetArrival: return on_net_arrival(e);
      case kEvWatchdog: return on_watchdog(e);
      case kEvTimerCheck: return on_timer_check(e);
      case kEvTimeoutScan: return on_timeout_scan(e);
      case kEvFaultTrigger: return on_fault_trigger(e);
      case kEvPanic: return on_detect(detect::FailureKind::kCrash,
                                      static_cast<CpuId>(e.a),
                                      "hypervisor panic");
      case kEvBootCreateCheck: return on_boot_create_check(e);
      case kEvRunEnd: return end_run();
      case kEvResume: return on_resume(e);
      case kEvDvmScan: return on_dvm_scan(e);
      case kEvDvmFailure: return on_dvm_failure(e);
      case kEvPrivVmFailure: return on_privvm_failure(e);
      case kEvHostmon: return on_hostmon(e);
      case kEvLvsRequest: return on_lvs_request(e);
      case kEvRecreateCheck: return on_recreate_check(e);
      case kEvDvmReplaceDone: return on_dvm_replace_done(e);
      case kEvMgmtUnpause: return on_mgmt_unpause(e);
      default:
        throw SimInvariantError("unknown event kind");
    }
  }

  // -- workload ----------------------------------------------------------

  void on_workload_step(const Event& e) {
    DomainState* d = w_.domain(static_cast<DomainId>(e.a));
    if (!d || !d->is_live() || d->guest_panicked) return;
    if (defer_if_paused(e) || defer_if_stalled(e, *d)) return;
    auto action = guests::step_workload(*d, w_.now);
    switch (action.kind) {
      case guests::WorkloadAction::kDone:
        check_settled();
        return;
      case guests::WorkloadAction::kCompute:
        w_.schedule(w_.now + action.step.duration_ms, kEvWorkloadStep,
                    d->domain_id);
        return;
      case guests::WorkloadAction::kTimerWait: {
        auto res = vmm::exec_hypercall(
            w_.machine, w_.hv, w_.domains, d->domain_id, 0, HcOp::kSetTimer,
            {w_.now + action.step.duration_ms, 0, 0});
        if (res.status == vmm::HcResult::kOk) {
          d->waiting_timer = true;
          d->timer_deadline = w_.now + action.step.duration_ms;
          w_.schedule(d->timer_deadline, kEvTimerCheck);
        } else {
          d->workload.hypercall_failures++;
          w_.schedule(w_.now + 1, kEvWorkloadStep, d->domain_id);
        }
        return;
      }
      case guests::WorkloadAction::kHypercall: {
        auto res = vmm::exec_hypercall(w_.machine, w_.hv, w_.domains,
                                       d->domain_id, 0, action.step.hc_op,
                                       action.step.hc_args);
        if (res.status == vmm::HcResult::kSpin) {
          // Spinning inside the hypervisor: this CPU makes no further
          // progress and the hang detector will notice.
          w_.machine.cpu(d->vcpus[0].pinned_cpu).stuck_in_vmm = true;
          return;
        }
        if (res.status == vmm::HcResult::kError)
          d->workload.hypercall_failures++;
        w_.schedule(w_.now + 1, kEvWorkloadStep, d->domain_id);
        return;
      }
      case guests::WorkloadAction::kIo:
        issue_io(*d, action.step);
        return;
      case guests::WorkloadAction::kNone:
        return;
    }
  }

  void issue_io(DomainState& d, const WorkloadStep& step) {
    int rid = -1;
    for (int r : d.frontends)
      if (w_.ring(r).kind == guests::Ring::kBlk) rid = r;
    if (rid < 0) {
      d.workload.io_errors++;
      w_.schedule(w_.now + 1, kEvWorkloadStep, d.domain_id);
      return;
    }
    auto& r = w_.ring(rid);
    guests::IoRequest req;
    req.req_id = r.next_req_id++;
    req.op = step.io_op;
    req.object = step.object;
    req.checksum = step.checksum;
    req.issued_ms = w_.now;
    r.in_flight[req.req_id] = req;
    d.workload.writes_issued++;

    // Grant churn: recycle one buffer page through unmap/reshare/map.
    DomainState* be = w_.domain(r.backend);
    if (be && w_.domain_can_run(*be) && !r.buffers.empty()) {
      PageNum buf = r.buffers[r.churn_idx++ % r.buffers.size()];
      vmm::exec_hypercall(w_.machine, w_.hv, w_.domains, r.backend, 0,
                          HcOp::kGrantUnmap, {buf, 0, 0});
      if (!vmm::grant_create(w_.hv, w_.domains, d.domain_id, buf, r.backend)) {
        guest_panic(d, "re-shared page with stale mapped grant entry");
        return;
      }
      vmm::exec_hypercall(w_.machine, w_.hv, w_.domains, r.backend, 0,
                          HcOp::kGrantMap, {buf, 0, 0});
      // The guest writes its payload through the shared buffer.
      w_.machine.page_content[static_cast<std::size_t>(buf)] = req.checksum;
    }
    r.pending_backend.push_back(req.req_id);
    deliver_and_wake(r.backend, vmm::virq_ring_notify(r.ring_id));
  }

  void on_virq_handle(const Event& e) {
    DomainState* d = w_.domain(static_cast<DomainId>(e.a));
    if (!d || !d->is_live() || d->guest_panicked) return;
    if (defer_if_paused(e) || defer_if_stalled(e, *d)) return;
    std::deque<int> virqs;
    std::swap(virqs, d->virq_queue);
    for (int virq : virqs) handle_virq(*d, virq);
  }

  void handle_virq(DomainState& d, int virq) {
    if (virq == vmm::kVirqTimer) {
      if (d.waiting_timer) {
        d.waiting_timer = false;
        w_.schedule(w_.now, kEvWorkloadStep, d.domain_id);
      }
      return;
    }
    if (virq >= 3000) {  // device interrupt forwarded to the backend
      auto& r = w_.ring(virq - 3000);
      while (!r.completed_reqs.empty()) {
        std::int64_t id = r.completed_reqs.front();
        r.completed_reqs.pop_front();
        r.responses.push_back(id);
        deliver_and_wake(r.frontend, vmm::virq_ring_response(r.ring_id));
      }
      return;
    }
    if (virq >= 2000) {  // response to the frontend
      auto& r = w_.ring(virq - 2000);
      while (!r.responses.empty()) {
        std::int64_t id = r.responses.front();
        r.responses.pop_front();
        auto it = r.in_flight.find(id);
        if (it == r.in_flight.end()) continue;  // duplicate after resend
        const auto& req = it->second;
        if (req.op == 3)
          d.workload.objects.erase(req.object);
        else
          d.workload.objects[req.object] = req.checksum;
        d.workload.writes_acked++;
        r.in_flight.erase(it);
        w_.schedule(w_.now, kEvWorkloadStep, d.domain_id);
      }
      return;
    }
    if (virq >= 1000) {  // frontend notified the backend
      auto& r = w_.ring(virq - 1000);
      while (!r.pending_backend.empty()) {
        std::int64_t id = r.pending_backend.front();
        r.pending_backend.pop_front();
        if (!r.in_flight.count(id)) continue;
        w_.schedule(w_.now + w_.cfg.workloads.blk_service_ms, kEvDeviceDone,
                    r.ring_id, id);
      }
      return;
    }
  }

  void on_device_done(const Event& e) {
    if (w_.whole_machine_reset) return;
    if (defer_if_paused(e)) return;  // line stays asserted across the reboot
    auto& r = w_.ring(static_cast<int>(e.a));
    std::int64_t id = e.b;
    if (!r.in_flight.count(id)) return;
    r.completed_reqs.push_back(id);
    if (machine::raise_interrupt(w_.machine, r.device_source) !=
        machine::DeliveryOutcome::kDelivered)
      return;  // blocked or masked; driver timeouts will resend
    const auto& src = w_.machine.source(r.device_source);
    auto& cpu = w_.machine.cpu(src.bound_cpu);
    if (cpu.stuck_in_vmm || cpu.halted) return;
    auto vec = machine::begin_service(w_.machine, src.bound_cpu);
    if (!vec) return;
    deliver_and_wake(r.backend, vmm::virq_device(r.ring_id));
    machine::eoi(w_.machine, src.bound_cpu, *vec, w_.now);
  }

  void on_net_arrival(const Event& e) {
    int rid = static_cast<int>(e.a);
    if (w_.now + w_.cfg.workloads.net_interval_ms < w_.net_deadline_ms)
      w_.schedule(w_.now + w_.cfg.workloads.net_interval_ms, kEvNetArrival,
                  rid);
    if (w_.whole_machine_reset || w_.in_recovery_pause()) return;
    auto& r = w_.ring(rid);
    DomainState* fe = w_.domain(r.frontend);
    DomainState* be = w_.domain(r.backend);
    if (!fe || !be || !w_.domain_can_run(*fe) || !w_.domain_can_run(*be))
      return;
    if (machine::raise_interrupt(w_.machine, r.device_source) !=
        machine::DeliveryOutcome::kDelivered)
      return;
    const auto& src = w_.machine.source(r.device_source);
    auto& cpu = w_.machine.cpu(src.bound_cpu);
    if (cpu.stuck_in_vmm || cpu.halted) {
      // The vector stays pending on the wedged CPU and the level source
      // stays blocked; only the enhanced acknowledge pass can drain it.
      return;
    }
    auto vec = machine::begin_service(w_.machine, src.bound_cpu);
    if (!vec) return;
    machine::eoi(w_.machine, src.bound_cpu, *vec, w_.now);
    if (fe->drop_virqs > 0) {
      fe->drop_virqs--;
      return;
    }
    // Echo delivered, turned around, and received at the remote host.
    w_.net_rx.push_back(w_.now);
  }

  void on_watchdog(const Event& e) {
    if (defer_if_paused(e)) return;
    if (w_.whole_machine_reset) return;
    auto hangs = machine::watchdog_tick(w_.machine, w_.now);
    w_.schedule(w_.now + w_.machine.watchdog.period_ms, kEvWatchdog);
    if (!hangs.empty())
      on_detect(detect::FailureKind::kHang, hangs.front().cpu,
                "watchdog: counter frozen for threshold");
  }

  void on_timer_check(const Event& e) {
    if (defer_if_paused(e)) return;
    auto fired = vmm::fire_due_timers(w_.hv, w_.machine, w_.now);
    for (const auto& f : fired) deliver_and_wake(f.domain, vmm::kVirqTimer);
  }

  void on_timeout_scan(const Event& e) {
    DomainState* d = w_.domain(static_cast<DomainId>(e.a));
    if (!d || !d->is_live()) return;
    w_.schedule(w_.now + w_.cfg.detectors.timeout_scan_period_ms,
                kEvTimeoutScan, d->domain_id);
    if (w_.in_recovery_pause() || !w_.domain_can_run(*d)) return;
    auto resends = guests::driver_timeout_scan(
        *d, w_.rings, w_.now, w_.cfg.workloads.blk_timeout_ms,
        w_.cfg.workloads.blk_retry_budget);
    for (const auto& ra : resends) {
      auto& r = w_.ring(ra.ring_id);
      auto it = r.in_flight.find(ra.req_id);
      if (it == r.in_flight.end()) continue;
      if (ra.budget_exhausted) {
        r.in_flight.erase(it);
        d->workload.io_errors++;
        w_.schedule(w_.now + 1, kEvWorkloadStep, d->domain_id);
        continue;
      }
      it->second.resends++;
      it->second.issued_ms = w_.now;
      d->workload.timeout_resends++;
      r.pending_backend.push_back(ra.req_id);
      deliver_and_wake(r.backend, vmm::virq_ring_notify(r.ring_id));
    }
    // Guest kernels also re-arm timer waits whose virq never arrived.
    if (d->waiting_timer &&
        w_.now > d->timer_deadline +
                     2 * w_.cfg.detectors.timeout_scan_period_ms) {
      auto res = vmm::exec_hypercall(w_.machine, w_.hv, w_.domains,
                                     d->domain_id, 0, HcOp::kSetTimer,
                                     {w_.now + 10, 0, 0});
      if (res.status == vmm::HcResult::kOk) {
        d->timer_deadline = w_.now + 10;
        w_.schedule(d->timer_deadline, kEvTimerCheck);
      }
    }
  }

  // -- fault injection -----------------------------------------------------

  void on_fault_trigger(const Event&) {
    if (w_.run_done || !w_.fault) return;
    const auto& spec = *w_.fault;
    w_.injection_attempts++;
    const faults::EffectMixture* mix = nullptr;
    for (const auto& c : w_.cfg.catalog.classes)
      if (c.fault_class == spec.fault_class) mix = &c.mixture;
    faults::FaultWorld fw{w_.machine, w_.hv, w_.domains, w_.rings, mix,
                          &w_.cfg.catalog.sites};
    if (spec.target != faults::InjectTarget::kVmm) {
      apply_component_fault(spec);
      return;
    }
    w_.corruption = faults::apply_fault(fw, spec, w_.now);
    const auto& rec = *w_.corruption;
    switch (rec.manifestation) {
      case faults::CorruptionRecord::Manifestation::kNone:
        break;
      case faults::CorruptionRecord::Manifestation::kSilent:
        if (rec.silent_effect ==
            faults::CorruptionRecord::SilentEffect::kWholeReset) {
          w_.whole_machine_reset = true;
          for (auto& d : w_.domains)
            if (d.is_live()) {
              d.guest_panicked = true;
              d.panic_reason = "whole-machine reset";
            }
          end_run();
        }
        break;
      case faults::CorruptionRecord::Manifestation::kCrash:
        w_.schedule(w_.now, kEvPanic, rec.cpu);
        break;
      case faults::CorruptionRecord::Manifestation::kHang:
        break;  // organic: frozen watchdog counter
    }
    if (w_.cfg.topology.kind == TopologyKind::k5AppVm)
      w_.schedule(w_.now + w_.cfg.workloads.lvs_recreate_after_ms,
                  kEvRecreateCheck);
  }

  // RVI-wide campaigns inject into the DVM and PrivVM too; effects land in
  // the guest kernel rather than the hypervisor.
  void apply_component_fault(const faults::FaultSpec& spec) {
    Rng rng(derive_seed(spec.seed, 0xfa03));
    DomainState* victim = nullptr;
    for (auto& d : w_.domains) {
      if (spec.target == faults::InjectTarget::kDvm &&
          d.role == DomainRole::kDvm && d.is_live()) {
        victim = &d;
        break;
      }
      if (spec.target == faults::InjectTarget::kPrivVm &&
          d.role == DomainRole::kPrivVm && d.is_live()) {
        victim = &d;
        break;
      }
    }
    faults::CorruptionRecord rec;
    rec.fault_class = spec.fault_class;
    if (!victim) {
      w_.corruption = rec;
      return;
    }
    const double weights[] = {0.30, 0.40, 0.15, 0.15};  // none/crash/hang/silent
    switch (rng.weighted(weights)) {
      case 0:
        rec.manifestation = faults::CorruptionRecord::Manifestation::kNone;
        break;
      case 1:
        rec.manifestation = faults::CorruptionRecord::Manifestation::kCrash;
        rec.silent_victim = victim->domain_id;
        guest_panic(*victim, "kernel panic from injected fault");
        break;
      case 2:
        rec.manifestation = faults::CorruptionRecord::Manifestation::kHang;
        rec.silent_victim = victim->domain_id;
        victim->guest_hung = true;
        if (victim->role == DomainRole::kPrivVm) victim->xenstored_gone = true;
        break;
      default:
        rec.manifestation = faults::CorruptionRecord::Manifestation::kSilent;
        rec.silent_victim = victim->domain_id;
        if (victim->role == DomainRole::kPrivVm) {
          victim->xenstored_gone = true;
          rec.silent_effect =
              faults::CorruptionRecord::SilentEffect::kCreateBlock;
        } else {
          // Served AppVM's data corrupted through the failed driver path.
          rec.silent_effect =
              faults::CorruptionRecord::SilentEffect::kDataCorrupt;
          for (auto& r : w_.rings)
            if (r.backend == victim->domain_id) {
              if (DomainState* fe = w_.domain(r.frontend)) {
                fe->workload.io_errors++;
                break;
              }
            }
        }
        break;
    }
    w_.corruption = rec;
    if (w_.cfg.topology.kind == TopologyKind::k5AppVm)
      w_.schedule(w_.now + w_.cfg.workloads.lvs_recreate_after_ms,
                  kEvRecreateCheck);
  }

  // -- detection and the recovery pipeline ---------------------------------

  void on_detect(detect::FailureKind kind, CpuId cpu, const std::string& why) {
    if (w_.run_done) return;
    if (w_.detection) {
      // One recovery per run: a second detected hypervisor failure means
      // the recovered instance died.
      w_.vmm_failed_post_recovery = true;
      end_run();
      return;
    }
    w_.detection = detect::DetectedFailure{kind, cpu, w_.now, why};
    w_.detected_component = "vmm";
    if (!w_.cfg.recovery_enabled) {
      for (auto& d : w_.domains)
        if (d.is_live()) d.guest_hung = true;
      end_run();
      return;
    }
    run_recovery();
  }

  void run_recovery() {
    w_.recovery_ran = true;
    const faults::CorruptionRecord* rec =
        w_.corruption ? &*w_.corruption : nullptr;
    auto handler = recover::failure_handler(w_.machine, w_.hv, w_.domains,
                                            w_.rcfg, *w_.detection, rec);
    if (!handler.ok) {
      w_.handler_or_reboot_failed = true;
      w_.recovery_failure_detail = handler.failure;
      end_run();
      return;
    }
    latency::LatencyOptions lopts{w_.rcfg.skip_scrub, w_.rcfg.skip_nmi_check};
    auto lat = latency::recovery_latency(w_.cfg.latency, lopts);
    w_.recovery_latency_ms = lat.total_ms;
    w_.paused_until = w_.now + lat.total_ms;
    w_.recovery_end_ms = w_.paused_until;

    if (w_.capture_preservation) w_.pres_before = snapshot_domains();
    auto reboot = recover::microreboot(
        w_.machine, w_.hv, w_.domains, handler.preserved, w_.rcfg, rec,
        !w_.cfg.diagnostics.disable_time_restore);
    if (!reboot.ok) {
      w_.handler_or_reboot_failed = true;
      w_.recovery_failure_detail = reboot.failure;
      end_run();
      return;
    }
    if (w_.capture_preservation) w_.pres_after = snapshot_domains();
    w_.leaked_pages = reboot.leaked_pages;
    w_.time_regressed = reboot.time_regressed;
    if (!reboot.poisoned_dispatch.empty()) {
      // Corrupted saved registers: the new instance crashes on the first
      // dispatch of that VCPU.
      w_.handler_or_reboot_failed = true;
      w_.recovery_failure_detail =
          "crash while scheduling a VCPU with corrupted saved registers";
      end_run();
      return;
    }
    recover::retry_pending_hypercalls(w_.domains, w_.rcfg);
    for (auto& d : w_.domains)
      if (d.role == DomainRole::kDvm && d.guest_panicked)
        w_.schedule(w_.paused_until, kEvDvmFailure, d.domain_id, 0);
    w_.schedule(w_.paused_until, kEvResume);
  }

  PreservationSnapshot snapshot_domains() {
    PreservationSnapshot s;
    for (const auto& d : w_.domains) {
      if (!d.is_live()) continue;
      for (PageNum p : d.pages) {
        s.content[p] = w_.machine.page_content[static_cast<std::size_t>(p)];
        s.info[p] = w_.machine.page_info[static_cast<std::size_t>(p)];
      }
    }
    return s;
  }

  void on_resume(const Event&) {
    // Fresh watchdog state for the new instance.
    for (auto& wc : w_.machine.watchdog.cpus) {
      wc.counter = 1;
      wc.last_counter = 1;
      wc.last_change_ms = w_.now;
    }
    for (CpuId c = 0; c < static_cast<int>(w_.machine.cpus.size()); ++c)
      vmm::schedule(w_.hv, w_.domains, c);

    // Re-execute interrupted hypercalls before guests continue.
    if (w_.rcfg.hypercall_retry) {
      for (auto& d : w_.domains) {
        if (!d.is_live()) continue;
        for (auto& vc : d.vcpus) {
          if (!vc.pending_hypercall) continue;
          HcOp op = vc.pending_hypercall->op;
          std::int64_t target = vc.pending_hypercall->args[0];
          auto res = vmm::retry_hypercall(w_.machine, w_.hv, w_.domains,
                                          d.domain_id, vc.vcpu_id);
          if (res.status == vmm::HcResult::kSpin) {
            w_.machine.cpu(vc.pinned_cpu).stuck_in_vmm = true;
          } else if (res.status == vmm::HcResult::kOk &&
                     op == HcOp::kVmPause) {
            // The management operation that paused the domain completes
            // and releases it.
            w_.schedule(w_.now + 10, kEvMgmtUnpause, target);
          } else if (res.status == vmm::HcResult::kError &&
                     op == HcOp::kPageTablePin) {
            d.workload.hypercall_failures++;
          }
        }
      }
    }
    // Dynamically allocated locks still held by the dead instance wedge
    // the new one almost immediately.
    if (!w_.rcfg.reinit_locks) {
      for (const auto& [id, l] : w_.hv.locks.dynamic_locks) {
        if (l.held_by) {
          w_.machine.cpu(0).stuck_in_vmm = true;
          break;
        }
      }
    }
    check_settled();
  }

  void on_mgmt_unpause(const Event& e) {
    DomainState* pv = w_.domain(w_.privvm_id);
    if (!pv || !pv->is_live() || pv->guest_panicked) return;
    vmm::exec_hypercall(w_.machine, w_.hv, w_.domains, w_.privvm_id, 0,
                        HcOp::kVmUnpause, {e.a, 0, 0});
    DomainState* target = w_.domain(static_cast<DomainId>(e.a));
    if (target && target->status == guests::DomainStatus::kRunning) {
      w_.schedule(w_.now, kEvWorkloadStep, target->domain_id);
      w_.schedule(w_.now, kEvVirqHandle, target->domain_id);
    }
  }

  // -- create checks ---------------------------------------------------------

  void on_boot_create_check(const Event& e) {
    if (defer_if_paused(e)) return;
    w_.create_attempted = true;
    DomainState* pv = w_.domain(w_.privvm_id);
    if (w_.whole_machine_reset || !pv || !pv->is_live() ||
        pv->guest_panicked || w_.hv.create_blocked) {
      w_.create_ok = false;
      check_settled();
      return;
    }
    auto res = rvi::vm_create_transactional(w_, "appvm_blk");
    w_.create_ok = res.ok;
    if (res.ok) {
      DomainState* blk = w_.domain(res.vm);
      build_blk_script(*blk, w_.cfg.workloads.blk_ops / 3,
                       w_.cfg.workloads.blk_period_ms,
                       derive_seed(w_.run_seed, 0xb11c));
      w_.created_vm = res.vm;
      w_.schedule(w_.now, kEvWorkloadStep, res.vm);
      w_.schedule(w_.now + w_.cfg.detectors.timeout_scan_period_ms,
                  kEvTimeoutScan, res.vm);
    }
    check_settled();
  }

  void on_recreate_check(const Event& e) {
    if (defer_if_paused(e)) return;
    if (w_.node_restarted || w_.whole_machine_reset) {
      check_settled();
      return;
    }
    w_.create_attempted = true;
    DomainState* pv = w_.domain(w_.privvm_id);
    if (!pv || !pv->is_live() || pv->guest_panicked || w_.hv.create_blocked) {
      w_.create_ok = false;
      check_settled();
      return;
    }
    // Destroy one AppVM (seeded choice) and recreate it through the
    // transactional path to probe that the VI still manages VMs.
    Rng rng(derive_seed(w_.run_seed, 0x5ec3));
    std::vector<DomainId> live;
    for (auto& d : w_.domains)
      if (d.role == DomainRole::kAppVm && d.is_live() &&
          d.workload.kind != WorkloadKind::kBlk)
        live.push_back(d.domain_id);
    if (live.empty()) {
      w_.create_ok = false;
      check_settled();
      return;
    }
    DomainId victim = live[rng.below(live.size())];
    DomainState* vd = w_.domain(victim);
    std::string name = vd->name;
    CpuId freed_cpu = vd->vcpus[0].pinned_cpu;
    bool was_server =
        std::find(w_.lvs_servers.begin(), w_.lvs_servers.end(), victim) !=
        w_.lvs_servers.end();
    w_.destroy_domain(victim);
    auto res = rvi::vm_create_transactional(w_, name + "_new", -1, freed_cpu);
    w_.create_ok = res.ok;
    if (res.ok && was_server) {
      std::replace(w_.lvs_servers.begin(), w_.lvs_servers.end(), victim,
                   res.vm);
      if (DomainState* nd = w_.domain(res.vm)) {
        build_idle_script(*nd, WorkloadKind::kLvsServer, 1000);
        w_.schedule(w_.now, kEvWorkloadStep, res.vm);
      }
    }
    check_settled();
  }

  // -- RVI events -------------------------------------------------------------

  void on_dvm_scan(const Event& e) {
    if (defer_if_paused(e)) return;
    w_.schedule(w_.now + w_.cfg.detectors.dvm_scan_period_ms, kEvDvmScan);
    const SimTime stall = w_.cfg.detectors.dvm_ring_stall_scans *
                          w_.cfg.detectors.dvm_scan_period_ms;
    for (auto& d : w_.domains) {
      if (d.role != DomainRole::kDvm || !d.is_live()) continue;
      if (d.guest_panicked) continue;  // crash path already handled
      if (!d.guest_hung) continue;
      for (const auto& r : w_.rings) {
        if (r.backend != d.domain_id) continue;
        for (const auto& [id, req] : r.in_flight) {
          if (w_.now - req.issued_ms >= stall) {
            w_.schedule(w_.now, kEvDvmFailure, d.domain_id, 1);
            return;
          }
        }
      }
    }
  }

  void on_dvm_failure(const Event& e) {
    DomainId dvm = static_cast<DomainId>(e.a);
    if (!w_.detection) {
      w_.detection = detect::DetectedFailure{
          e.b == 0 ? detect::FailureKind::kCrash : detect::FailureKind::kHang,
          0, w_.now, "driver VM failure"};
      w_.detected_component = "dvm";
    }
    if (!w_.cfg.topology.rvi_enabled) return;
    for (std::size_t i = 0; i < w_.dvm_pairs.size(); ++i) {
      auto& pair = w_.dvm_pairs[i];
      if (pair.active == dvm) {
        rvi::dvm_failover(w_, pair);
        auto rep = rvi::dvm_replace(
            w_, pair, w_.cfg.diagnostics.dvm_destroy_before_reinit);
        if (rep.dma_corruption) w_.dma_corruption = true;
        if (!rep.deferred)
          w_.schedule(w_.now + 2000, kEvDvmReplaceDone,
                      static_cast<std::int64_t>(i), rep.new_dvm);
      } else if (pair.spare == dvm) {
        if (pair.hosts_xba) w_.xba.available = false;
        auto rep = rvi::dvm_replace(
            w_, pair, w_.cfg.diagnostics.dvm_destroy_before_reinit);
        if (!rep.deferred)
          w_.schedule(w_.now + 2000, kEvDvmReplaceDone,
                      static_cast<std::int64_t>(i), rep.new_dvm);
      }
    }
  }

  void on_dvm_replace_done(const Event& e) {
    auto& pair = w_.dvm_pairs[static_cast<std::size_t>(e.a)];
    DomainId fresh = static_cast<DomainId>(e.b);
    if (fresh == kNoDomain) return;
    // Devices re-initialized by the new instance; only now is the failed
    // DVM destroyed and its memory released.
    if (pair.pending_destroy != kNoDomain) {
      w_.destroy_domain(pair.pending_destroy);
      pair.pending_destroy = kNoDomain;
    }
    if (DomainState* nd = w_.domain(fresh)) {
      nd->status = guests::DomainStatus::kRunning;
      w_.hv.pause_count[fresh] = 0;
      vmm::runqueue_insert(w_.hv, w_.domains, fresh, 0);
      pair.spare = fresh;
      if (pair.hosts_xba) {
        w_.xba.available = true;
        // Replica re-seeded from the live primary.
        DomainState* pv = w_.domain(w_.privvm_id);
        if (pv && pv->is_live() && !pv->guest_panicked)
          w_.xba.replica = w_.xenstore;
      }
    }
  }

  void on_privvm_failure(const Event&) {
    if (!w_.detection) {
      w_.detection = detect::DetectedFailure{detect::FailureKind::kCrash, 0,
                                             w_.now, "PrivVM failure"};
      w_.detected_component = "privvm";
    }
    if (!w_.cfg.topology.rvi_enabled) return;
    auto fresh = rvi::privvm_recover(w_);
    if (!fresh) {
      w_.schedule(w_.now + 500, kEvPrivVmFailure);
      return;
    }
  }

  void on_hostmon(const Event& e) {
    if (defer_if_paused(e)) return;
    w_.schedule(w_.now + w_.cfg.detectors.hostmon_period_ms, kEvHostmon);
    DomainState* pv = w_.domain(w_.privvm_id);
    if (!pv || !pv->is_live()) return;
    if (pv->xenstored_gone && !pv->guest_panicked) {
      // hostmon crashes the PrivVM via hypercall to force full recovery.
      guest_panic(*pv, "hostmon: critical process disappeared");
    }
    if (pv->guest_hung && !pv->guest_panicked)
      guest_panic(*pv, "PrivVM kernel hang detected");
  }

  // -- LVS client model (5AppVM) ----------------------------------------------

  void on_lvs_request(const Event& e) {
    auto& client = w_.lvs_clients[static_cast<std::size_t>(e.a)];
    if (client.sent >= client.total || w_.run_done) {
      check_settled();
      return;
    }
    client.sent++;
    const auto& wc = w_.cfg.workloads;
    SimTime period = client.dynamic_kind ? wc.lvs_dynamic_period_ms
                                         : wc.lvs_static_period_ms;
    SimTime start = std::max(w_.now, w_.paused_until);
    SimTime response = -1;
    if (!w_.whole_machine_reset) {
      DomainId dir = w_.lvs_director;
      DomainState* dd = w_.domain(dir);
      bool dir_ok = dd && dd->is_live() && !dd->guest_panicked &&
                    !dd->guest_hung;
      if (!dir_ok) {
        if (w_.director_failover_at < 0 && dd)
          w_.director_failover_at = w_.now + 1500;
        if (w_.director_failover_at >= 0 &&
            start >= w_.director_failover_at) {
          DomainState* bd = w_.domain(w_.lvs_backup_director);
          dir_ok = bd && bd->is_live() && !bd->guest_panicked;
        }
      }
      if (dir_ok) {
        // Round-robin over servers the director believes healthy.
        DomainState* server = nullptr;
        for (std::size_t k = 0; k < w_.lvs_servers.size(); ++k) {
          auto* s = w_.domain(
              w_.lvs_servers[(w_.lvs_rr + k) % w_.lvs_servers.size()]);
          if (s && s->is_live() && !s->guest_panicked && !s->guest_hung) {
            server = s;
            w_.lvs_rr = static_cast<int>(
                (w_.lvs_rr + k + 1) % w_.lvs_servers.size());
            break;
          }
        }
        if (server) {
          SimTime service = client.dynamic_kind ? 40 : 10;
          // Dynamic pages hit the server's disk through its DVM pair.
          if (client.dynamic_kind && !w_.dvm_pairs.empty()) {
            DomainState* active = w_.domain(w_.dvm_pairs[0].active);
            if (!active || !active->is_live() || active->guest_panicked ||
                active->guest_hung)
              service += 700;  // bounded RAID failover stall
          }
          response = start + 10 + service;
        }
      }
    }
    if (response < 0 || response - w_.now > wc.lvs_conn_timeout_ms) {
      client.timeouts++;
      w_.schedule(w_.now + wc.lvs_conn_timeout_ms + period, kEvLvsRequest,
                  e.a);
    } else {
      w_.schedule(std::max(response, w_.now + period), kEvLvsRequest, e.a);
    }
    check_settled();
  }
};

}  // namespace

// ---- world boot ---------------------------------------------------------

std::unique_ptr<World> boot_world(const ScenarioConfig& cfg,
                                  std::uint64_t run_seed) {
  auto wp = std::make_unique<World>(cfg, run_seed);
  World& w = *wp;
  const auto& wc = cfg.workloads;

  switch (cfg.topology.kind) {
    case TopologyKind::k1AppVm: {
      w.privvm_id = w.create_domain(DomainRole::kPrivVm, VmProfile::kPv,
                                    "privvm", 128, WorkloadKind::kIdle);
      build_idle_script(*w.domain(w.privvm_id), WorkloadKind::kIdle, 0);
      DomainId blk = w.create_domain(DomainRole::kAppVm, VmProfile::kPv,
                                     "appvm_blk", 96, WorkloadKind::kBlk);
      build_blk_script(*w.domain(blk), wc.blk_ops, wc.blk_period_ms,
                       derive_seed(run_seed, 0xb1c0));
      int blk_src = w.add_irq_source("blk", 40, true,
                                     w.domain(w.privvm_id)->vcpus[0].pinned_cpu);
      w.add_irq_source("watchdog_nmi", 2, false, 0);
      w.connect_blk_ring(blk, w.privvm_id, blk_src);
      w.boot_appvms = {blk};
      break;
    }
    case TopologyKind::k3AppVm: {
      const VmProfile prof =
          cfg.topology.fv_appvms ? VmProfile::kFv : VmProfile::kPv;
      w.privvm_id = w.create_domain(DomainRole::kPrivVm, VmProfile::kPv,
                                    "privvm", 128, WorkloadKind::kIdle);
      build_idle_script(*w.domain(w.privvm_id), WorkloadKind::kIdle, 0);
      DomainId dvm = w.create_domain(DomainRole::kDvm, VmProfile::kPv, "dvm",
                                     128, WorkloadKind::kIdle);
      build_idle_script(*w.domain(dvm), WorkloadKind::kIdle, 0);
      DomainId net = w.create_domain(DomainRole::kAppVm, prof, "appvm_net",
                                     96, WorkloadKind::kNet);
      build_net_script(*w.domain(net), wc.net_duration_ms);
      DomainId unix_vm = w.create_domain(DomainRole::kAppVm, prof,
                                         "appvm_unix", 96, WorkloadKind::kUnix);
      build_unix_script(*w.domain(unix_vm), wc);
      CpuId dvm_cpu = w.domain(dvm)->vcpus[0].pinned_cpu;
      int blk_src = w.add_irq_source("blk", 40, true, dvm_cpu);
      int net_src = w.add_irq_source("net", 41, true, dvm_cpu);
      // AppVM_Unix drives its disk directly (PV profile); FV setups route
      // it through the DVM as well.
      CpuId ide_cpu = cfg.topology.fv_appvms
                          ? dvm_cpu
                          : w.domain(unix_vm)->vcpus[0].pinned_cpu;
      DomainId ide_backend = cfg.topology.fv_appvms ? dvm : unix_vm;
      int ide_src = w.add_irq_source("ide", 42, true, ide_cpu);
      w.add_irq_source("watchdog_nmi", 2, false, 0);
      w.connect_net_ring(net, dvm, net_src);
      w.connect_blk_ring(unix_vm, ide_backend, ide_src);
      (void)blk_src;  // used by the create-check VM's ring
      w.boot_appvms = {net, unix_vm};
      w.net_started_ms = 0;
      w.net_deadline_ms = wc.net_duration_ms;
      if (cfg.topology.rvi_enabled) {
        DomainId spare = w.create_domain(DomainRole::kDvm, VmProfile::kPv,
                                         "dvm_spare", 128, WorkloadKind::kIdle);
        build_idle_script(*w.domain(spare), WorkloadKind::kIdle, 0);
        w.add_irq_source("blk2", 43, true, w.domain(spare)->vcpus[0].pinned_cpu);
        w.add_irq_source("net2", 44, true, w.domain(spare)->vcpus[0].pinned_cpu);
        rvi::DvmPair pair;
        pair.active = dvm;
        pair.spare = spare;
        pair.hosts_xba = true;
        w.dvm_pairs.push_back(pair);
        w.dvm_xs_id = dvm;
      }
      break;
    }
    case TopologyKind::k5AppVm: {
      w.privvm_id = w.create_domain(DomainRole::kPrivVm, VmProfile::kPv,
                                    "privvm", 128, WorkloadKind::kIdle);
      build_idle_script(*w.domain(w.privvm_id), WorkloadKind::kIdle, 0);
      DomainId dvm1 = w.create_domain(DomainRole::kDvm, VmProfile::kPv,
                                      "dvm1", 128, WorkloadKind::kIdle);
      DomainId dvm2 = w.create_domain(DomainRole::kDvm, VmProfile::kPv,
                                      "dvm2", 128, WorkloadKind::kIdle);
      build_idle_script(*w.domain(dvm1), WorkloadKind::kIdle, 0);
      build_idle_script(*w.domain(dvm2), WorkloadKind::kIdle, 0);
      const char* names[5] = {"lvs_dir1", "lvs_dir2", "web1", "web2", "web3"};
      std::vector<DomainId> appvms;
      for (int i = 0; i < 5; ++i) {
        DomainId id = w.create_domain(
            DomainRole::kAppVm, VmProfile::kPv, names[i], 64,
            i < 2 ? WorkloadKind::kLvsDirector : WorkloadKind::kLvsServer);
        build_idle_script(*w.domain(id),
                          i < 2 ? WorkloadKind::kLvsDirector
                                : WorkloadKind::kLvsServer,
                          1000);
        appvms.push_back(id);
      }
      w.lvs_director = appvms[0];
      w.lvs_backup_director = appvms[1];
      w.lvs_servers = {appvms[2], appvms[3], appvms[4]};
      w.boot_appvms = appvms;
      int d1 = w.add_irq_source("dvm1_blk", 40, true,
                                w.domain(dvm1)->vcpus[0].pinned_cpu);
      w.add_irq_source("dvm1_net", 41, true,
                       w.domain(dvm1)->vcpus[0].pinned_cpu);
      int d2 = w.add_irq_source("dvm2_blk", 42, true,
                                w.domain(dvm2)->vcpus[0].pinned_cpu);
      w.add_irq_source("dvm2_net", 43, true,
                       w.domain(dvm2)->vcpus[0].pinned_cpu);
      w.add_irq_source("watchdog_nmi", 2, false, 0);
      (void)d1;
      (void)d2;
      rvi::DvmPair pair;
      pair.active = dvm1;
      pair.spare = dvm2;
      pair.hosts_xba = true;
      w.dvm_pairs.push_back(pair);
      w.dvm_xs_id = dvm2;
      // Remote clients: two static streams, three dynamic ones.
      for (int c = 0; c < 5; ++c) {
        World::LvsClient cl;
        cl.dynamic_kind = c >= 2;
        cl.total = cl.dynamic_kind ? wc.lvs_dynamic_requests
                                   : wc.lvs_static_requests;
        w.lvs_clients.push_back(cl);
      }
      break;
    }
  }

  // The PrivVM's descriptor doubles as the Domain 0 handle.
  w.hv.statics.domain0 = w.domain(w.privvm_id)->domain_obj;
  // Seed XenStore with the boot-time tree.
  for (auto& d : w.domains)
    w.xenstore.tree["/local/domain/" + std::to_string(d.domain_id)] = d.name;
  w.xba.replica = w.xenstore;
  if (cfg.diagnostics.disable_scrub_on_free)
    w.hv.heap.unscrubbed_free.insert(*w.hv.heap.free_pages.begin());

  // Initial events.
  w.run_timeout_ms = cfg.run_timeout_ms > 0
                         ? cfg.run_timeout_ms
                         : 2 * config::nominal_duration_ms(cfg);
  for (auto& d : w.domains) {
    if (d.workload.kind == WorkloadKind::kIdle) continue;
    w.schedule(0, kEvWorkloadStep, d.domain_id);
    w.schedule(cfg.detectors.timeout_scan_period_ms, kEvTimeoutScan,
               d.domain_id);
  }
  for (auto& r : w.rings)
    if (r.kind == guests::Ring::kNet)
      w.schedule(wc.net_interval_ms, kEvNetArrival, r.ring_id);
  w.schedule(cfg.detectors.watchdog_period_ms, kEvWatchdog);
  w.schedule(w.run_timeout_ms, kEvRunEnd);
  if (cfg.topology.kind == TopologyKind::k3AppVm)
    w.schedule(wc.blk_vm_boot_at_ms, kEvBootCreateCheck);
  if (cfg.topology.rvi_enabled) {
    w.schedule(cfg.detectors.dvm_scan_period_ms, kEvDvmScan);
    w.schedule(cfg.detectors.hostmon_period_ms, kEvHostmon);
  }
  for (std::size_t c = 0; c < w.lvs_clients.size(); ++c)
    w.schedule(100 + static_cast<SimTime>(c) * 7, kEvLvsRequest,
               static_cast<std::int64_t>(c));
  for (CpuId c = 0; c < static_cast<int>(w.machine.cpus.size()); ++c)
    vmm::schedule(w.hv, w.domains, c);
  return wp;
}

// ---- finalization ----------------------------------------------------------

namespace {

RunResult finalize(World& w, long long events) {
  RunResult r;
  r.run_seed = w.run_seed;
  if (w.fault) r.fault = *w.fault;
  r.injection_attempts = w.injection_attempts;
  r.ended_ms = w.now;
  r.events_processed = events;
  r.leaked_pages = w.leaked_pages;
  r.recovery_latency_ms = w.recovery_ran ? w.recovery_latency_ms : 0;
  r.time_violation = w.time_violation;
  r.dma_corruption = w.dma_corruption;

  detect::RunFacts facts;
  facts.detection = w.detection;
  facts.handler_or_reboot_failed = w.handler_or_reboot_failed;
  facts.whole_machine_reset = w.whole_machine_reset;
  facts.vmm_failed_post_recovery = w.vmm_failed_post_recovery;
  facts.vm_create_attempted = w.create_attempted;
  facts.vm_create_succeeded = w.create_ok;
  facts.fault_manifested =
      w.corruption.has_value() &&
      w.corruption->manifestation !=
          faults::CorruptionRecord::Manifestation::kNone;

  guests::EvalContext base_ctx;
  base_ctx.failure_detected = w.detection.has_value();
  base_ctx.recovery_end_ms = w.recovery_end_ms;
  base_ctx.net_rx_times = w.net_rx;
  base_ctx.net_started_ms = w.net_started_ms;
  base_ctx.net_deadline_ms = w.net_deadline_ms;
  base_ctx.net_nominal_per_sec =
      1000.0 / static_cast<double>(w.cfg.workloads.net_interval_ms);
  base_ctx.net_drop_fraction = w.cfg.workloads.net_drop_fraction;
  base_ctx.net_max_gap_ms = w.cfg.workloads.net_max_gap_ms;
  base_ctx.lvs_max_timeouts = w.cfg.workloads.lvs_max_timeouts;
  for (const auto& c : w.lvs_clients)
    base_ctx.lvs_client_timeouts.push_back(c.timeouts);

  const bool lvs = !w.lvs_clients.empty();
  for (auto& d : w.domains) {
    if (d.role != DomainRole::kAppVm) continue;
    // Deliberate destroys (the 5AppVM recreate probe) are not failures.
    if (d.status == guests::DomainStatus::kDestroyed) continue;
    VerdictEntry entry;
    entry.name = d.name;
    entry.is_post_recovery_create = d.domain_id == w.created_vm;
    if (lvs) {
      entry.success = !d.guest_panicked && !d.guest_hung;
      entry.reason = entry.success ? "" : "node failed: " + d.panic_reason;
    } else {
      guests::Verdict v = guests::evaluate_completion(d, base_ctx);
      entry.success = v.success;
      entry.reason = v.reason;
    }
    r.verdicts.push_back(entry);
    detect::RunFacts::VmVerdict fv;
    fv.name = entry.name;
    fv.is_post_recovery_create = entry.is_post_recovery_create;
    fv.success = entry.success;
    fv.reason = entry.reason;
    facts.appvm_verdicts.push_back(fv);
  }
  if (lvs) {
    bool ok = !w.whole_machine_reset;
    for (const auto& c : w.lvs_clients) {
      if (c.timeouts > w.cfg.workloads.lvs_max_timeouts) ok = false;
      if (c.sent < c.total) ok = false;
    }
    facts.collective_workload_ok = ok;
  }

  r.facts = facts;
  r.outcome = detect::classify_run(facts);
  r.detected = w.detection.has_value();
  r.detected_component = w.detected_component;
  r.recovery_success = r.outcome.recovery_success;
  r.no_appvm_failure = r.outcome.no_appvm_failure;
  r.category = r.outcome.category;
  r.trace_digest = w.trace.digest.value();
  if (w.trace.record) r.trace_events = w.trace.events;

  // Invariant captures.
  if (w.pres_before && w.pres_after) {
    r.preservation_checked = true;
    r.preservation_ok = true;
    std::set<PageNum> excluded;
    if (w.corruption)
      excluded.insert(w.corruption->touched_pages.begin(),
                      w.corruption->touched_pages.end());
    for (const auto& [p, content] : w.pres_before->content) {
      if (excluded.count(p)) continue;
      auto ita = w.pres_after->content.find(p);
      if (ita == w.pres_after->content.end() || ita->second != content) {
        r.preservation_ok = false;
        r.preservation_detail = "content of page " + std::to_string(p);
        break;
      }
      if (!(w.pres_after->info.at(p) == w.pres_before->info.at(p))) {
        r.preservation_ok = false;
        r.preservation_detail = "page_info of page " + std::to_string(p);
        break;
      }
    }
  }
  // Free pages never overlap pages owned by domains or live objects.
  r.heap_disjoint_ok = true;
  for (PageNum p : w.hv.heap.free_pages) {
    if (!w.machine.page(p).owner.is_free()) {
      r.heap_disjoint_ok = false;
      break;
    }
  }
  for (const auto& [id, obj] : w.hv.heap.objects) {
    if (obj.page >= 0 && w.hv.heap.free_pages.count(obj.page))
      r.heap_disjoint_ok = false;
  }
  r.locks_free_ok = true;
  if (w.recovery_ran && w.rcfg.reinit_locks) {
    for (const auto& [id, l] : w.hv.locks.dynamic_locks)
      if (l.held_by) r.locks_free_ok = false;
  }
  return r;
}

}  // namespace

RunResult drive_to_completion(World& w, const RunOptions& opts) {
  (void)opts;
  Engine eng(w);
  long long events = 0;
  try {
    eng.run();
    events = eng.events();
  } catch (const SimInvariantError& err) {
    RunResult r = finalize(w, eng.events());
    r.invalid = true;
    r.invalid_reason = err.what();
    return r;
  }
  return finalize(w, events);
}

RunResult run_once(const ScenarioConfig& cfg, std::uint64_t run_seed,
                   const RunOptions& opts) {
  for (int attempt = 0;; ++attempt) {
    auto w = boot_world(cfg, run_seed);
    w->trace.record = opts.record_trace;
    w->capture_preservation = opts.capture_preservation;
    faults::FaultSpec spec;
    if (opts.fault_override) {
      spec = *opts.fault_override;
      if (spec.seed == 0) spec.seed = run_seed;
    } else {
      spec = faults::plan_injection(
          cfg.catalog, derive_seed(run_seed, static_cast<std::uint64_t>(attempt)),
          static_cast<int>(w->machine.cpus.size()));
    }
    w->injection_attempts = attempt;
    if (spec.fault_class != faults::FaultClass::kNone)
      w->fault = spec;
    if (w->fault) w->schedule(spec.trigger.delay_ms, kEvFaultTrigger);
    RunResult r = drive_to_completion(*w, opts);
    // Trigger never met (target CPU already gone): discard and resample.
    if (w->fault && !w->corruption && !r.invalid && attempt < 4 &&
        !opts.fault_override)
      continue;
    r.injection_attempts = attempt + 1;
    return r;
  }
}

}  // namespace visorsim::sim
