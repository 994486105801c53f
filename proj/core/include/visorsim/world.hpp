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

#ifndef VISORSIM_WORLD_HPP
#define VISORSIM_WORLD_HPP

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "visorsim/config.hpp"
#include "visorsim/detect.hpp"
#include "visorsim/faults.hpp"
#include "visorsim/guests.hpp"
#include "visorsim/machine.hpp"
#include "visorsim/recover.hpp"
#include "visorsim/rng.hpp"
#include "visorsim/rvi.hpp"
#include "visorsim/types.hpp"
#include "visorsim/vmm.hpp"

namespace visorsim {

// Event kinds dispatched by the run loop.
enum Ev : int {
  kEvWorkloadStep,   // a: domain
  kEvVirqHandle,     // a: domain
  kEvDeviceDone,     // a: ring, b: req
  kEvNetArrival,     // a: ring
  kEvWatchdog,       //
  kEvTimerCheck,     //
  kEvTimeoutScan,    // a: domain
  kEvFaultTrigger,   //
  kEvPanic,          // a: cpu (vmm panic)
  kEvBootCreateCheck,
  kEvRunEnd,
  kEvResume,          // recovery pause over
  kEvDvmScan,
  kEvDvmFailure,      // a: dvm, b: kind
  kEvPrivVmFailure,   //
  kEvHostmon,
  kEvLvsRequest,      // a: client
  kEvRecreateCheck,   // 5AppVM destroy/recreate probe
  kEvDvmReplaceDone,  // a: pair index, b: new dvm
  kEvMgmtUnpause,     // a: domain (management op completing after retry)
};

struct Event {
  SimTime at = 0;
  std::uint64_t seq = 0;
  int kind = 0;
  std::int64_t a = 0, b = 0, c = 0;
  bool operator<(const Event& o) const {
    return at != o.at ? at < o.at : seq < o.seq;
  }
};

// Digesting trace sink; optionally records events for the `run` CLI dump.
struct TraceSink {
  bool record = false;
  std::vector<Event> events;
  Fnv1a digest;
  void emit(const Event& e) {
    digest.add(static_cast<std::uint64_t>(e.at));
    digest.add(static_cast<std::uint64_t>(e.kind));
    digest.add(static_cast<std::uint64_t>(e.a));
    digest.add(static_cast<std::uint64_t>(e.b));
    if (record) events.push_back(e);
  }
};

// Snapshot used by the preservation invariant checks.
struct PreservationSnapshot {
  std::map<PageNum, std::uint64_t> content;
  std::map<PageNum, machine::PageInfo> info;
};

struct World {
  explicit World(const config::ScenarioConfig& scenario, std::uint64_t seed);

  config::ScenarioConfig cfg;
  recover::RecoveryConfig rcfg;
  std::uint64_t run_seed = 0;

  machine::MachineState machine;
  vmm::VmmState hv;
  std::vector<guests::DomainState> domains;
  std::vector<guests::Ring> rings;
  rvi::XenStoreState xenstore;
  rvi::XbaState xba;
  std::vector<rvi::DvmPair> dvm_pairs;

  Rng rng;
  SimTime now = 0;
  std::set<Event> queue;
  std::uint64_t next_seq = 1;
  TraceSink trace;

  // Topology roles.
  DomainId privvm_id = kNoDomain;
  DomainId dvm_xs_id = kNoDomain;
  std::vector<DomainId> boot_appvms;
  DomainId created_vm = kNoDomain;
  int next_domain_id = 0;
  int next_cpu = 0;

  // Fault and outcome bookkeeping.
  std::optional<faults::FaultSpec> fault;
  std::optional<faults::CorruptionRecord> corruption;
  int injection_attempts = 0;
  std::optional<detect::DetectedFailure> detection;
  std::string detected_component = "vmm";
  bool recovery_ran = false;
  bool handler_or_reboot_failed = false;
  std::string recovery_failure_detail;
  bool vmm_failed_post_recovery = false;
  bool whole_machine_reset = false;
  SimTime paused_until = 0;
  SimTime recovery_end_ms = 0;
  SimTime recovery_latency_ms = 0;
  int leaked_pages = 0;
  bool time_regressed = false;
  bool time_violation = false;
  SimTime last_time_seen = 0;

  bool create_attempted = false;
  bool create_ok = false;

  // Net observables.
  std::vector<SimTime> net_rx;
  SimTime net_started_ms = 0;
  SimTime net_deadline_ms = 0;

  // LVS state (5AppVM).
  struct LvsClient {
    int sent = 0;
    int total = 0;
    bool dynamic_kind = false;
    int timeouts = 0;
  };
  std::vector<LvsClient> lvs_clients;
  std::vector<DomainId> lvs_servers;
  DomainId lvs_director = kNoDomain;
  DomainId lvs_backup_director = kNoDomain;
  SimTime director_failover_at = -1;
  int lvs_rr = 0;
  bool node_restarted = false;

  // XenStore plumbing.
  std::deque<rvi::XsRequest> xs_queued;
  std::vector<rvi::XsResponse> xs_responses;
  std::vector<rvi::WatchEvent> watch_events;
  std::set<std::int64_t> xs_outstanding;
  // (op_id, created?) responses from transactional VM management ops.
  std::vector<std::pair<int, bool>> vmop_responses;

  // Run control.
  bool run_done = false;
  SimTime run_timeout_ms = 0;
  bool invalid = false;
  std::string invalid_reason;
  bool dma_corruption = false;

  // Invariant capture (acceptance suites).
  bool capture_preservation = false;
  std::optional<PreservationSnapshot> pres_before;
  std::optional<PreservationSnapshot> pres_after;

  // -- helpers --------------------------------------------------------
  void schedule(SimTime at, int kind, std::int64_t a = 0, std::int64_t b = 0,
                std::int64_t c = 0);
  guests::DomainState* domain(DomainId id);
  guests::DomainState* domain_by_name(const std::string& name);
  guests::Ring& ring(int id);
  bool in_recovery_pause() const { return now < paused_until; }
  bool domain_can_run(const guests::DomainState& d) const;

  DomainId create_domain(guests::DomainRole role, guests::VmProfile profile,
                         const std::string& name, int page_quota,
                         guests::WorkloadKind wl, CpuId preferred_cpu = -1);
  void destroy_domain(DomainId id);
  void connect_blk_ring(DomainId frontend, DomainId backend, int device_source);
  void connect_net_ring(DomainId frontend, DomainId backend, int device_source);
  int add_irq_source(const std::string& name, Vector vec, bool level,
                     CpuId bound);
};

}  // namespace visorsim

#endif  // VISORSIM_WORLD_HPP
