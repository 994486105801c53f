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

#ifndef VISORSIM_RVI_HPP
#define VISORSIM_RVI_HPP

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "visorsim/types.hpp"

namespace visorsim {
struct World;  // engine context; orchestration ops are defined in rvi.cpp
}

namespace visorsim::rvi {

enum class XsOp { kRead, kWrite, kRm, kWatch, kTxStart, kTxEnd };

struct XsRequest {
  std::int64_t req_id = 0;
  DomainId from = kNoDomain;
  XsOp op = XsOp::kRead;
  std::string path;
  std::string value;
  int tx_id = 0;
};

struct XsResponse {
  std::int64_t req_id = 0;
  bool ok = false;
  std::string value;
};

struct WatchEvent {
  DomainId watcher = kNoDomain;
  std::string watch_path;
  std::string fired_path;
};

// Hierarchical configuration store served by the PrivVM.
struct XenStoreState {
  std::map<std::string, std::string> tree;
  std::map<std::string, std::vector<DomainId>> watches;
  std::set<int> pending_tx;
  std::int64_t next_req_id = 1;
};

// Applies a request to a tree/watch set. Pure; used for both the primary
// and the replica so the two cannot drift by construction errors.
XsResponse apply_xs_request(XenStoreState& xs, const XsRequest& req);

// Watches triggered by a write/rm under a watched prefix.
std::vector<WatchEvent> watches_fired(const XenStoreState& xs,
                                      const XsRequest& req);

// ---- XenStore Backup Agent (on DVM_XS) -----------------------------------

enum class XsPhase { kReceived = 0, kApplied = 1, kResponded = 2, kComplete = 3 };

// VM-lifecycle transaction steps, write-ahead logged before execution.
enum class VmOpStep {
  kStart = 0,
  kBuilt = 1,
  kXsWritten = 2,
  kConnected = 3,
  kCommitted = 4,
  kResponded = 5,
};

struct XsLogRecord {
  XsRequest req;
  XsPhase phase = XsPhase::kReceived;
};

struct VmOpLogRecord {
  int op_id = 0;
  bool is_destroy = false;
  std::string vm_name;
  DomainId vm_id = kNoDomain;
  VmOpStep step = VmOpStep::kStart;
};

struct XbaState {
  XenStoreState replica;
  std::vector<XsLogRecord> xs_log;
  std::vector<VmOpLogRecord> vmop_log;
  int next_op_id = 1;
  bool available = true;  // DVM_XS alive and serving
};

// Forward a mutating request to the XBA before the primary applies it.
void xba_mirror_request(XbaState& xba, const XsRequest& req);
void xba_mark_phase(XbaState& xba, std::int64_t req_id, XsPhase phase);
void xba_log_vmop(XbaState& xba, const VmOpLogRecord& rec);
void xba_advance_vmop(XbaState& xba, int op_id, VmOpStep step);

// True when replica tree == primary tree (checked after every
// acknowledged write).
bool replica_matches(const XbaState& xba, const XenStoreState& primary);

// ---- DVM redundancy --------------------------------------------------------

struct DvmPair {
  DomainId active = kNoDomain;
  DomainId spare = kNoDomain;
  // RAID-1: per-AppVM disk health on each side of the pair.
  std::map<DomainId, std::pair<bool, bool>> disk_ok;
  bool hosts_xba = false;  // this pair's active DVM is DVM_XS
  // Failed instance awaiting destruction once the replacement has
  // re-initialized the devices.
  DomainId pending_destroy = kNoDomain;
};

// ---- Orchestration (engine-level; defined in rvi.cpp) ----------------------

struct DvmFailureEvent {
  DomainId dvm = kNoDomain;
  enum class Kind { kCrashHypercall, kVmmKill, kSchedulingStall, kRingStall } kind =
      Kind::kCrashHypercall;
  SimTime at_ms = 0;
};

// Detection scan over a DVM's observable behavior.
std::optional<DvmFailureEvent> detect_dvm_failure(World& w, DomainId dvm);

// Failover AppVM frontends from the failed active DVM to the spare.
void dvm_failover(World& w, DvmPair& pair);

// Replace the failed DVM: pause, boot replacement, re-init devices, only
// then destroy and release, reconnect. `destroy_before_reinit` is the
// diagnostic ordering violation (in-flight DMA corrupts released pages).
struct DvmReplaceResult {
  bool ok = false;
  DomainId new_dvm = kNoDomain;
  bool dma_corruption = false;
  bool deferred = false;  // PrivVM unavailable; retried later
};
DvmReplaceResult dvm_replace(World& w, DvmPair& pair,
                             bool destroy_before_reinit = false);

// Full PrivVM microreboot from pristine images plus XBA state restore and
// op-log replay. Returns the new PrivVM id, or nullopt when recovery is
// blocked (DVM_XS down).
std::optional<DomainId> privvm_recover(World& w);

// XenStore entry point for guests. Queues the request when the PrivVM is
// down; queued requests are answered after recovery.
std::optional<XsResponse> xenstore_request(World& w, const XsRequest& req);

// Transactional VM create through the PrivVM (write-ahead logged against
// the XBA when present). `crash_before_step` stops the PrivVM at that
// step for crash-point enumeration.
struct VmCreateResult {
  bool attempted = false;
  bool ok = false;
  DomainId vm = kNoDomain;
  bool crashed_midway = false;
  int op_id = 0;
};
VmCreateResult vm_create_transactional(World& w, const std::string& name,
                                       int crash_before_step = -1,
                                       CpuId preferred_cpu = -1);

}  // namespace visorsim::rvi

#endif  // VISORSIM_RVI_HPP
