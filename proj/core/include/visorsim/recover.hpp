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

#ifndef VISORSIM_RECOVER_HPP
#define VISORSIM_RECOVER_HPP

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "visorsim/detect.hpp"
#include "visorsim/faults.hpp"
#include "visorsim/guests.hpp"
#include "visorsim/latency.hpp"
#include "visorsim/machine.hpp"
#include "visorsim/vmm.hpp"

namespace visorsim::recover {

// Enhancement flags. Names are the stable identifiers used in scenario
// configs and reports.
struct RecoveryConfig {
  bool nmi_ipi = false;
  bool ack_interrupts = false;
  bool hypercall_retry = false;
  bool fix_sp = false;
  bool nmi_ack = false;
  bool reinit_locks = false;
  bool reset_page_counter = false;
  bool ack_interrupts_enhanced = false;  // implies ack_interrupts
  bool clear_running_flag = false;
  // Latency options.
  bool skip_scrub = false;
  bool skip_nmi_check = false;
  // Alternative to reset_page_counter; takes precedence when both set.
  bool wal_page_count = false;

  static RecoveryConfig all_on() {
    RecoveryConfig c;
    c.nmi_ipi = c.ack_interrupts = c.hypercall_retry = c.fix_sp = c.nmi_ack =
        c.reinit_locks = c.reset_page_counter = c.ack_interrupts_enhanced =
            c.clear_running_flag = true;
    return c;
  }
  // The six incremental stages evaluated by the flag-stack campaigns.
  static RecoveryConfig stage(int n);
  static constexpr int kStageCount = 6;
  static const char* stage_name(int n);

  void normalize() {
    if (ack_interrupts_enhanced) ack_interrupts = true;
  }
};

// Snapshot taken by the failure handler before the new image overwrites
// the static segments.
struct PreservedState {
  vmm::StaticSegment statics;
  // Saved VCPU register blocks per (domain, vcpu); garbage if the stack
  // pointer was corrupt and FixSP was off.
  struct SavedRegs {
    DomainId domain;
    int vcpu;
    machine::RegisterFile regs;
    bool garbage = false;
  };
  std::vector<SavedRegs> vcpu_regs;
  std::set<PageNum> old_free_pages;
  std::set<PageNum> old_reserved_init_pages;
};

struct HandlerResult {
  bool ok = false;
  std::string failure;  // why the handler got stuck (category i)
  PreservedState preserved;
};

// Failure-handler step sequence: FixSP, NMI ack, stop CPUs, save VCPU
// registers, acknowledge interrupts, snapshot statics.
HandlerResult failure_handler(machine::MachineState& m, vmm::VmmState& v,
                              std::vector<guests::DomainState>& doms,
                              const RecoveryConfig& cfg,
                              const detect::DetectedFailure& failure,
                              const faults::CorruptionRecord* corruption);

struct RebootResult {
  bool ok = false;
  std::string failure;  // fatal during reboot (category i)
  int leaked_pages = 0;
  // VCPUs whose first dispatch will crash the new instance (corrupt saved
  // registers); category (i) when non-empty.
  std::vector<std::pair<DomainId, int>> poisoned_dispatch;
  // Domains left with a pending hypercall to re-execute (or resume past).
  std::vector<std::pair<DomainId, int>> pending_retries;
  bool time_regressed = false;  // diagnostic mode only
};

// Boots the new hypervisor instance over the preserved state and
// re-integrates it: heap rebuild from old-free pages, page_info
// preservation, the restore list, scheduler re-association, and the
// repair steps selected by the flags.
RebootResult microreboot(machine::MachineState& m, vmm::VmmState& v,
                         std::vector<guests::DomainState>& doms,
                         const PreservedState& preserved,
                         const RecoveryConfig& cfg,
                         const faults::CorruptionRecord* corruption,
                         bool restore_time_vars = true);

// PC-rewind pass: every vcpu whose PC lies in its domain's hypercall page
// is set up for re-execution; without the flag the guest resumes after
// the call with a garbage return value and panics.
void retry_pending_hypercalls(std::vector<guests::DomainState>& doms,
                              const RecoveryConfig& cfg);

using detect::Category;

}  // namespace visorsim::recover

#endif  // VISORSIM_RECOVER_HPP
