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

#ifndef VISORSIM_DETECT_HPP
#define VISORSIM_DETECT_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "visorsim/types.hpp"

namespace visorsim::detect {

enum class FailureKind { kCrash, kHang };

struct DetectedFailure {
  FailureKind kind = FailureKind::kCrash;
  CpuId cpu = 0;
  SimTime at_ms = 0;
  std::string cause;
};

// Recovery-failure taxonomy; silent system failures are classified into
// the same four categories.
enum class Category { kOk, kI, kII, kIII, kIV };

enum class OutcomeKind {
  kDetected,
  kSilentOneAppVm,
  kSilentSystem,
  kNonManifested,
};

struct Outcome {
  OutcomeKind kind = OutcomeKind::kNonManifested;
  std::optional<FailureKind> detected_kind;
  bool recovery_success = false;  // meaningful for kDetected
  bool no_appvm_failure = false;  // meaningful for kDetected
  Category category = Category::kOk;
  std::string detail;
};

// The facts classify_run needs, extracted from the run.
struct RunFacts {
  bool fault_manifested = false;
  std::optional<DetectedFailure> detection;
  // One entry per AppVM that runs (or should boot) in the topology.
  struct VmVerdict {
    std::string name;
    bool is_post_recovery_create = false;  // the create-check VM
    bool success = false;
    std::string reason;
  };
  std::vector<VmVerdict> appvm_verdicts;
  // Cluster-level workload evaluation (LVS), when the topology has one.
  std::optional<bool> collective_workload_ok;
  bool vm_create_attempted = false;
  bool vm_create_succeeded = false;
  bool handler_or_reboot_failed = false;  // category (i) surface
  bool whole_machine_reset = false;       // triple-fault style escalation
  bool vmm_failed_post_recovery = false;  // crash/hang after guests resumed
};

// Maps a finished run to exactly one Outcome, applying the
// one-failed-VM success rule and the category (i)-(iv) taxonomy.
Outcome classify_run(const RunFacts& facts);

// Category assignment given a detection occurred.
Category recovery_outcome_category(const RunFacts& facts);

}  // namespace visorsim::detect

#endif  // VISORSIM_DETECT_HPP
