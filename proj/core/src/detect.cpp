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

#include "visorsim/detect.hpp"

namespace visorsim::detect {

namespace {

struct VerdictTally {
  int existing_total = 0;
  int existing_failed = 0;
  bool has_create_vm = false;
  bool create_ok = false;
};

VerdictTally tally(const RunFacts& f) {
  VerdictTally t;
  for (const auto& v : f.appvm_verdicts) {
    if (v.is_post_recovery_create) {
      t.has_create_vm = true;
      t.create_ok = v.success;
    } else {
      t.existing_total++;
      if (!v.success) t.existing_failed++;
    }
  }
  if (f.vm_create_attempted && !f.vm_create_succeeded) {
    // Creation itself failed; there may be no verdict entry for the VM.
    t.has_create_vm = true;
    t.create_ok = false;
  }
  return t;
}

// The reliability goal allows losing at most one pre-existing AppVM when
// several are hosted; with a single AppVM its benchmark must complete.
bool success_rule(const VerdictTally& t) {
  const int allowed = t.existing_total >= 2 ? 1 : 0;
  if (t.existing_failed > allowed) return false;
  if (t.has_create_vm && !t.create_ok) return false;
  return true;
}

bool any_appvm_failed(const VerdictTally& t) {
  return t.existing_failed > 0 || (t.has_create_vm && !t.create_ok);
}

Category category_from_verdicts(const VerdictTally& t) {
  const bool all_existing_failed =
      t.existing_total > 0 && t.existing_failed == t.existing_total;
  if (all_existing_failed && (!t.has_create_vm || !t.create_ok))
    return Category::kII;
  if (all_existing_failed && t.create_ok) return Category::kIII;
  if (t.has_create_vm && !t.create_ok) return Category::kIV;
  return Category::kII;  // mixed multi-VM failure defaults to (ii)
}

}  // namespace

Category recovery_outcome_category(const RunFacts& f) {
  if (f.handler_or_reboot_failed || f.whole_machine_reset) return Category::kI;
  VerdictTally t = tally(f);
  if (f.vmm_failed_post_recovery) return Category::kII;
  if (success_rule(t)) return Category::kOk;
  return category_from_verdicts(t);
}

Outcome classify_run(const RunFacts& f) {
  Outcome o;
  VerdictTally t = tally(f);
  if (f.detection.has_value()) {
    o.kind = OutcomeKind::kDetected;
    o.detected_kind = f.detection->kind;
    o.category = recovery_outcome_category(f);
    o.recovery_success = o.category == Category::kOk;
    o.no_appvm_failure = o.recovery_success && !any_appvm_failed(t) &&
                         !(f.collective_workload_ok.has_value() &&
                           !*f.collective_workload_ok);
    if (f.collective_workload_ok.has_value() && !*f.collective_workload_ok)
      o.recovery_success = false;
    if (!o.recovery_success && o.category == Category::kOk)
      o.category = category_from_verdicts(t);
    o.detail = f.detection->cause;
    return o;
  }
  // No detection: silent or non-manifested.
  const bool collective_failed =
      f.collective_workload_ok.has_value() && !*f.collective_workload_ok;
  if (f.whole_machine_reset) {
    o.kind = OutcomeKind::kSilentSystem;
    o.category = Category::kI;
    o.detail = "whole-machine reset without detection";
    return o;
  }
  if (!any_appvm_failed(t) && !collective_failed) {
    o.kind = OutcomeKind::kNonManifested;
    return o;
  }
  const bool single_appvm =
      t.existing_failed + ((t.has_create_vm && !t.create_ok) ? 1 : 0) == 1 &&
      !collective_failed;
  if (single_appvm) {
    o.kind = OutcomeKind::kSilentOneAppVm;
    return o;
  }
  o.kind = OutcomeKind::kSilentSystem;
  o.category = category_from_verdicts(t);
  return o;
}

}  // namespace visorsim::detect
