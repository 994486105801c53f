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

#include <doctest.h>

#include "visorsim/detect.hpp"
#include "visorsim/sim.hpp"

using namespace visorsim;
using namespace visorsim::detect;

namespace {

RunFacts base_3appvm_facts() {
  RunFacts f;
  f.fault_manifested = true;
  f.appvm_verdicts = {{"appvm_net", false, true, ""},
                      {"appvm_unix", false, true, ""},
                      {"appvm_blk", true, true, ""}};
  f.vm_create_attempted = true;
  f.vm_create_succeeded = true;
  return f;
}

void set_verdict(RunFacts& f, const std::string& name, bool ok) {
  for (auto& v : f.appvm_verdicts)
    if (v.name == name) v.success = ok;
}

}  // namespace

TEST_CASE("detected failure with all verdicts green is a successful recovery") {
  auto f = base_3appvm_facts();
  f.detection = DetectedFailure{FailureKind::kCrash, 0, 1000, "panic"};
  auto o = classify_run(f);
  CHECK(o.kind == OutcomeKind::kDetected);
  CHECK(o.recovery_success);
  CHECK(o.category == Category::kOk);
}

TEST_CASE("3AppVM success rule: net and/or unix plus the created blk VM") {
  auto f = base_3appvm_facts();
  f.detection = DetectedFailure{FailureKind::kCrash, 0, 1000, "panic"};
  SUBCASE("one of net/unix may fail") {
    set_verdict(f, "appvm_net", false);
    CHECK(classify_run(f).recovery_success);
  }
  SUBCASE("blk create failure defeats recovery (category iv)") {
    f.vm_create_succeeded = false;
    set_verdict(f, "appvm_blk", false);
    auto o = classify_run(f);
    CHECK(!o.recovery_success);
    CHECK(o.category == Category::kIV);
  }
  SUBCASE("both net and unix failing defeats recovery (category iii)") {
    set_verdict(f, "appvm_net", false);
    set_verdict(f, "appvm_unix", false);
    auto o = classify_run(f);
    CHECK(!o.recovery_success);
    CHECK(o.category == Category::kIII);
  }
  SUBCASE("everything failing is category ii") {
    set_verdict(f, "appvm_net", false);
    set_verdict(f, "appvm_unix", false);
    set_verdict(f, "appvm_blk", false);
    f.vm_create_succeeded = false;
    CHECK(classify_run(f).category == Category::kII);
  }
  SUBCASE("handler failure is category i regardless of verdicts") {
    f.handler_or_reboot_failed = true;
    CHECK(classify_run(f).category == Category::kI);
  }
}

TEST_CASE("single-AppVM rule: with one existing AppVM its benchmark must pass") {
  RunFacts f;
  f.fault_manifested = true;
  f.detection = DetectedFailure{FailureKind::kHang, 1, 500, "watchdog"};
  f.appvm_verdicts = {{"appvm_blk", false, false, "io errors"}};
  auto o = classify_run(f);
  CHECK(!o.recovery_success);
}

TEST_CASE("silent taxonomy: one AppVM vs system") {
  auto f = base_3appvm_facts();
  SUBCASE("no detection, single AppVM failure") {
    set_verdict(f, "appvm_unix", false);
    auto o = classify_run(f);
    CHECK(o.kind == OutcomeKind::kSilentOneAppVm);
  }
  SUBCASE("no detection, multiple failures is a silent system failure") {
    set_verdict(f, "appvm_unix", false);
    set_verdict(f, "appvm_net", false);
    auto o = classify_run(f);
    CHECK(o.kind == OutcomeKind::kSilentSystem);
  }
  SUBCASE("whole-machine reset without detection is silent system (i)") {
    f.whole_machine_reset = true;
    auto o = classify_run(f);
    CHECK(o.kind == OutcomeKind::kSilentSystem);
    CHECK(o.category == Category::kI);
  }
  SUBCASE("nothing failed: non-manifested") {
    auto o = classify_run(f);
    CHECK(o.kind == OutcomeKind::kNonManifested);
  }
}

TEST_CASE("every run maps to exactly one outcome") {
  // Randomized facts always classify, and to a single kind.
  Rng rng(31337);
  for (int i = 0; i < 2000; ++i) {
    RunFacts f;
    f.fault_manifested = rng.chance(0.5);
    if (rng.chance(0.5))
      f.detection =
          DetectedFailure{rng.chance(0.5) ? FailureKind::kCrash : FailureKind::kHang,
                          0, 100, "x"};
    int nvms = static_cast<int>(rng.below(4));
    for (int v = 0; v < nvms; ++v)
      f.appvm_verdicts.push_back(
          {"vm" + std::to_string(v), rng.chance(0.2), rng.chance(0.5), ""});
    f.vm_create_attempted = rng.chance(0.5);
    f.vm_create_succeeded = f.vm_create_attempted && rng.chance(0.7);
    f.handler_or_reboot_failed = rng.chance(0.1);
    f.whole_machine_reset = rng.chance(0.05);
    f.vmm_failed_post_recovery = rng.chance(0.1);
    auto o = classify_run(f);
    int kind = static_cast<int>(o.kind);
    CHECK(kind >= 0);
    CHECK(kind <= 3);
    if (!f.detection) CHECK(!o.recovery_success);
  }
}

TEST_CASE("post-recovery hypervisor failure classifies as category ii") {
  auto f = base_3appvm_facts();
  f.detection = DetectedFailure{FailureKind::kCrash, 0, 1000, "panic"};
  f.vmm_failed_post_recovery = true;
  set_verdict(f, "appvm_net", false);
  set_verdict(f, "appvm_unix", false);
  set_verdict(f, "appvm_blk", false);
  auto o = classify_run(f);
  CHECK(!o.recovery_success);
  CHECK(o.category == Category::kII);
}

TEST_CASE("triple-fault escalation during a run becomes whole-machine reset") {
  // Constructed via the classifier: detection absent, machine reset set.
  RunFacts f;
  f.fault_manifested = true;
  f.whole_machine_reset = true;
  f.appvm_verdicts = {{"appvm_blk", false, false, "reset"}};
  auto o = classify_run(f);
  CHECK(o.kind == OutcomeKind::kSilentSystem);
  CHECK(o.category == Category::kI);
}
