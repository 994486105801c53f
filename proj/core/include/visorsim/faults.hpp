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

#ifndef VISORSIM_FAULTS_HPP
#define VISORSIM_FAULTS_HPP

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "visorsim/guests.hpp"
#include "visorsim/machine.hpp"
#include "visorsim/rng.hpp"
#include "visorsim/types.hpp"
#include "visorsim/vmm.hpp"

namespace visorsim::faults {

// Architectural fault classes (campaign catalog) plus targeted classes
// that construct one specific inconsistency deterministically.
enum class FaultClass {
  // Catalog classes.
  kRegisterBitFlip,
  kCodeBitFlip,
  kNop,
  kDestination,
  kSource,
  kBranch,
  kLoop,
  kPointer,
  kInterface,
  // Targeted classes (diagnostic matrix and unit suites).
  kHeldDynamicLock,
  kMidHypercallCrash,
  kUnackedInterrupt,
  kCorruptSP,
  kCorruptTimerHandle,
  kCorruptDomainListHandle,
  kDropVirq,
  kMidPauseCrash,
  kCorruptVcpuRegs,
  kHangNonBootCpu,
  kHandlerLockHeld,
  kNone,  // control runs
};

const char* fault_class_name(FaultClass c);
std::optional<FaultClass> fault_class_from_name(const std::string& name);
bool is_targeted(FaultClass c);

// Where in a run the injection fires.
struct Trigger {
  SimTime delay_ms = 0;       // after workloads start
  int instruction_count = 0;  // additional VMM instructions (register class)
};

// Which component the fault lands in (RVI-wide campaigns inject into the
// DVM and PrivVM as well).
enum class InjectTarget { kVmm, kDvm, kPrivVm };

struct FaultSpec {
  FaultClass fault_class = FaultClass::kNone;
  InjectTarget target = InjectTarget::kVmm;
  Trigger trigger;
  CpuId target_cpu = 0;
  std::uint64_t seed = 0;
  // Targeted-class parameters.
  guests::HcOp hc_op = guests::HcOp::kPageTablePin;
  int hc_crash_before_step = -1;
  int reg_index = 0;
  int bit = 0;
  int source_id = -1;
  DomainId victim_domain = kNoDomain;
};

// A weighted fault site: the hypervisor operation and step an
// instruction-class fault attaches to. Replaces profiler-driven target
// selection with an explicit, auditable catalog.
struct FaultSite {
  std::string site_id;
  guests::HcOp op = guests::HcOp::kPageTablePin;
  double weight = 1.0;
};

// Downstream-effect mixture for architectural classes. Probabilities are
// explicit so the stressor distribution stays deterministic and auditable.
struct EffectMixture {
  double non_manifested = 0.30;
  double silent_given_manifested = 0.30;
  double hang_given_detected = 0.09;
  // Inconsistency-context probabilities, drawn independently for a
  // detected failure; each one is a real state mutation.
  double stop_blocked = 0.66;       // blocked IPIs / handler lock held
  double in_service_irq = 0.64;     // level-triggered interrupt in service
  double pending_irq = 0.08;        // delivered but not yet serviced
  double mid_hypercall = 0.27;      // a guest's hypercall is in flight
  double sp_corrupt = 0.15;         // stack pointer garbage on fault CPU
  double held_dynamic_lock = 0.20;  // a tracked heap lock is held
  double mid_alloc_leak = 0.05;     // crash between page grab and bookkeeping
  double unrecoverable = 0.010;     // corruption no enhancement repairs
  // Op split for the mid-hypercall context.
  double mid_op_pin = 0.40;
  double mid_op_grant_unmap = 0.25;
  double mid_op_vm_pause = 0.05;
  double mid_op_benign = 0.30;
  // Silent-effect split.
  double silent_guest_panic = 0.45;
  double silent_lost_virqs = 0.10;
  double silent_data_corrupt = 0.20;
  double silent_create_block = 0.05;
  double silent_whole_reset = 0.20;
};

struct CatalogClass {
  FaultClass fault_class = FaultClass::kRegisterBitFlip;
  double weight = 1.0;
  EffectMixture mixture;  // class-specific weights
};

struct FaultCatalog {
  std::vector<CatalogClass> classes;
  std::vector<FaultSite> sites;
  SimTime trigger_delay_min_ms = 500;
  SimTime trigger_delay_max_ms = 6500;
  int trigger_instr_max = 20000;
  // Injection-target weights (VMM-only campaigns leave DVM/PrivVM at 0).
  double target_vmm = 1.0;
  double target_dvm = 0.0;
  double target_privvm = 0.0;
};

FaultCatalog default_catalog();

// Deterministic fault plan for one run.
FaultSpec plan_injection(const FaultCatalog& catalog, std::uint64_t run_seed,
                         int ncpus);

// What apply_fault did to the world; the simulation loop acts on the
// manifestation and the recovery pipeline sees the mutations themselves.
struct CorruptionRecord {
  FaultClass fault_class = FaultClass::kNone;
  enum class Manifestation { kNone, kSilent, kCrash, kHang } manifestation =
      Manifestation::kNone;
  CpuId cpu = 0;
  // Context bits that were actually applied.
  bool stop_blocked = false;
  bool sp_corrupted = false;
  bool held_lock = false;
  std::optional<LockId> held_lock_id;
  bool in_service_irq = false;
  bool pending_irq = false;
  bool mid_hypercall = false;
  DomainId mid_hc_domain = kNoDomain;
  guests::HcOp mid_hc_op = guests::HcOp::kPageTablePin;
  int mid_hc_step = -1;
  bool unrecoverable = false;
  bool vcpu_regs_corrupted = false;
  bool timer_handle_corrupted = false;
  bool domain_list_corrupted = false;
  // Silent effects.
  enum class SilentEffect {
    kNone,
    kGuestPanic,
    kLostVirqs,
    kDataCorrupt,
    kCreateBlock,
    kWholeReset
  } silent_effect = SilentEffect::kNone;
  DomainId silent_victim = kNoDomain;
  std::vector<PageNum> touched_pages;
  std::string note;
};

// Dependencies apply_fault mutates. Rings are needed so silent data
// corruption can hit an in-flight request.
struct FaultWorld {
  machine::MachineState& machine;
  vmm::VmmState& vmm;
  std::vector<guests::DomainState>& domains;
  std::vector<guests::Ring>& rings;
  const EffectMixture* mixture = nullptr;  // class mixture for spec's class
  const std::vector<FaultSite>* sites = nullptr;
};

CorruptionRecord apply_fault(FaultWorld w, const FaultSpec& spec, SimTime now);

}  // namespace visorsim::faults

#endif  // VISORSIM_FAULTS_HPP
