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

#include "visorsim/sim.hpp"
#include "visorsim/vmm.hpp"

using namespace visorsim;
using guests::HcOp;

namespace {

std::unique_ptr<World> world_1appvm() {
  return sim::boot_world(config::preset_1appvm(), 7);
}

PageNum clean_page(World& w, DomainId dom) {
  auto* d = w.domain(dom);
  for (PageNum p : d->pages) {
    const auto& pi = w.machine.page(p);
    if (pi.type_use_count == 0 && !pi.validity_bit && !pi.lock_bit &&
        static_cast<std::uint64_t>(p) * guests::kHypercallPageSize !=
            d->hypercall_page_base)
      return p;
  }
  return -1;
}

}  // namespace

TEST_CASE("pin: fresh page full run sets count and validity") {
  auto w = world_1appvm();
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  PageNum p = clean_page(*w, blk);
  auto res = vmm::exec_hypercall(w->machine, w->hv, w->domains, blk, 0,
                                 HcOp::kPageTablePin, {p, 0, 0});
  CHECK(res.status == vmm::HcResult::kOk);
  CHECK(w->machine.page(p).type_use_count == 1);
  CHECK(w->machine.page(p).validity_bit);
  CHECK(!w->machine.page(p).lock_bit);
}

TEST_CASE("pin: page not owned returns a guest error") {
  auto w = world_1appvm();
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  PageNum foreign = *w->domain_by_name("privvm")->pages.begin();
  auto res = vmm::exec_hypercall(w->machine, w->hv, w->domains, blk, 0,
                                 HcOp::kPageTablePin, {foreign, 0, 0});
  CHECK(res.status == vmm::HcResult::kError);
}

TEST_CASE("pin: crash between count bump and validity makes the retry spin") {
  auto w = world_1appvm();
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  PageNum p = clean_page(*w, blk);
  auto res = vmm::exec_hypercall(w->machine, w->hv, w->domains, blk, 0,
                                 HcOp::kPageTablePin, {p, 0, 0}, 0,
                                 /*crash_before_step=*/5);
  REQUIRE(res.status == vmm::HcResult::kCrashed);
  CHECK(w->machine.page(p).type_use_count == 1);
  CHECK(!w->machine.page(p).validity_bit);

  // Reproduce the repair the reboot path applies, then retry cleanly.
  SUBCASE("retry without repair spins forever") {
    w->machine.page(p).lock_bit = false;  // reinit_locks equivalent
    auto retry = vmm::retry_hypercall(w->machine, w->hv, w->domains, blk, 0);
    CHECK(retry.status == vmm::HcResult::kSpin);
  }
  SUBCASE("retry after the page-counter reset succeeds") {
    w->machine.page(p).lock_bit = false;
    w->machine.page(p).type_use_count = 0;  // reset_page_counter equivalent
    auto retry = vmm::retry_hypercall(w->machine, w->hv, w->domains, blk, 0);
    CHECK(retry.status == vmm::HcResult::kOk);
    CHECK(w->machine.page(p).type_use_count == 1);
    CHECK(w->machine.page(p).validity_bit);
  }
}

TEST_CASE("pin/unpin round trip clears validity at zero count") {
  auto w = world_1appvm();
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  PageNum p = clean_page(*w, blk);
  vmm::exec_hypercall(w->machine, w->hv, w->domains, blk, 0,
                      HcOp::kPageTablePin, {p, 0, 0});
  auto res = vmm::exec_hypercall(w->machine, w->hv, w->domains, blk, 0,
                                 HcOp::kPageTableUnpin, {p, 0, 0});
  CHECK(res.status == vmm::HcResult::kOk);
  CHECK(w->machine.page(p).type_use_count == 0);
  CHECK(!w->machine.page(p).validity_bit);
}

TEST_CASE("grant unmap: retry succeeds iff the crash preceded the mutation") {
  for (int k = 0; k < vmm::hc_step_count(HcOp::kGrantUnmap); ++k) {
    auto w = world_1appvm();
    DomainId priv = w->privvm_id;
    PageNum buf = w->ring(0).buffers[0];  // mapped by the backend at boot
    auto res = vmm::exec_hypercall(w->machine, w->hv, w->domains, priv, 0,
                                   HcOp::kGrantUnmap, {buf, 0, 0}, 0, k);
    REQUIRE(res.status == vmm::HcResult::kCrashed);
    auto retry = vmm::retry_hypercall(w->machine, w->hv, w->domains, priv, 0);
    if (k <= 1) {
      CHECK(retry.status == vmm::HcResult::kOk);
    } else {
      CHECK(retry.status == vmm::HcResult::kError);
    }
  }
}

TEST_CASE("grant unmap replayed after the mutation leaves a stale entry that "
          "panics the owner on re-share") {
  auto w = world_1appvm();
  DomainId priv = w->privvm_id;
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  PageNum buf = w->ring(0).buffers[0];
  // Crash after the mapping teardown, before the grant-table update.
  vmm::exec_hypercall(w->machine, w->hv, w->domains, priv, 0,
                      HcOp::kGrantUnmap, {buf, 0, 0}, 0, 2);
  auto retry = vmm::retry_hypercall(w->machine, w->hv, w->domains, priv, 0);
  CHECK(retry.status == vmm::HcResult::kError);
  // The owner tries to share the same page again and dies on the stale
  // mapped entry.
  CHECK(!vmm::grant_create(w->hv, w->domains, blk, buf, priv));
  CHECK(w->domain(blk)->guest_panicked);
}

TEST_CASE("grant map then unmap leaves the table consistent") {
  auto w = world_1appvm();
  DomainId priv = w->privvm_id;
  PageNum buf = w->ring(0).buffers[0];
  auto res = vmm::exec_hypercall(w->machine, w->hv, w->domains, priv, 0,
                                 HcOp::kGrantUnmap, {buf, 0, 0});
  CHECK(res.status == vmm::HcResult::kOk);
  // Fault-free: mapped bits match the actual mappings (tracker).
  auto* tracker = vmm::resolve(w->hv, w->hv.statics.shared_page_tracker);
  REQUIRE(tracker != nullptr);
  for (const auto& [owner, entries] : w->hv.grants) {
    for (const auto& e : entries) {
      bool actually_mapped = false;
      for (std::size_t i = 0; i + 1 < tracker->payload.size(); i += 2)
        if (tracker->payload[i] == e.page && tracker->payload[i + 1] == e.grantee)
          actually_mapped = true;
      CHECK(e.mapped == actually_mapped);
    }
  }
  auto again = vmm::exec_hypercall(w->machine, w->hv, w->domains, priv, 0,
                                   HcOp::kGrantUnmap, {buf, 0, 0});
  CHECK(again.status == vmm::HcResult::kError);
}

TEST_CASE("vm_pause: idle target completes immediately") {
  auto w = world_1appvm();
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  for (auto& vc : w->domain(blk)->vcpus) {
    vc.running = false;
    vc.on_cpu = false;
  }
  auto res = vmm::exec_hypercall(w->machine, w->hv, w->domains, w->privvm_id, 0,
                                 HcOp::kVmPause, {blk, 0, 0});
  CHECK(res.status == vmm::HcResult::kOk);
  CHECK(w->hv.pause_count[blk] == 1);
  CHECK(w->domain(blk)->status == guests::DomainStatus::kPaused);
}

TEST_CASE("vm_pause: only the PrivVM may pause") {
  auto w = world_1appvm();
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  auto res = vmm::exec_hypercall(w->machine, w->hv, w->domains, blk, 0,
                                 HcOp::kVmPause, {blk, 0, 0});
  CHECK(res.status == vmm::HcResult::kError);
}

TEST_CASE("vm_pause mid-crash: stale running flag spins the retry") {
  auto w = world_1appvm();
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  auto& vc = w->domain(blk)->vcpus[0];
  vc.running = true;
  vc.on_cpu = true;
  auto res = vmm::exec_hypercall(w->machine, w->hv, w->domains, w->privvm_id, 0,
                                 HcOp::kVmPause, {blk, 0, 0}, 0,
                                 /*crash before the stop IPIs=*/2);
  REQUIRE(res.status == vmm::HcResult::kCrashed);
  // Microreboot reality: nothing is on any CPU, the flag is stale.
  vc.on_cpu = false;
  SUBCASE("without the clear-running-flag repair the retry waits forever") {
    auto retry =
        vmm::retry_hypercall(w->machine, w->hv, w->domains, w->privvm_id, 0);
    CHECK(retry.status == vmm::HcResult::kSpin);
  }
  SUBCASE("with the cleared flag the retry completes") {
    vc.running = false;  // clear_running_flag equivalent
    auto retry =
        vmm::retry_hypercall(w->machine, w->hv, w->domains, w->privvm_id, 0);
    CHECK(retry.status == vmm::HcResult::kOk);
    CHECK(w->hv.pause_count[blk] == 1);  // continuation: no double count
  }
}

TEST_CASE("scheduler: empty queue idles; dispatch sets the running flag") {
  auto w = world_1appvm();
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  CpuId cpu = w->domain(blk)->vcpus[0].pinned_cpu;
  // Boot already dispatched everything; park the vcpu and re-queue it.
  vmm::deschedule(w->hv, w->domains, blk, 0);
  CHECK(!w->domain(blk)->vcpus[0].running);
  vmm::runqueue_insert(w->hv, w->domains, blk, 0);
  auto first = vmm::schedule(w->hv, w->domains, cpu);
  REQUIRE(first.has_value());
  CHECK(first->domain == blk);
  CHECK(w->domain(blk)->vcpus[0].running);
  CHECK(!vmm::schedule(w->hv, w->domains, cpu).has_value());
}

TEST_CASE("scheduler: a paused domain's vcpu is never queued or dispatched") {
  auto w = world_1appvm();
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  w->hv.pause_count[blk] = 1;
  vmm::runqueue_remove(w->hv, blk);
  vmm::runqueue_insert(w->hv, w->domains, blk, 0);
  CpuId cpu = w->domain(blk)->vcpus[0].pinned_cpu;
  CHECK(!vmm::schedule(w->hv, w->domains, cpu).has_value());
}

TEST_CASE("timers fire in deadline order with id tie-break") {
  auto w = world_1appvm();
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  TimerId a = vmm::set_timer(w->hv, w->machine, blk, 100);
  TimerId b = vmm::set_timer(w->hv, w->machine, blk, 100);
  TimerId c = vmm::set_timer(w->hv, w->machine, blk, 50);
  CHECK(vmm::fire_due_timers(w->hv, w->machine, 40).empty());
  auto fired = vmm::fire_due_timers(w->hv, w->machine, 100);
  REQUIRE(fired.size() == 3);
  CHECK(fired[0].id == c);
  CHECK(fired[1].id == a);  // equal deadlines: ascending event id
  CHECK(fired[2].id == b);
}

TEST_CASE("time_now is monotone under advance_time") {
  auto w = world_1appvm();
  vmm::advance_time(w->hv, 10);
  SimTime t1 = vmm::time_now(w->hv);
  vmm::advance_time(w->hv, 5);  // stale event time never rolls back
  CHECK(vmm::time_now(w->hv) == t1);
  vmm::advance_time(w->hv, 20);
  CHECK(vmm::time_now(w->hv) > t1);
}

TEST_CASE("deliver_virq queues FIFO and respects corrupted queue objects") {
  auto w = world_1appvm();
  DomainId blk = w->domain_by_name("appvm_blk")->domain_id;
  vmm::deliver_virq(w->hv, w->domains, blk, 5);
  vmm::deliver_virq(w->hv, w->domains, blk, 6);
  CHECK(w->domain(blk)->virq_queue == std::deque<int>{5, 6});
  vmm::resolve(w->hv, w->domain(blk)->virq_queue_obj)->corrupted = true;
  vmm::deliver_virq(w->hv, w->domains, blk, 7);
  CHECK(w->domain(blk)->virq_queue.size() == 2);  // dropped
}

TEST_CASE("xmalloc draws only free pages and xfree returns them scrubbed") {
  auto w = world_1appvm();
  auto before = w->hv.heap.free_pages.size();
  HeapId id = vmm::xmalloc(w->hv, w->machine, vmm::ObjKind::kScratch, {1, 2});
  REQUIRE(id != kNullHandle);
  PageNum p = vmm::resolve(w->hv, id)->page;
  CHECK(w->machine.page(p).owner.is_vmm());
  CHECK(w->hv.heap.free_pages.size() == before - 1);
  vmm::xfree(w->hv, w->machine, id);
  CHECK(w->machine.page(p).owner.is_free());
  CHECK(w->machine.page_content[static_cast<std::size_t>(p)] == 0);
  CHECK(w->hv.heap.free_pages.size() == before);
}

TEST_CASE("page ownership is unique in a fault-free world") {
  auto w = sim::boot_world(config::preset_3appvm(), 3);
  // Every page owned by a domain appears in exactly one domain's page set
  // and the page_info owner matches.
  std::map<PageNum, int> seen;
  for (const auto& d : w->domains)
    for (PageNum p : d.pages) {
      seen[p]++;
      CHECK(w->machine.page(p).owner == PageOwner::domain(d.domain_id));
    }
  for (const auto& [p, n] : seen) CHECK(n == 1);
  for (PageNum p : w->hv.heap.free_pages)
    CHECK(w->machine.page(p).owner.is_free());
}
