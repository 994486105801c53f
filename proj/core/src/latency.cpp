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

#include "visorsim/latency.hpp"

namespace visorsim::latency {

LatencyBreakdown recovery_latency(const LatencyModel& model,
                                  const LatencyOptions& opts) {
  LatencyBreakdown b;
  auto add = [&b](std::string name, SimTime cost) {
    b.steps.push_back({std::move(name), cost});
    b.total_ms += cost;
  };
  add("cpu_init", model.cpu_init_ms);
  add("timer_hw_init", opts.skip_nmi_check
                           ? model.timer_hw_init_skip_nmi_check_ms
                           : model.timer_hw_init_ms);
  add("record_allocated_pages", model.record_allocated_pages_ms);
  add("restore_check_page_frames", model.restore_check_page_frames_ms);
  add("create_heap", model.create_heap_ms);
  add("scrub_unallocated", opts.skip_scrub ? 0 : model.scrub_unallocated_ms);
  add("other", model.other_ms);
  return b;
}

}  // namespace visorsim::latency
