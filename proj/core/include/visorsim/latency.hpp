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

#ifndef VISORSIM_LATENCY_HPP
#define VISORSIM_LATENCY_HPP

#include <string>
#include <vector>

#include "visorsim/types.hpp"

namespace visorsim::latency {

// Per-step microreboot costs in milliseconds. Defaults reflect the
// measured breakdown on the reference hardware class; override per
// deployment in the scenario config.
struct LatencyModel {
  SimTime cpu_init_ms = 150;
  SimTime timer_hw_init_ms = 410;
  SimTime timer_hw_init_skip_nmi_check_ms = 310;
  SimTime record_allocated_pages_ms = 20;
  SimTime restore_check_page_frames_ms = 30;
  SimTime create_heap_ms = 200;
  SimTime scrub_unallocated_ms = 2080;
  SimTime other_ms = 5;
};

struct LatencyOptions {
  bool skip_scrub = false;
  bool skip_nmi_check = false;
};

struct LatencyBreakdown {
  struct Step {
    std::string name;
    SimTime cost_ms;
  };
  std::vector<Step> steps;
  SimTime total_ms = 0;
};

LatencyBreakdown recovery_latency(const LatencyModel& model,
                                  const LatencyOptions& opts);

}  // namespace visorsim::latency

#endif  // VISORSIM_LATENCY_HPP
