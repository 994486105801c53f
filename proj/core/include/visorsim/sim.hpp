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

#ifndef VISORSIM_SIM_HPP
#define VISORSIM_SIM_HPP

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "visorsim/config.hpp"
#include "visorsim/world.hpp"

namespace visorsim::sim {

struct RunOptions {
  // Force a specific fault instead of sampling from the catalog.
  std::optional<faults::FaultSpec> fault_override;
  bool record_trace = false;
  bool capture_preservation = false;
};

struct VerdictEntry {
  std::string name;
  bool is_post_recovery_create = false;
  bool success = false;
  std::string reason;
};

struct RunResult {
  std::uint64_t run_seed = 0;
  faults::FaultSpec fault;
  int injection_attempts = 0;
  detect::Outcome outcome;
  detect::RunFacts facts;
  std::vector<VerdictEntry> verdicts;
  bool detected = false;
  std::string detected_component;
  bool recovery_success = false;
  bool no_appvm_failure = false;
  detect::Category category = detect::Category::kOk;
  int leaked_pages = 0;
  SimTime recovery_latency_ms = 0;
  SimTime ended_ms = 0;
  std::uint64_t trace_digest = 0;
  long long events_processed = 0;
  bool invalid = false;
  std::string invalid_reason;
  bool time_violation = false;
  bool dma_corruption = false;

  // Invariant captures (filled when requested).
  bool preservation_checked = false;
  bool preservation_ok = false;
  std::string preservation_detail;
  bool heap_disjoint_ok = false;
  bool locks_free_ok = false;
  std::vector<Event> trace_events;
};

// Builds the topology and schedules the initial events; exposed for tests
// that drive the world manually.
std::unique_ptr<World> boot_world(const config::ScenarioConfig& cfg,
                                  std::uint64_t run_seed);

// One complete injection run.
RunResult run_once(const config::ScenarioConfig& cfg, std::uint64_t run_seed,
                   const RunOptions& opts = {});

// Drives an already-booted world to completion (test hook).
RunResult drive_to_completion(World& w, const RunOptions& opts = {});

}  // namespace visorsim::sim

#endif  // VISORSIM_SIM_HPP
