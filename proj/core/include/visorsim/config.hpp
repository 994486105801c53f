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

#ifndef VISORSIM_CONFIG_HPP
#define VISORSIM_CONFIG_HPP

#include <cstdint>
#include <string>

#include "visorsim/faults.hpp"
#include "visorsim/latency.hpp"
#include "visorsim/recover.hpp"
#include "visorsim/types.hpp"

namespace visorsim::config {

enum class TopologyKind { k1AppVm, k3AppVm, k5AppVm };

struct TopologyConfig {
  TopologyKind kind = TopologyKind::k1AppVm;
  bool fv_appvms = false;
  bool rvi_enabled = false;  // DVM failover + PrivVM recovery mechanisms
};

struct WorkloadConfig {
  // Blkbench analog: file create/write/copy/remove ops.
  int blk_ops = 180;
  SimTime blk_period_ms = 50;
  SimTime blk_service_ms = 2;
  SimTime blk_timeout_ms = 500;
  int blk_retry_budget = 3;
  // Netbench analog: fixed-rate echo with a remote host model.
  SimTime net_interval_ms = 1;
  SimTime net_duration_ms = 14000;
  SimTime net_max_gap_ms = 10000;
  double net_drop_fraction = 0.10;
  // UnixBench analog: hypercall-heavy iterations.
  int unix_iterations = 60;
  SimTime unix_compute_ms = 80;
  SimTime unix_timer_wait_ms = 40;
  // Boot of the create-check AppVM (3AppVM).
  SimTime blk_vm_boot_at_ms = 9000;
  // LVS analog (5AppVM).
  int lvs_static_requests = 200;
  int lvs_dynamic_requests = 60;
  SimTime lvs_static_period_ms = 80;
  SimTime lvs_dynamic_period_ms = 250;
  SimTime lvs_conn_timeout_ms = 2000;
  int lvs_max_timeouts = 2;
  SimTime lvs_recreate_after_ms = 50000;
};

struct DetectorConfig {
  SimTime watchdog_period_ms = 100;
  SimTime watchdog_threshold_ms = 300;
  SimTime timeout_scan_period_ms = 250;
  SimTime dvm_scan_period_ms = 500;
  int dvm_ring_stall_scans = 5;
  SimTime hostmon_period_ms = 1000;
};

struct DiagnosticsConfig {
  bool disable_time_restore = false;
  bool dvm_destroy_before_reinit = false;
  bool disable_scrub_on_free = false;
};

struct ScenarioConfig {
  TopologyConfig topology;
  WorkloadConfig workloads;
  DetectorConfig detectors;
  faults::FaultCatalog catalog;
  recover::RecoveryConfig recovery = recover::RecoveryConfig::all_on();
  latency::LatencyModel latency;
  DiagnosticsConfig diagnostics;
  // Run cutoff: 2x the fault-free duration unless overridden (> 0).
  SimTime run_timeout_ms = 0;
  bool recovery_enabled = true;
};

struct CampaignConfig {
  ScenarioConfig scenario;
  int run_count = 1000;
  std::uint64_t master_seed = 1;
  int jobs = 1;
};

// Presets matching the standard experiment configurations.
ScenarioConfig preset_1appvm();
ScenarioConfig preset_3appvm();
ScenarioConfig preset_5appvm();
ScenarioConfig preset_by_name(const std::string& name);

// JSON round trip for the single declarative config document.
CampaignConfig parse_campaign_config(const std::string& json_text);
std::string campaign_config_to_json(const CampaignConfig& cfg);

// Stable digest over the serialized config (reports embed it).
std::uint64_t config_digest(const CampaignConfig& cfg);

// Fault-free wall time for a scenario (used for the 2x cutoff).
SimTime nominal_duration_ms(const ScenarioConfig& cfg);

}  // namespace visorsim::config

#endif  // VISORSIM_CONFIG_HPP
