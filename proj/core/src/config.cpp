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

#include "visorsim/config.hpp"

#include <json.hpp>

#include "visorsim/rng.hpp"

namespace visorsim::config {

using nlohmann::ordered_json;

ScenarioConfig preset_1appvm() {
  ScenarioConfig cfg;
  cfg.topology.kind = TopologyKind::k1AppVm;
  cfg.catalog = faults::default_catalog();
  return cfg;
}

ScenarioConfig preset_3appvm() {
  ScenarioConfig cfg;
  cfg.topology.kind = TopologyKind::k3AppVm;
  cfg.catalog = faults::default_catalog();
  return cfg;
}

ScenarioConfig preset_5appvm() {
  ScenarioConfig cfg;
  cfg.topology.kind = TopologyKind::k5AppVm;
  cfg.topology.rvi_enabled = true;
  cfg.catalog = faults::default_catalog();
  // RVI-wide campaigns inject into all three VI components.
  cfg.catalog.target_vmm = 0.4;
  cfg.catalog.target_dvm = 0.3;
  cfg.catalog.target_privvm = 0.3;
  cfg.recovery.skip_scrub = true;
  cfg.recovery.skip_nmi_check = true;
  return cfg;
}

ScenarioConfig preset_by_name(const std::string& name) {
  if (name == "1appvm") return preset_1appvm();
  if (name == "3appvm") return preset_3appvm();
  if (name == "5appvm") return preset_5appvm();
  throw ConfigError("unknown preset: " + name);
}

SimTime nominal_duration_ms(const ScenarioConfig& cfg) {
  const auto& wc = cfg.workloads;
  switch (cfg.topology.kind) {
    case TopologyKind::k1AppVm:
      return wc.blk_ops * (wc.blk_period_ms + wc.blk_service_ms + 2) + 1000;
    case TopologyKind::k3AppVm: {
      SimTime unixb = wc.unix_iterations *
                          (wc.unix_compute_ms + wc.unix_timer_wait_ms + 4) +
                      1000;
      SimTime blk = wc.blk_vm_boot_at_ms +
                    (wc.blk_ops / 3) * (wc.blk_period_ms + wc.blk_service_ms + 2) +
                    1000;
      return std::max({wc.net_duration_ms + 1000, unixb, blk});
    }
    case TopologyKind::k5AppVm:
      return wc.lvs_recreate_after_ms + cfg.catalog.trigger_delay_max_ms + 4000;
  }
  return 20000;
}

namespace {

const char* topo_name(TopologyKind k) {
  switch (k) {
    case TopologyKind::k1AppVm: return "1appvm";
    case TopologyKind::k3AppVm: return "3appvm";
    case TopologyKind::k5AppVm: return "5appvm";
  }
  return "?";
}

TopologyKind topo_from(const std::string& s) {
  if (s == "1appvm") return TopologyKind::k1AppVm;
  if (s == "3appvm") return TopologyKind::k3AppVm;
  if (s == "5appvm") return TopologyKind::k5AppVm;
  throw ConfigError("unknown topology: " + s);
}

ordered_json mixture_to_json(const faults::EffectMixture& m) {
  return ordered_json{{"non_manifested", m.non_manifested},
                      {"silent_given_manifested", m.silent_given_manifested},
                      {"hang_given_detected", m.hang_given_detected},
                      {"stop_blocked", m.stop_blocked},
                      {"in_service_irq", m.in_service_irq},
                      {"pending_irq", m.pending_irq},
                      {"mid_hypercall", m.mid_hypercall},
                      {"sp_corrupt", m.sp_corrupt},
                      {"held_dynamic_lock", m.held_dynamic_lock},
                      {"mid_alloc_leak", m.mid_alloc_leak},
                      {"unrecoverable", m.unrecoverable},
                      {"mid_op_pin", m.mid_op_pin},
                      {"mid_op_grant_unmap", m.mid_op_grant_unmap},
                      {"mid_op_vm_pause", m.mid_op_vm_pause},
                      {"mid_op_benign", m.mid_op_benign},
                      {"silent_guest_panic", m.silent_guest_panic},
                      {"silent_lost_virqs", m.silent_lost_virqs},
                      {"silent_data_corrupt", m.silent_data_corrupt},
                      {"silent_create_block", m.silent_create_block},
                      {"silent_whole_reset", m.silent_whole_reset}};
}

faults::EffectMixture mixture_from_json(const ordered_json& j) {
  faults::EffectMixture m;
  auto get = [&j](const char* k, double& out) {
    if (j.contains(k)) out = j.at(k).get<double>();
  };
  get("non_manifested", m.non_manifested);
  get("silent_given_manifested", m.silent_given_manifested);
  get("hang_given_detected", m.hang_given_detected);
  get("stop_blocked", m.stop_blocked);
  get("in_service_irq", m.in_service_irq);
  get("pending_irq", m.pending_irq);
  get("mid_hypercall", m.mid_hypercall);
  get("sp_corrupt", m.sp_corrupt);
  get("held_dynamic_lock", m.held_dynamic_lock);
  get("mid_alloc_leak", m.mid_alloc_leak);
  get("unrecoverable", m.unrecoverable);
  get("mid_op_pin", m.mid_op_pin);
  get("mid_op_grant_unmap", m.mid_op_grant_unmap);
  get("mid_op_vm_pause", m.mid_op_vm_pause);
  get("mid_op_benign", m.mid_op_benign);
  get("silent_guest_panic", m.silent_guest_panic);
  get("silent_lost_virqs", m.silent_lost_virqs);
  get("silent_data_corrupt", m.silent_data_corrupt);
  get("silent_create_block", m.silent_create_block);
  get("silent_whole_reset", m.silent_whole_reset);
  return m;
}

ordered_json recovery_to_json(const recover::RecoveryConfig& r) {
  return ordered_json{{"nmi_ipi", r.nmi_ipi},
                      {"ack_interrupts", r.ack_interrupts},
                      {"hypercall_retry", r.hypercall_retry},
                      {"fix_sp", r.fix_sp},
                      {"nmi_ack", r.nmi_ack},
                      {"reinit_locks", r.reinit_locks},
                      {"reset_page_counter", r.reset_page_counter},
                      {"ack_interrupts_enhanced", r.ack_interrupts_enhanced},
                      {"clear_running_flag", r.clear_running_flag},
                      {"skip_scrub", r.skip_scrub},
                      {"skip_nmi_check", r.skip_nmi_check},
                      {"wal_page_count", r.wal_page_count}};
}

recover::RecoveryConfig recovery_from_json(const ordered_json& j) {
  recover::RecoveryConfig r;
  auto get = [&j](const char* k, bool& out) {
    if (j.contains(k)) out = j.at(k).get<bool>();
  };
  get("nmi_ipi", r.nmi_ipi);
  get("ack_interrupts", r.ack_interrupts);
  get("hypercall_retry", r.hypercall_retry);
  get("fix_sp", r.fix_sp);
  get("nmi_ack", r.nmi_ack);
  get("reinit_locks", r.reinit_locks);
  get("reset_page_counter", r.reset_page_counter);
  get("ack_interrupts_enhanced", r.ack_interrupts_enhanced);
  get("clear_running_flag", r.clear_running_flag);
  get("skip_scrub", r.skip_scrub);
  get("skip_nmi_check", r.skip_nmi_check);
  get("wal_page_count", r.wal_page_count);
  r.normalize();
  return r;
}

ordered_json scenario_to_json(const ScenarioConfig& cfg) {
  ordered_json j;
  j["topology"] = {{"kind", topo_name(cfg.topology.kind)},
                   {"fv_appvms", cfg.topology.fv_appvms},
                   {"rvi_enabled", cfg.topology.rvi_enabled}};
  const auto& w = cfg.workloads;
  j["workloads"] = {{"blk_ops", w.blk_ops},
                    {"blk_period_ms", w.blk_period_ms},
                    {"blk_service_ms", w.blk_service_ms},
                    {"blk_timeout_ms", w.blk_timeout_ms},
                    {"blk_retry_budget", w.blk_retry_budget},
                    {"net_interval_ms", w.net_interval_ms},
                    {"net_duration_ms", w.net_duration_ms},
                    {"net_max_gap_ms", w.net_max_gap_ms},
                    {"net_drop_fraction", w.net_drop_fraction},
                    {"unix_iterations", w.unix_iterations},
                    {"unix_compute_ms", w.unix_compute_ms},
                    {"unix_timer_wait_ms", w.unix_timer_wait_ms},
                    {"blk_vm_boot_at_ms", w.blk_vm_boot_at_ms},
                    {"lvs_static_requests", w.lvs_static_requests},
                    {"lvs_dynamic_requests", w.lvs_dynamic_requests},
                    {"lvs_static_period_ms", w.lvs_static_period_ms},
                    {"lvs_dynamic_period_ms", w.lvs_dynamic_period_ms},
                    {"lvs_conn_timeout_ms", w.lvs_conn_timeout_ms},
                    {"lvs_max_timeouts", w.lvs_max_timeouts},
                    {"lvs_recreate_after_ms", w.lvs_recreate_after_ms}};
  const auto& d = cfg.detectors;
  j["detectors"] = {{"watchdog_period_ms", d.watchdog_period_ms},
                    {"watchdog_threshold_ms", d.watchdog_threshold_ms},
                    {"timeout_scan_period_ms", d.timeout_scan_period_ms},
                    {"dvm_scan_period_ms", d.dvm_scan_period_ms},
                    {"dvm_ring_stall_scans", d.dvm_ring_stall_scans},
                    {"hostmon_period_ms", d.hostmon_period_ms}};
  ordered_json classes = ordered_json::array();
  for (const auto& c : cfg.catalog.classes)
    classes.push_back({{"class", faults::fault_class_name(c.fault_class)},
                       {"weight", c.weight},
                       {"mixture", mixture_to_json(c.mixture)}});
  ordered_json sites = ordered_json::array();
  for (const auto& s : cfg.catalog.sites)
    sites.push_back({{"site", s.site_id},
                     {"op", static_cast<int>(s.op)},
                     {"weight", s.weight}});
  j["fault_catalog"] = {{"classes", classes},
                        {"sites", sites},
                        {"trigger_delay_min_ms", cfg.catalog.trigger_delay_min_ms},
                        {"trigger_delay_max_ms", cfg.catalog.trigger_delay_max_ms},
                        {"trigger_instr_max", cfg.catalog.trigger_instr_max},
                        {"target_vmm", cfg.catalog.target_vmm},
                        {"target_dvm", cfg.catalog.target_dvm},
                        {"target_privvm", cfg.catalog.target_privvm}};
  j["recovery"] = recovery_to_json(cfg.recovery);
  const auto& l = cfg.latency;
  j["latency"] = {{"cpu_init_ms", l.cpu_init_ms},
                  {"timer_hw_init_ms", l.timer_hw_init_ms},
                  {"timer_hw_init_skip_nmi_check_ms",
                   l.timer_hw_init_skip_nmi_check_ms},
                  {"record_allocated_pages_ms", l.record_allocated_pages_ms},
                  {"restore_check_page_frames_ms", l.restore_check_page_frames_ms},
                  {"create_heap_ms", l.create_heap_ms},
                  {"scrub_unallocated_ms", l.scrub_unallocated_ms},
                  {"other_ms", l.other_ms}};
  j["diagnostics"] = {
      {"disable_time_restore", cfg.diagnostics.disable_time_restore},
      {"dvm_destroy_before_reinit", cfg.diagnostics.dvm_destroy_before_reinit},
      {"disable_scrub_on_free", cfg.diagnostics.disable_scrub_on_free}};
  j["run_timeout_ms"] = cfg.run_timeout_ms;
  j["recovery_enabled"] = cfg.recovery_enabled;
  return j;
}

ScenarioConfig scenario_from_json(const ordered_json& j) {
  ScenarioConfig cfg;
  if (j.contains("preset"))
    cfg = preset_by_name(j.at("preset").get<std::string>());
  if (j.contains("topology")) {
    const auto& t = j.at("topology");
    if (t.contains("kind")) cfg.topology.kind = topo_from(t.at("kind"));
    if (t.contains("fv_appvms")) cfg.topology.fv_appvms = t.at("fv_appvms");
    if (t.contains("rvi_enabled")) cfg.topology.rvi_enabled = t.at("rvi_enabled");
  }
  if (j.contains("workloads")) {
    const auto& w = j.at("workloads");
    auto& o = cfg.workloads;
    auto geti = [&w](const char* k, auto& out) {
      if (w.contains(k)) out = w.at(k).get<std::decay_t<decltype(out)>>();
    };
    geti("blk_ops", o.blk_ops);
    geti("blk_period_ms", o.blk_period_ms);
    geti("blk_service_ms", o.blk_service_ms);
    geti("blk_timeout_ms", o.blk_timeout_ms);
    geti("blk_retry_budget", o.blk_retry_budget);
    geti("net_interval_ms", o.net_interval_ms);
    geti("net_duration_ms", o.net_duration_ms);
    geti("net_max_gap_ms", o.net_max_gap_ms);
    geti("net_drop_fraction", o.net_drop_fraction);
    geti("unix_iterations", o.unix_iterations);
    geti("unix_compute_ms", o.unix_compute_ms);
    geti("unix_timer_wait_ms", o.unix_timer_wait_ms);
    geti("blk_vm_boot_at_ms", o.blk_vm_boot_at_ms);
    geti("lvs_static_requests", o.lvs_static_requests);
    geti("lvs_dynamic_requests", o.lvs_dynamic_requests);
    geti("lvs_static_period_ms", o.lvs_static_period_ms);
    geti("lvs_dynamic_period_ms", o.lvs_dynamic_period_ms);
    geti("lvs_conn_timeout_ms", o.lvs_conn_timeout_ms);
    geti("lvs_max_timeouts", o.lvs_max_timeouts);
    geti("lvs_recreate_after_ms", o.lvs_recreate_after_ms);
  }
  if (j.contains("detectors")) {
    const auto& w = j.at("detectors");
    auto& o = cfg.detectors;
    auto geti = [&w](const char* k, auto& out) {
      if (w.contains(k)) out = w.at(k).get<std::decay_t<decltype(out)>>();
    };
    geti("watchdog_period_ms", o.watchdog_period_ms);
    geti("watchdog_threshold_ms", o.watchdog_threshold_ms);
    geti("timeout_scan_period_ms", o.timeout_scan_period_ms);
    geti("dvm_scan_period_ms", o.dvm_scan_period_ms);
    geti("dvm_ring_stall_scans", o.dvm_ring_stall_scans);
    geti("hostmon_period_ms", o.hostmon_period_ms);
  }
  if (j.contains("fault_catalog")) {
    const auto& c = j.at("fault_catalog");
    if (c.contains("classes")) {
      cfg.catalog.classes.clear();
      for (const auto& e : c.at("classes")) {
        faults::CatalogClass cc;
        auto name = e.at("class").get<std::string>();
        auto fc = faults::fault_class_from_name(name);
        if (!fc) throw ConfigError("unknown fault class: " + name);
        cc.fault_class = *fc;
        cc.weight = e.value("weight", 1.0);
        if (e.contains("mixture")) cc.mixture = mixture_from_json(e.at("mixture"));
        cfg.catalog.classes.push_back(cc);
      }
    }
    if (c.contains("sites")) {
      cfg.catalog.sites.clear();
      for (const auto& e : c.at("sites")) {
        faults::FaultSite s;
        s.site_id = e.at("site").get<std::string>();
        s.op = static_cast<guests::HcOp>(e.value("op", 0));
        s.weight = e.value("weight", 1.0);
        cfg.catalog.sites.push_back(s);
      }
    }
    auto geti = [&c](const char* k, auto& out) {
      if (c.contains(k)) out = c.at(k).get<std::decay_t<decltype(out)>>();
    };
    geti("trigger_delay_min_ms", cfg.catalog.trigger_delay_min_ms);
    geti("trigger_delay_max_ms", cfg.catalog.trigger_delay_max_ms);
    geti("trigger_instr_max", cfg.catalog.trigger_instr_max);
    geti("target_vmm", cfg.catalog.target_vmm);
    geti("target_dvm", cfg.catalog.target_dvm);
    geti("target_privvm", cfg.catalog.target_privvm);
  }
  if (j.contains("recovery")) cfg.recovery = recovery_from_json(j.at("recovery"));
  if (j.contains("latency")) {
    const auto& w = j.at("latency");
    auto& o = cfg.latency;
    auto geti = [&w](const char* k, auto& out) {
      if (w.contains(k)) out = w.at(k).get<std::decay_t<decltype(out)>>();
    };
    geti("cpu_init_ms", o.cpu_init_ms);
    geti("timer_hw_init_ms", o.timer_hw_init_ms);
    geti("timer_hw_init_skip_nmi_check_ms", o.timer_hw_init_skip_nmi_check_ms);
    geti("record_allocated_pages_ms", o.record_allocated_pages_ms);
    geti("restore_check_page_frames_ms", o.restore_check_page_frames_ms);
    geti("create_heap_ms", o.create_heap_ms);
    geti("scrub_unallocated_ms", o.scrub_unallocated_ms);
    geti("other_ms", o.other_ms);
  }
  if (j.contains("diagnostics")) {
    const auto& d = j.at("diagnostics");
    if (d.contains("disable_time_restore"))
      cfg.diagnostics.disable_time_restore = d.at("disable_time_restore");
    if (d.contains("dvm_destroy_before_reinit"))
      cfg.diagnostics.dvm_destroy_before_reinit =
          d.at("dvm_destroy_before_reinit");
    if (d.contains("disable_scrub_on_free"))
      cfg.diagnostics.disable_scrub_on_free = d.at("disable_scrub_on_free");
  }
  if (j.contains("run_timeout_ms")) cfg.run_timeout_ms = j.at("run_timeout_ms");
  if (j.contains("recovery_enabled"))
    cfg.recovery_enabled = j.at("recovery_enabled");
  return cfg;
}

}  // namespace

CampaignConfig parse_campaign_config(const std::string& json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  CampaignConfig cfg;
  cfg.scenario = scenario_from_json(j.contains("scenario") ? j.at("scenario") : j);
  if (j.contains("run_count")) cfg.run_count = j.at("run_count");
  if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed");
  if (j.contains("jobs")) cfg.jobs = j.at("jobs");
  if (cfg.run_count < 1) throw ConfigError("run_count must be >= 1");
  return cfg;
}

std::string campaign_config_to_json(const CampaignConfig& cfg) {
  ordered_json j;
  j["scenario"] = scenario_to_json(cfg.scenario);
  j["run_count"] = cfg.run_count;
  j["master_seed"] = cfg.master_seed;
  j["jobs"] = cfg.jobs;
  return j.dump(2);
}

std::uint64_t config_digest(const CampaignConfig& cfg) {
  // jobs affects scheduling only, never results; keep it out of the digest.
  CampaignConfig canon = cfg;
  canon.jobs = 1;
  std::string s = campaign_config_to_json(canon);
  Fnv1a h;
  h.add_bytes(s.data(), s.size());
  return h.value();
}

}  // namespace visorsim::config
