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

#include "visorsim/campaign.hpp"

#include <json.hpp>

#include <atomic>
#include <sstream>
#include <thread>

namespace visorsim::campaign {

using nlohmann::ordered_json;

std::uint64_t run_seed_for(std::uint64_t master_seed, int run_index) {
  return derive_seed(master_seed, static_cast<std::uint64_t>(run_index));
}

namespace {

const char* outcome_name(const detect::Outcome& o) {
  switch (o.kind) {
    case detect::OutcomeKind::kDetected:
      return o.detected_kind == detect::FailureKind::kHang ? "detected_hang"
                                                           : "detected_crash";
    case detect::OutcomeKind::kSilentOneAppVm:
      return "silent_one_appvm";
    case detect::OutcomeKind::kSilentSystem:
      return "silent_system";
    case detect::OutcomeKind::kNonManifested:
      return "non_manifested";
  }
  return "?";
}

const char* category_name(detect::Category c) {
  switch (c) {
    case detect::Category::kOk: return "ok";
    case detect::Category::kI: return "i";
    case detect::Category::kII: return "ii";
    case detect::Category::kIII: return "iii";
    case detect::Category::kIV: return "iv";
  }
  return "?";
}

const char* target_name(faults::InjectTarget t) {
  switch (t) {
    case faults::InjectTarget::kVmm: return "vmm";
    case faults::InjectTarget::kDvm: return "dvm";
    case faults::InjectTarget::kPrivVm: return "privvm";
  }
  return "?";
}

RateWithCi make_rate(long long count, long long out_of) {
  RateWithCi r;
  r.count = count;
  r.out_of = out_of;
  r.rate = out_of > 0 ? static_cast<double>(count) / static_cast<double>(out_of)
                      : 0.0;
  r.ci95 = stats::wilson_interval(count, out_of);
  return r;
}

}  // namespace

RunRecord record_from_result(int index, const sim::RunResult& r) {
  RunRecord rec;
  rec.run_index = index;
  rec.run_seed = r.run_seed;
  rec.fault_class = faults::fault_class_name(r.fault.fault_class);
  rec.inject_target = target_name(r.fault.target);
  rec.trigger_delay_ms = r.fault.trigger.delay_ms;
  rec.injection_attempts = r.injection_attempts;
  rec.outcome = outcome_name(r.outcome);
  rec.component = r.detected ? r.detected_component : "";
  rec.recovery_success = r.recovery_success;
  rec.no_appvm_failure = r.no_appvm_failure;
  rec.category = category_name(r.category);
  rec.verdicts = r.verdicts;
  rec.leaked_pages = r.leaked_pages;
  rec.recovery_latency_ms = r.recovery_latency_ms;
  rec.ended_ms = r.ended_ms;
  rec.trace_digest = r.trace_digest;
  rec.invalid = r.invalid;
  rec.invalid_reason = r.invalid_reason;
  return rec;
}

CampaignOutput run_campaign(const config::CampaignConfig& cfg) {
  CampaignOutput out;
  const int n = cfg.run_count;
  std::vector<sim::RunResult> results(static_cast<std::size_t>(n));
  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1) {
    for (int i = 0; i < n; ++i)
      results[static_cast<std::size_t>(i)] =
          sim::run_once(cfg.scenario, run_seed_for(cfg.master_seed, i));
  } else {
    // Share-nothing runs; any interleaving folds to the same report.
    std::atomic<int> next{0};
    auto worker = [&] {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        results[static_cast<std::size_t>(i)] =
            sim::run_once(cfg.scenario, run_seed_for(cfg.master_seed, i));
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  CampaignReport& rep = out.report;
  rep.master_seed = cfg.master_seed;
  rep.config_digest = config_digest(cfg);
  rep.run_count = n;
  for (const char* k : {"detected_crash", "detected_hang", "silent_one_appvm",
                        "silent_system", "non_manifested"})
    rep.outcomes[k] = 0;
  for (const char* k : {"i", "ii", "iii", "iv"}) {
    rep.recovery_failure_categories[k] = 0;
    rep.silent_system_categories[k] = 0;
  }

  long long detected = 0, rec_ok = 0, no_fail = 0;
  long long latency_sum = 0, latency_n = 0;
  std::map<std::string, std::pair<long long, long long>> comp;
  Fnv1a runs_digest;
  for (int i = 0; i < n; ++i) {
    const auto& r = results[static_cast<std::size_t>(i)];
    out.records.push_back(record_from_result(i, r));
    if (r.invalid) {
      rep.invalid_runs++;
      continue;
    }
    rep.valid_runs++;
    runs_digest.add(r.trace_digest);
    rep.outcomes[outcome_name(r.outcome)]++;
    rep.leaked_pages_total += r.leaked_pages;
    if (r.outcome.kind == detect::OutcomeKind::kDetected) {
      detected++;
      if (r.recovery_success) rec_ok++;
      if (r.no_appvm_failure) no_fail++;
      if (!r.recovery_success)
        rep.recovery_failure_categories[category_name(r.category)]++;
      if (r.recovery_latency_ms > 0) {
        latency_sum += r.recovery_latency_ms;
        latency_n++;
      }
      auto& c = comp[r.detected_component];
      c.second++;
      if (r.recovery_success) c.first++;
    }
    if (r.outcome.kind == detect::OutcomeKind::kSilentSystem)
      rep.silent_system_categories[category_name(r.category)]++;
  }
  rep.recovery_success = make_rate(rec_ok, detected);
  rep.no_appvm_failure = make_rate(no_fail, detected);
  for (const auto& [name, c] : comp)
    rep.per_component_success[name] = make_rate(c.first, c.second);
  rep.mean_recovery_latency_ms =
      latency_n > 0 ? static_cast<double>(latency_sum) /
                          static_cast<double>(latency_n)
                    : 0.0;
  rep.runs_digest = runs_digest.value();
  return out;
}

// ---- report rendering -------------------------------------------------------

namespace {

ordered_json rate_to_json(const RateWithCi& r) {
  return ordered_json{{"count", r.count},
                      {"out_of", r.out_of},
                      {"rate", r.rate},
                      {"ci95_low", r.ci95.low},
                      {"ci95_high", r.ci95.high}};
}

RateWithCi rate_from_json(const ordered_json& j) {
  RateWithCi r;
  r.count = j.at("count");
  r.out_of = j.at("out_of");
  r.rate = j.at("rate");
  r.ci95.low = j.at("ci95_low");
  r.ci95.high = j.at("ci95_high");
  return r;
}

ordered_json report_to_json(const CampaignReport& r) {
  ordered_json j;
  j["schema"] = "visorsim.report.v1";
  j["master_seed"] = r.master_seed;
  j["config_digest"] = r.config_digest;
  j["run_count"] = r.run_count;
  j["valid_runs"] = r.valid_runs;
  j["invalid_runs"] = r.invalid_runs;
  j["outcomes"] = ordered_json::object();
  for (const auto& [k, v] : r.outcomes) j["outcomes"][k] = v;
  j["recovery_success"] = rate_to_json(r.recovery_success);
  j["no_appvm_failure"] = rate_to_json(r.no_appvm_failure);
  j["recovery_failure_categories"] = ordered_json::object();
  for (const auto& [k, v] : r.recovery_failure_categories)
    j["recovery_failure_categories"][k] = v;
  j["silent_system_categories"] = ordered_json::object();
  for (const auto& [k, v] : r.silent_system_categories)
    j["silent_system_categories"][k] = v;
  j["per_component_success"] = ordered_json::object();
  for (const auto& [k, v] : r.per_component_success)
    j["per_component_success"][k] = rate_to_json(v);
  j["leaked_pages_total"] = r.leaked_pages_total;
  j["mean_recovery_latency_ms"] = r.mean_recovery_latency_ms;
  j["runs_digest"] = r.runs_digest;
  return j;
}

}  // namespace

CampaignReport parse_report_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text);
  CampaignReport r;
  r.master_seed = j.at("master_seed");
  r.config_digest = j.at("config_digest");
  r.run_count = j.at("run_count");
  r.valid_runs = j.at("valid_runs");
  r.invalid_runs = j.at("invalid_runs");
  for (const auto& [k, v] : j.at("outcomes").items())
    r.outcomes[k] = v.get<long long>();
  r.recovery_success = rate_from_json(j.at("recovery_success"));
  r.no_appvm_failure = rate_from_json(j.at("no_appvm_failure"));
  for (const auto& [k, v] : j.at("recovery_failure_categories").items())
    r.recovery_failure_categories[k] = v.get<long long>();
  for (const auto& [k, v] : j.at("silent_system_categories").items())
    r.silent_system_categories[k] = v.get<long long>();
  for (const auto& [k, v] : j.at("per_component_success").items())
    r.per_component_success[k] = rate_from_json(v);
  r.leaked_pages_total = j.at("leaked_pages_total");
  r.mean_recovery_latency_ms = j.at("mean_recovery_latency_ms");
  r.runs_digest = j.at("runs_digest");
  return r;
}

ReportFormat report_format_from_name(const std::string& name) {
  if (name == "json") return ReportFormat::kJson;
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "text") return ReportFormat::kText;
  throw ConfigError("unknown report format: " + name);
}

std::string emit_report(const CampaignReport& r, ReportFormat format) {
  switch (format) {
    case ReportFormat::kJson:
      return report_to_json(r).dump(2) + "\n";
    case ReportFormat::kCsv: {
      std::ostringstream os;
      os << "outcome,count\n";
      for (const auto& [k, v] : r.outcomes) os << k << "," << v << "\n";
      return os.str();
    }
    case ReportFormat::kText: {
      std::ostringstream os;
      char buf[160];
      os << "campaign: " << r.run_count << " runs (" << r.valid_runs
         << " valid, " << r.invalid_runs << " invalid), master_seed="
         << r.master_seed << "\n\n";
      os << "  Outcome                    Count\n";
      os << "  -------------------------  -----\n";
      for (const auto& [k, v] : r.outcomes) {
        std::snprintf(buf, sizeof buf, "  %-25s  %5lld\n", k.c_str(), v);
        os << buf;
      }
      os << "\n";
      auto line = [&](const char* label, const RateWithCi& rate) {
        std::snprintf(buf, sizeof buf,
                      "  %-28s %5.1f%%  (%lld/%lld, 95%% CI [%.3f, %.3f])\n",
                      label, 100.0 * rate.rate, rate.count, rate.out_of,
                      rate.ci95.low, rate.ci95.high);
        os << buf;
      };
      line("Successful recovery rate", r.recovery_success);
      line("No-AppVM-failure rate", r.no_appvm_failure);
      os << "\n  Recovery failure categories: ";
      for (const auto& [k, v] : r.recovery_failure_categories)
        os << "(" << k << ") " << v << "  ";
      os << "\n  Silent system categories:    ";
      for (const auto& [k, v] : r.silent_system_categories)
        os << "(" << k << ") " << v << "  ";
      os << "\n";
      if (!r.per_component_success.empty()) {
        os << "\n  Per-component recovery success:\n";
        for (const auto& [k, v] : r.per_component_success) {
          std::snprintf(buf, sizeof buf, "    %-8s %5.1f%%  (%lld/%lld)\n",
                        k.c_str(), 100.0 * v.rate, v.count, v.out_of);
          os << buf;
        }
      }
      std::snprintf(buf, sizeof buf,
                    "\n  leaked pages: %lld   mean recovery latency: %.0fms\n",
                    r.leaked_pages_total, r.mean_recovery_latency_ms);
      os << buf;
      return os.str();
    }
  }
  throw ConfigError("unknown report format");
}

std::string run_record_to_json(const RunRecord& rec,
                               const std::vector<Event>& trace_events) {
  ordered_json j;
  j["run_index"] = rec.run_index;
  j["run_seed"] = rec.run_seed;
  j["fault_class"] = rec.fault_class;
  j["inject_target"] = rec.inject_target;
  j["trigger_delay_ms"] = rec.trigger_delay_ms;
  j["injection_attempts"] = rec.injection_attempts;
  j["outcome"] = rec.outcome;
  j["component"] = rec.component;
  j["recovery_success"] = rec.recovery_success;
  j["no_appvm_failure"] = rec.no_appvm_failure;
  j["category"] = rec.category;
  j["verdicts"] = ordered_json::array();
  for (const auto& v : rec.verdicts)
    j["verdicts"].push_back({{"vm", v.name},
                             {"post_recovery_create", v.is_post_recovery_create},
                             {"success", v.success},
                             {"reason", v.reason}});
  j["leaked_pages"] = rec.leaked_pages;
  j["recovery_latency_ms"] = rec.recovery_latency_ms;
  j["ended_ms"] = rec.ended_ms;
  j["trace_digest"] = rec.trace_digest;
  j["invalid"] = rec.invalid;
  j["invalid_reason"] = rec.invalid_reason;
  if (!trace_events.empty()) {
    j["trace"] = ordered_json::array();
    for (const auto& e : trace_events)
      j["trace"].push_back(
          {{"t", e.at}, {"kind", e.kind}, {"a", e.a}, {"b", e.b}, {"c", e.c}});
  }
  return j.dump(2) + "\n";
}

// ---- diagnostic matrix -------------------------------------------------------

namespace {

struct MatrixCase {
  std::string name;
  std::string flag;
  faults::FaultSpec spec;
  void (*toggle)(recover::RecoveryConfig&, bool);
};

faults::FaultSpec targeted(faults::FaultClass c) {
  faults::FaultSpec s;
  s.fault_class = c;
  s.trigger.delay_ms = 2000;
  s.target_cpu = 0;
  return s;
}

std::vector<MatrixCase> matrix_cases() {
  std::vector<MatrixCase> cases;
  {
    MatrixCase m{"held_dynamic_lock", "reinit_locks",
                 targeted(faults::FaultClass::kHeldDynamicLock),
                 [](recover::RecoveryConfig& r, bool on) { r.reinit_locks = on; }};
    cases.push_back(m);
  }
  {
    auto spec = targeted(faults::FaultClass::kMidHypercallCrash);
    spec.hc_op = guests::HcOp::kPageTablePin;
    spec.hc_crash_before_step = 5;  // use count bumped, validity unset
    MatrixCase m{"mid_hypercall_pin_a_b", "reset_page_counter", spec,
                 [](recover::RecoveryConfig& r, bool on) {
                   r.reset_page_counter = on;
                   r.wal_page_count = false;
                 }};
    cases.push_back(m);
  }
  {
    auto spec = targeted(faults::FaultClass::kUnackedInterrupt);
    MatrixCase m{"unacked_interrupt", "ack_interrupts", spec,
                 [](recover::RecoveryConfig& r, bool on) {
                   r.ack_interrupts = on;
                   r.ack_interrupts_enhanced = on;
                 }};
    cases.push_back(m);
  }
  {
    auto spec = targeted(faults::FaultClass::kCorruptSP);
    spec.target_cpu = 1;
    MatrixCase m{"corrupt_sp", "fix_sp", spec,
                 [](recover::RecoveryConfig& r, bool on) { r.fix_sp = on; }};
    cases.push_back(m);
  }
  {
    auto spec = targeted(faults::FaultClass::kHangNonBootCpu);
    spec.target_cpu = 1;
    MatrixCase m{"hang_nonboot_cpu", "nmi_ack", spec,
                 [](recover::RecoveryConfig& r, bool on) { r.nmi_ack = on; }};
    cases.push_back(m);
  }
  {
    MatrixCase m{"mid_pause_crash", "clear_running_flag",
                 targeted(faults::FaultClass::kMidPauseCrash),
                 [](recover::RecoveryConfig& r, bool on) {
                   r.clear_running_flag = on;
                 }};
    cases.push_back(m);
  }
  {
    auto spec = targeted(faults::FaultClass::kMidHypercallCrash);
    spec.hc_op = guests::HcOp::kGrantUnmap;
    spec.hc_crash_before_step = 1;  // before the mutation: retry succeeds
    MatrixCase m{"mid_hypercall_guest_return", "hypercall_retry", spec,
                 [](recover::RecoveryConfig& r, bool on) {
                   r.hypercall_retry = on;
                 }};
    cases.push_back(m);
  }
  {
    MatrixCase m{"handler_lock_held", "nmi_ipi",
                 targeted(faults::FaultClass::kHandlerLockHeld),
                 [](recover::RecoveryConfig& r, bool on) { r.nmi_ipi = on; }};
    cases.push_back(m);
  }
  return cases;
}

}  // namespace

std::vector<MatrixRow> run_diagnostic_matrix() {
  std::vector<MatrixRow> rows;
  for (const auto& mc : matrix_cases()) {
    MatrixRow row;
    row.fault = mc.name;
    row.flag = mc.flag;
    for (bool on : {false, true}) {
      config::ScenarioConfig cfg = config::preset_1appvm();
      cfg.recovery = recover::RecoveryConfig::all_on();
      mc.toggle(cfg.recovery, on);
      sim::RunOptions opts;
      opts.fault_override = mc.spec;
      auto res = sim::run_once(cfg, 0x4d415452u + (on ? 1 : 0), opts);
      std::string detail = res.recovery_success
                               ? "recovered"
                               : "failed (" + std::string(res.outcome.detail) +
                                     ", category " +
                                     std::string(category_name(res.category)) +
                                     ")";
      if (on) {
        row.succeeds_with_flag = res.recovery_success;
        row.detail_on = detail;
      } else {
        row.fails_without_flag = !res.recovery_success;
        row.detail_off = detail;
      }
    }
    rows.push_back(row);
  }
  return rows;
}

std::string matrix_to_text(const std::vector<MatrixRow>& rows) {
  std::ostringstream os;
  os << "enhancement <-> fault diagnostic matrix (16 runs)\n";
  char buf[200];
  std::snprintf(buf, sizeof buf, "  %-28s %-20s %-10s %-10s %s\n", "fault",
                "flag", "off", "on", "verdict");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "  %-28s %-20s %-10s %-10s %s\n",
                  r.fault.c_str(), r.flag.c_str(),
                  r.fails_without_flag ? "fails" : "RECOVERS?",
                  r.succeeds_with_flag ? "recovers" : "FAILS?",
                  r.pass() ? "PASS" : "FAIL");
    os << buf;
  }
  return os.str();
}

}  // namespace visorsim::campaign
