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

#ifndef VISORSIM_CAMPAIGN_HPP
#define VISORSIM_CAMPAIGN_HPP

#include <map>
#include <string>
#include <vector>

#include "visorsim/config.hpp"
#include "visorsim/sim.hpp"
#include "visorsim/stats.hpp"

namespace visorsim::campaign {

struct RunRecord {
  int run_index = 0;
  std::uint64_t run_seed = 0;
  std::string fault_class;
  std::string inject_target;
  SimTime trigger_delay_ms = 0;
  int injection_attempts = 1;
  std::string outcome;   // detected_crash/detected_hang/silent_*/non_manifested
  std::string component;  // which VI component failed (detected runs)
  bool recovery_success = false;
  bool no_appvm_failure = false;
  std::string category;  // ok / i / ii / iii / iv
  std::vector<sim::VerdictEntry> verdicts;
  int leaked_pages = 0;
  SimTime recovery_latency_ms = 0;
  SimTime ended_ms = 0;
  std::uint64_t trace_digest = 0;
  bool invalid = false;
  std::string invalid_reason;
};

struct RateWithCi {
  long long count = 0;
  long long out_of = 0;
  double rate = 0.0;
  stats::Interval ci95;
};

struct CampaignReport {
  std::uint64_t master_seed = 0;
  std::uint64_t config_digest = 0;
  int run_count = 0;
  int valid_runs = 0;
  int invalid_runs = 0;
  // Outcome taxonomy counts (sum to valid_runs).
  std::map<std::string, long long> outcomes;
  RateWithCi recovery_success;     // out of detected failures
  RateWithCi no_appvm_failure;     // out of detected failures
  std::map<std::string, long long> recovery_failure_categories;
  std::map<std::string, long long> silent_system_categories;
  std::map<std::string, RateWithCi> per_component_success;  // 5AppVM campaigns
  long long leaked_pages_total = 0;
  double mean_recovery_latency_ms = 0.0;
  std::uint64_t runs_digest = 0;  // folded per-run trace digests
};

struct CampaignOutput {
  CampaignReport report;
  std::vector<RunRecord> records;
};

std::uint64_t run_seed_for(std::uint64_t master_seed, int run_index);

RunRecord record_from_result(int index, const sim::RunResult& r);

// Executes `cfg.run_count` isolated runs (in `cfg.jobs` threads when > 1)
// and folds them, order-independently, into a report. Deterministic for a
// given (config, master_seed) regardless of parallelism.
CampaignOutput run_campaign(const config::CampaignConfig& cfg);

enum class ReportFormat { kJson, kCsv, kText };
ReportFormat report_format_from_name(const std::string& name);

std::string emit_report(const CampaignReport& report, ReportFormat format);
CampaignReport parse_report_json(const std::string& text);

std::string run_record_to_json(const RunRecord& rec,
                               const std::vector<Event>& trace_events = {});

// ---- diagnostic matrix ------------------------------------------------

struct MatrixRow {
  std::string fault;
  std::string flag;
  bool fails_without_flag = false;
  bool succeeds_with_flag = false;
  std::string detail_off;
  std::string detail_on;
  bool pass() const { return fails_without_flag && succeeds_with_flag; }
};

// The eight enhancement<->fault diagnostic pairs: each targeted fault must
// defeat recovery with its designated flag off and be survived with it on,
// all other flags fixed.
std::vector<MatrixRow> run_diagnostic_matrix();
std::string matrix_to_text(const std::vector<MatrixRow>& rows);

}  // namespace visorsim::campaign

#endif  // VISORSIM_CAMPAIGN_HPP
