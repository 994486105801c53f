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

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "visorsim/campaign.hpp"
#include "visorsim/config.hpp"
#include "visorsim/latency.hpp"
#include "visorsim/sim.hpp"

namespace {

using namespace visorsim;

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_out(const std::string& path, const std::string& data) {
  if (path.empty() || path == "-") {
    std::cout << data;
    return;
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << data;
}

config::CampaignConfig load_campaign(const std::string& config_path,
                                     const std::string& preset) {
  if (!config_path.empty())
    return config::parse_campaign_config(slurp(config_path));
  config::CampaignConfig cfg;
  cfg.scenario = config::preset_by_name(preset.empty() ? "1appvm" : preset);
  return cfg;
}

int cmd_run(const std::string& config_path, const std::string& preset,
            int index, std::uint64_t seed, bool full_trace,
            const std::string& out_path) {
  auto cc = load_campaign(config_path, preset);
  if (seed != 0) cc.master_seed = seed;
  sim::RunOptions opts;
  opts.record_trace = full_trace;
  auto res = sim::run_once(cc.scenario,
                           campaign::run_seed_for(cc.master_seed, index), opts);
  auto rec = campaign::record_from_result(index, res);
  write_out(out_path, campaign::run_record_to_json(
                          rec, full_trace ? res.trace_events
                                          : std::vector<Event>{}));
  return res.invalid ? 2 : 0;
}

int cmd_campaign(const std::string& config_path, const std::string& preset,
                 int runs, std::uint64_t seed, int jobs,
                 const std::string& format, const std::string& out_path) {
  auto cc = load_campaign(config_path, preset);
  if (runs > 0) cc.run_count = runs;
  if (seed != 0) cc.master_seed = seed;
  if (jobs > 0) cc.jobs = jobs;
  auto out = campaign::run_campaign(cc);
  write_out(out_path, campaign::emit_report(
                          out.report, campaign::report_format_from_name(format)));
  return out.report.invalid_runs > 0 ? 2 : 0;
}

int cmd_matrix() {
  auto rows = campaign::run_diagnostic_matrix();
  std::cout << campaign::matrix_to_text(rows);
  for (const auto& r : rows)
    if (!r.pass()) return 1;
  return 0;
}

int cmd_latency(bool skip_scrub, bool skip_nmi_check,
                const std::string& config_path, const std::string& preset) {
  latency::LatencyModel model;
  if (!config_path.empty() || !preset.empty())
    model = load_campaign(config_path, preset).scenario.latency;
  latency::LatencyOptions opts{skip_scrub, skip_nmi_check};
  auto b = latency::recovery_latency(model, opts);
  std::printf("%-28s %8s\n", "operation", "time");
  for (const auto& s : b.steps)
    std::printf("%-28s %6lldms\n", s.name.c_str(),
                static_cast<long long>(s.cost_ms));
  std::printf("%-28s %6lldms\n", "total", static_cast<long long>(b.total_ms));
  return 0;
}

int cmd_report(const std::string& in_path, const std::string& format,
               const std::string& out_path) {
  auto report = campaign::parse_report_json(slurp(in_path));
  write_out(out_path, campaign::emit_report(
                          report, campaign::report_format_from_name(format)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "visorsim: deterministic fault-injection simulator for a virtualization "
      "infrastructure with hypervisor microreboot recovery"};
  app.require_subcommand(1);

  std::string config_path, preset, format = "text", out_path, in_path;
  int index = 0, runs = 0, jobs = 0;
  std::uint64_t seed = 0;
  bool full_trace = false, skip_scrub = false, skip_nmi_check = false;

  auto* run = app.add_subcommand("run", "execute a single run by index and dump its record");
  run->add_option("--config", config_path, "campaign config JSON");
  run->add_option("--preset", preset, "scenario preset: 1appvm|3appvm|5appvm");
  run->add_option("--index", index, "run index within the campaign");
  run->add_option("--seed", seed, "master seed override");
  run->add_flag("--trace", full_trace, "include the full event trace");
  run->add_option("--out", out_path, "output path (default stdout)");

  auto* camp = app.add_subcommand("campaign", "execute an injection campaign");
  camp->add_option("--config", config_path, "campaign config JSON");
  camp->add_option("--preset", preset, "scenario preset: 1appvm|3appvm|5appvm");
  camp->add_option("--runs", runs, "number of runs");
  camp->add_option("--seed", seed, "master seed");
  camp->add_option("--jobs", jobs, "worker threads");
  camp->add_option("--format", format, "json|csv|text");
  camp->add_option("--out", out_path, "output path (default stdout)");

  auto* matrix = app.add_subcommand(
      "matrix", "run the 8-pair enhancement<->fault diagnostic suite");

  auto* lat = app.add_subcommand("latency", "print the recovery latency cost model");
  lat->add_flag("--skip-scrub", skip_scrub, "skip scrubbing unallocated pages");
  lat->add_flag("--skip-nmi-check", skip_nmi_check, "skip the NMI watchdog check");
  lat->add_option("--config", config_path, "campaign config JSON (cost overrides)");
  lat->add_option("--preset", preset, "scenario preset");

  auto* rep = app.add_subcommand("report", "re-render a stored JSON report");
  rep->add_option("--in", in_path, "stored report (JSON)")->required();
  rep->add_option("--format", format, "json|csv|text");
  rep->add_option("--out", out_path, "output path (default stdout)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (run->parsed())
      return cmd_run(config_path, preset, index, seed, full_trace, out_path);
    if (camp->parsed())
      return cmd_campaign(config_path, preset, runs, seed, jobs, format,
                          out_path);
    if (matrix->parsed()) return cmd_matrix();
    if (lat->parsed())
      return cmd_latency(skip_scrub, skip_nmi_check, config_path, preset);
    if (rep->parsed()) return cmd_report(in_path, format, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
