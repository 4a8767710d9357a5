// Command-line benchmark driver: run workloads against the transaction
// pipeline (or ablated/raw baselines), sweep tuning parameters, and verify
// recorded event histories offline.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dtx/dtx.hpp"

namespace {

struct CommonOpts {
  std::string workload = "a";  // a | b | f | path to a properties file
  int clients = 8;
  std::size_t ops = 5000;
  std::string mode = "framework";
  double lock_timeout_ms = 100.0;
  double initial_backoff_ms = 10.0;
  double max_backoff_ms = 500.0;
  double backoff_multiplier = 2.0;
  double jitter_fraction = 0.1;
  int max_retries = 3;
  int trials = 3;
  std::uint64_t seed = 42;
  std::size_t records = 1000;
  int ops_per_txn = 1;
  std::string dist;  // empty = workload default
  double theta = 0.99;
  double hot_op_frac = 0.2;
  double hot_key_frac = 0.01;
  double read_delay_us = 0.0;
  double write_delay_us = 0.0;
  double warmup_ms = 2000.0;
  bool virtual_time = false;
  bool no_history = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--workload", o.workload,
                  "a | b | f | path to a properties file");
  cmd->add_option("--clients", o.clients, "concurrent client threads");
  cmd->add_option("--ops", o.ops, "measured transactions per trial");
  cmd->add_option("--mode", o.mode, "framework | no-stage3 | raw");
  cmd->add_option("--lock-timeout-ms", o.lock_timeout_ms,
                  "lock acquisition timeout");
  cmd->add_option("--initial-backoff-ms", o.initial_backoff_ms,
                  "first backoff interval");
  cmd->add_option("--max-backoff-ms", o.max_backoff_ms, "backoff ceiling");
  cmd->add_option("--backoff-multiplier", o.backoff_multiplier,
                  "backoff growth factor");
  cmd->add_option("--jitter", o.jitter_fraction, "jitter fraction of backoff");
  cmd->add_option("--max-retries", o.max_retries,
                  "readiness retries before abort");
  cmd->add_option("--trials", o.trials, "independent trials");
  cmd->add_option("--seed", o.seed, "base RNG seed");
  cmd->add_option("--records", o.records, "documents loaded before the run");
  cmd->add_option("--ops-per-txn", o.ops_per_txn,
                  "operations bundled per transaction");
  cmd->add_option("--dist", o.dist,
                  "key distribution: zipfian | uniform | hotspot");
  cmd->add_option("--theta", o.theta, "zipfian skew constant");
  cmd->add_option("--hot-op-frac", o.hot_op_frac,
                  "share of operations aimed at the hot set");
  cmd->add_option("--hot-key-frac", o.hot_key_frac,
                  "share of the keyspace that is hot");
  cmd->add_option("--read-delay-us", o.read_delay_us,
                  "injected store read latency");
  cmd->add_option("--write-delay-us", o.write_delay_us,
                  "injected store write latency");
  cmd->add_option("--warmup-ms", o.warmup_ms, "unmeasured warmup per trial");
  cmd->add_flag("--virtual-time", o.virtual_time,
                "single-client deterministic run on a simulated clock");
  cmd->add_flag("--no-history", o.no_history,
                "skip event capture (disables the serializability check)");
}

dtx::BenchConfig build_config(const CommonOpts& o) {
  dtx::BenchConfig cfg;
  if (o.workload == "a") {
    cfg.workload = dtx::WorkloadSpec::workload_a();
  } else if (o.workload == "b") {
    cfg.workload = dtx::WorkloadSpec::workload_b();
  } else if (o.workload == "f") {
    cfg.workload = dtx::WorkloadSpec::workload_f();
  } else {
    cfg.workload = dtx::WorkloadSpec::from_properties_file(o.workload);
  }
  cfg.workload.record_count = o.records;
  cfg.workload.ops_per_transaction = o.ops_per_txn;
  cfg.workload.zipf_theta = o.theta;
  cfg.workload.hot_op_fraction = o.hot_op_frac;
  cfg.workload.hot_key_fraction = o.hot_key_frac;
  if (!o.dist.empty()) {
    if (o.dist == "zipfian") {
      cfg.workload.distribution = dtx::KeyDistribution::kZipfian;
    } else if (o.dist == "uniform") {
      cfg.workload.distribution = dtx::KeyDistribution::kUniform;
    } else if (o.dist == "hotspot") {
      cfg.workload.distribution = dtx::KeyDistribution::kHotspot;
    } else {
      throw CLI::ValidationError("--dist", "unknown distribution " + o.dist);
    }
  }

  cfg.clients = o.clients;
  cfg.transactions = o.ops;
  cfg.trials = o.trials;
  cfg.seed = o.seed;
  const auto mode = dtx::bench_mode_from(o.mode);
  if (!mode) {
    throw CLI::ValidationError("--mode", "unknown mode " + o.mode);
  }
  cfg.mode = *mode;

  auto ms = [](double v) {
    return dtx::Nanos(static_cast<std::int64_t>(v * 1e6));
  };
  cfg.pipeline.lock_timeout = ms(o.lock_timeout_ms);
  cfg.pipeline.backoff.initial = ms(o.initial_backoff_ms);
  cfg.pipeline.backoff.max = ms(o.max_backoff_ms);
  cfg.pipeline.backoff.multiplier = o.backoff_multiplier;
  cfg.pipeline.backoff.jitter_fraction = o.jitter_fraction;
  cfg.pipeline.max_retries = o.max_retries;

  if (o.read_delay_us > 0 || o.write_delay_us > 0) {
    auto us = [](double v) {
      return dtx::Nanos(static_cast<std::int64_t>(v * 1e3));
    };
    dtx::LatencyProfile profile;
    profile.read_delay = {us(o.read_delay_us), us(o.read_delay_us)};
    profile.write_delay = {us(o.write_delay_us), us(o.write_delay_us)};
    cfg.store_latency = profile;
  }

  cfg.virtual_time = o.virtual_time;
  cfg.warmup = o.virtual_time ? dtx::Nanos::zero() : ms(o.warmup_ms);
  cfg.capture_history = !o.no_history;
  return cfg;
}

void print_report_summary(const dtx::MetricsReport& report) {
  for (const auto& t : report.trials) {
    std::cout << "trial " << t.trial << ": committed " << t.committed
              << ", aborted " << t.aborted << ", throughput " << t.throughput
              << " tx/s, abort rate " << t.abort_rate;
    if (t.serializable.has_value()) {
      std::cout << ", serializable "
                << (*t.serializable ? "yes" : "NO");
    }
    std::cout << '\n';
  }
  std::cout << "aggregate: throughput " << report.throughput_ci.mean << " ± "
            << report.throughput_ci.half_width << " tx/s, abort rate "
            << report.mean_abort_rate << ", conflict rate "
            << report.mean_conflict_rate << ", persistent wait cycles "
            << report.total_deadlocks << '\n';
  if (report.correctness_failure) {
    std::cout << "CORRECTNESS FAILURE: a trial history was not conflict "
                 "serializable\n";
  }
}

int cmd_run(const CommonOpts& opts, const std::string& out,
            const std::string& csv, const std::string& events_out) {
  const dtx::BenchConfig cfg = build_config(opts);
  dtx::TrialObserver observer;
  if (!events_out.empty()) {
    observer = [&](std::size_t trial, const dtx::TrialMetrics&,
                   const dtx::TrialArtifacts& artifacts) {
      if (trial != 0) {
        return;  // one trial of events is plenty for offline analysis
      }
      std::ofstream f(events_out);
      if (!f) {
        throw std::runtime_error("cannot write " + events_out);
      }
      for (const auto& e : artifacts.events) {
        f << e.to_json().dump() << '\n';
      }
    };
  }
  const auto result = dtx::run_benchmark_detailed(cfg, observer);
  print_report_summary(result.report);
  if (!out.empty()) {
    dtx::emit_report(result.report, dtx::ReportFormat::kJson, out);
    std::cout << "report written to " << out << '\n';
  }
  if (!csv.empty()) {
    dtx::emit_report(result.report, dtx::ReportFormat::kCsv, csv);
    std::cout << "csv written to " << csv << '\n';
  }
  return result.report.correctness_failure ? 2 : 0;
}

int cmd_sweep(const CommonOpts& opts, const std::string& param,
              const std::vector<double>& values, const std::string& out) {
  const auto p = dtx::sweep_param_from(param);
  if (!p) {
    throw CLI::ValidationError("--param", "unknown parameter " + param);
  }
  const dtx::BenchConfig cfg = build_config(opts);
  const auto points = dtx::sweep(cfg, *p, values);
  nlohmann::json j = nlohmann::json::array();
  bool failure = false;
  for (const auto& point : points) {
    std::cout << param << " = " << point.value << ": throughput "
              << point.report.throughput_ci.mean << " tx/s, abort rate "
              << point.report.mean_abort_rate << '\n';
    failure = failure || point.report.correctness_failure;
    j.push_back(point.to_json());
  }
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) {
      throw std::runtime_error("cannot write " + out);
    }
    f << j.dump(2) << '\n';
    std::cout << "sweep written to " << out << '\n';
  }
  return failure ? 2 : 0;
}

int cmd_verify(const std::string& history_path) {
  std::ifstream in(history_path);
  if (!in) {
    throw std::runtime_error("cannot read " + history_path);
  }
  const auto events = dtx::MemoryEventSink::read_jsonl(in);
  const auto history = dtx::ExecutionHistory::from_events(events);
  const auto verdict = dtx::serializability_verdict(history);
  const auto audit = dtx::audit_history(events);

  nlohmann::json j = verdict;
  j["audit"] = nlohmann::json{
      {"transactions", audit.transactions},
      {"release_before_data", audit.release_before_data},
      {"lock_after_data", audit.lock_after_data},
      {"illegal_transitions", audit.illegal_transitions},
      {"violations", audit.violations},
  };
  std::cout << j.dump(2) << '\n';
  const bool ok = verdict.at("serializable").get<bool>() && audit.clean();
  return ok ? 0 : 2;
}

int cmd_overhead(const CommonOpts& opts, const std::string& out) {
  const dtx::BenchConfig cfg = build_config(opts);
  const auto report = dtx::measure_overhead(cfg);
  std::cout << "framework mean latency " << report.framework.mean_latency_ms("all")
            << " ms, raw mean latency " << report.raw.mean_latency_ms("all")
            << " ms, overhead " << report.total_overhead * 100.0 << "%\n";
  for (const auto& [stage, fraction] : report.stage_fractions) {
    std::cout << "  stage " << stage << ": " << fraction * 100.0
              << "% of transaction time\n";
  }
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) {
      throw std::runtime_error("cannot write " + out);
    }
    f << report.to_json().dump(2) << '\n';
    std::cout << "overhead report written to " << out << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transaction coordination benchmark"};
  app.require_subcommand(1);

  CommonOpts run_opts;
  std::string run_out;
  std::string run_csv;
  std::string run_events;
  auto* run = app.add_subcommand("run", "run a workload and report metrics");
  add_common(run, run_opts);
  run->add_option("--out", run_out, "write the JSON report here");
  run->add_option("--csv", run_csv, "write the long-format CSV here");
  run->add_option("--events-out", run_events,
                  "write trial 0's event history (JSONL) here");

  CommonOpts sweep_opts;
  std::string sweep_param;
  std::vector<double> sweep_values;
  std::string sweep_out;
  auto* sw = app.add_subcommand("sweep", "vary one tuning parameter");
  add_common(sw, sweep_opts);
  sw->add_option("--param", sweep_param,
                 "lock-timeout | initial-backoff | max-backoff | max-retries")
      ->required();
  sw->add_option("--values", sweep_values, "parameter values (ms or count)")
      ->required()
      ->expected(-1);
  sw->add_option("--out", sweep_out, "write the JSON sweep here");

  std::string verify_history;
  auto* verify = app.add_subcommand(
      "verify", "check a recorded event history offline");
  verify->add_option("--history", verify_history, "event JSONL file")
      ->required();

  CommonOpts overhead_opts;
  std::string overhead_out;
  auto* overhead = app.add_subcommand(
      "overhead", "compare framework latency against the raw store");
  add_common(overhead, overhead_opts);
  overhead->add_option("--out", overhead_out, "write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors exit 1; CLI11's per-error codes are not part of the
    // documented interface. Help requests still exit 0.
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) {
      return cmd_run(run_opts, run_out, run_csv, run_events);
    }
    if (sw->parsed()) {
      return cmd_sweep(sweep_opts, sweep_param, sweep_values, sweep_out);
    }
    if (verify->parsed()) {
      return cmd_verify(verify_history);
    }
    if (overhead->parsed()) {
      return cmd_overhead(overhead_opts, overhead_out);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
