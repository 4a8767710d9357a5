#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dtx/clock.hpp"
#include "dtx/event_log.hpp"
#include "dtx/lock_manager.hpp"
#include "dtx/metrics.hpp"
#include "dtx/oracle.hpp"
#include "dtx/pipeline.hpp"
#include "dtx/store.hpp"
#include "dtx/types.hpp"
#include "dtx/workload.hpp"

namespace dtx {

/**
 * Execution modes:
 *
 *   kFramework       — the full four-stage pipeline
 *   kBaselineNoStage3 — identical, but every readiness assessment reports
 *                       READY; conflicts only surface at lock acquisition
 *   kRawStore        — no coordination at all; read-modify-writes degrade
 *                       to separate get + update calls
 */
enum class BenchMode { kFramework, kBaselineNoStage3, kRawStore };

[[nodiscard]] inline const char* to_string(BenchMode m) {
  switch (m) {
    case BenchMode::kFramework: return "framework";
    case BenchMode::kBaselineNoStage3: return "no-stage3";
    case BenchMode::kRawStore: return "raw";
  }
  return "?";
}

[[nodiscard]] inline std::optional<BenchMode> bench_mode_from(
    const std::string& name) {
  if (name == "framework") return BenchMode::kFramework;
  if (name == "no-stage3") return BenchMode::kBaselineNoStage3;
  if (name == "raw") return BenchMode::kRawStore;
  return std::nullopt;
}

struct BenchConfig {
  WorkloadSpec workload;
  int clients = 1;
  std::size_t transactions = 10000;  // measured per trial, across all clients
  Nanos warmup = std::chrono::seconds(2);
  PipelineConfig pipeline;
  int trials = 5;
  std::uint64_t seed = 42;
  BenchMode mode = BenchMode::kFramework;
  std::optional<LatencyProfile> store_latency;
  bool virtual_time = false;
  Nanos sample_interval = std::chrono::milliseconds(10);
  bool capture_history = true;
  bool audit_locks = false;

  void validate() const {
    workload.validate();
    if (clients < 1) {
      throw std::invalid_argument("clients must be >= 1");
    }
    if (transactions == 0) {
      throw std::invalid_argument("transactions must be >= 1");
    }
    if (trials < 1) {
      throw std::invalid_argument("trials must be >= 1");
    }
    if (pipeline.lock_timeout <= Nanos::zero()) {
      throw std::invalid_argument("lock timeout must be positive");
    }
    if (pipeline.backoff.initial <= Nanos::zero() ||
        pipeline.backoff.max < pipeline.backoff.initial ||
        pipeline.backoff.multiplier < 1.0 ||
        pipeline.backoff.jitter_fraction < 0.0 ||
        pipeline.backoff.jitter_fraction > 1.0) {
      throw std::invalid_argument("malformed backoff policy");
    }
    if (pipeline.max_retries < 0) {
      throw std::invalid_argument("max retries must be >= 0");
    }
    if (virtual_time && clients != 1) {
      throw std::invalid_argument(
          "deterministic virtual-time runs are single-client");
    }
    if (virtual_time && warmup > Nanos::zero()) {
      throw std::invalid_argument(
          "virtual-time runs take no warmup (set it to 0)");
    }
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json w{
        {"name", std::string(to_string(workload.name))},
        {"read_fraction", workload.read_fraction},
        {"update_fraction", workload.update_fraction},
        {"rmw_fraction", workload.rmw_fraction},
        {"record_count", workload.record_count},
        {"field_count", workload.field_count},
        {"field_length", workload.field_length},
        {"distribution", std::string(to_string(workload.distribution))},
        {"zipf_theta", workload.zipf_theta},
        {"hot_op_fraction", workload.hot_op_fraction},
        {"hot_key_fraction", workload.hot_key_fraction},
        {"ops_per_transaction", workload.ops_per_transaction},
    };
    nlohmann::json p{
        {"lock_timeout_ns", pipeline.lock_timeout.count()},
        {"initial_backoff_ns", pipeline.backoff.initial.count()},
        {"max_backoff_ns", pipeline.backoff.max.count()},
        {"backoff_multiplier", pipeline.backoff.multiplier},
        {"jitter_fraction", pipeline.backoff.jitter_fraction},
        {"max_retries", pipeline.max_retries},
        {"hybrid_read_locks",
         pipeline.hybrid_read_locks == HybridReadLocks::kExclusive
             ? "exclusive"
             : "shared"},
    };
    nlohmann::json latency = nullptr;
    if (store_latency) {
      latency = nlohmann::json{
          {"read_min_ns", store_latency->read_delay.min.count()},
          {"read_max_ns", store_latency->read_delay.max.count()},
          {"write_min_ns", store_latency->write_delay.min.count()},
          {"write_max_ns", store_latency->write_delay.max.count()},
      };
    }
    return nlohmann::json{
        {"workload", std::move(w)},
        {"clients", clients},
        {"transactions", transactions},
        {"warmup_ns", warmup.count()},
        {"pipeline", std::move(p)},
        {"trials", trials},
        {"seed", seed},
        {"mode", std::string(to_string(mode))},
        {"store_latency", std::move(latency)},
        {"virtual_time", virtual_time},
        {"sample_interval_ns", sample_interval.count()},
    };
  }
};

[[nodiscard]] inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

struct TrialMetrics {
  int trial = 0;
  std::uint64_t seed = 0;
  double duration_s = 0.0;
  std::uint64_t committed = 0;
  std::uint64_t aborted = 0;
  double throughput = 0.0;  // terminal transactions per second
  double abort_rate = 0.0;
  double conflict_rate = 0.0;
  std::size_t deadlock_count = 0;
  std::map<std::string, LatencySummary> latency;  // committed tx, per class
  double avg_lock_wait_ms = 0.0;
  std::uint64_t lock_acquisitions = 0;
  std::uint64_t lock_failures = 0;
  std::map<int, std::uint64_t> retry_histogram;
  std::map<std::string, double> overhead_fractions;
  std::map<std::string, std::uint64_t> abort_reasons;
  std::optional<bool> serializable;  // nullopt: not evaluated
  std::size_t lock_entries_after = 0;

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json lat = nlohmann::json::object();
    for (const auto& [cls, summary] : latency) {
      lat[cls] = summary.to_json();
    }
    nlohmann::json retries = nlohmann::json::object();
    for (const auto& [k, v] : retry_histogram) {
      retries[std::to_string(k)] = v;
    }
    nlohmann::json j{
        {"trial", trial},
        {"seed", seed},
        {"duration_s", duration_s},
        {"committed", committed},
        {"aborted", aborted},
        {"throughput", throughput},
        {"abort_rate", abort_rate},
        {"conflict_rate", conflict_rate},
        {"deadlock_count", deadlock_count},
        {"latency_ms", std::move(lat)},
        {"avg_lock_wait_ms", avg_lock_wait_ms},
        {"lock_acquisitions", lock_acquisitions},
        {"lock_failures", lock_failures},
        {"retry_histogram", std::move(retries)},
        {"overhead_fractions", overhead_fractions},
        {"abort_reasons", abort_reasons},
        {"lock_entries_after", lock_entries_after},
    };
    j["serializable"] = serializable.has_value()
                            ? nlohmann::json(*serializable)
                            : nlohmann::json(nullptr);
    return j;
  }
};

struct MetricsReport {
  std::string mode;
  bool virtual_time = false;
  nlohmann::json config;
  std::string config_hash;
  std::vector<TrialMetrics> trials;
  Ci95 throughput_ci;
  double mean_abort_rate = 0.0;
  double mean_conflict_rate = 0.0;
  std::uint64_t total_deadlocks = 0;
  bool correctness_failure = false;

  /** Mean across trials of the per-trial mean latency for one class. */
  [[nodiscard]] double mean_latency_ms(const std::string& cls) const {
    std::vector<double> means;
    for (const auto& t : trials) {
      auto it = t.latency.find(cls);
      if (it != t.latency.end() && it->second.count > 0) {
        means.push_back(it->second.mean_ms);
      }
    }
    return mean_of(means);
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json trial_list = nlohmann::json::array();
    for (const auto& t : trials) {
      trial_list.push_back(t.to_json());
    }
    return nlohmann::json{
        {"mode", mode},
        {"virtual_time", virtual_time},
        {"config", config},
        {"config_hash", config_hash},
        {"trials", std::move(trial_list)},
        {"aggregate",
         nlohmann::json{
             {"throughput", throughput_ci.to_json()},
             {"abort_rate_mean", mean_abort_rate},
             {"conflict_rate_mean", mean_conflict_rate},
             {"deadlocks_total", total_deadlocks},
         }},
        {"correctness_failure", correctness_failure},
    };
  }

  /**
   * Long-format CSV: trial,metric,class,value. The metric/class key set is
   * the union across trials, so every trial emits the same row count.
   */
  void write_csv(std::ostream& out) const {
    std::set<std::string> classes;
    std::set<std::string> stages;
    std::set<int> retry_keys;
    for (const auto& t : trials) {
      for (const auto& [cls, unused] : t.latency) classes.insert(cls);
      for (const auto& [stage, unused] : t.overhead_fractions)
        stages.insert(stage);
      for (const auto& [k, unused] : t.retry_histogram) retry_keys.insert(k);
    }
    auto num = [](double v) { return nlohmann::json(v).dump(); };
    out << "trial,metric,class,value\n";
    for (const auto& t : trials) {
      auto row = [&](const std::string& metric, const std::string& cls,
                     const std::string& value) {
        out << t.trial << ',' << metric << ',' << cls << ',' << value << '\n';
      };
      row("duration_s", "", num(t.duration_s));
      row("throughput", "", num(t.throughput));
      row("abort_rate", "", num(t.abort_rate));
      row("conflict_rate", "", num(t.conflict_rate));
      row("deadlock_count", "", std::to_string(t.deadlock_count));
      row("avg_lock_wait_ms", "", num(t.avg_lock_wait_ms));
      row("committed", "", std::to_string(t.committed));
      row("aborted", "", std::to_string(t.aborted));
      row("lock_entries_after", "", std::to_string(t.lock_entries_after));
      for (const auto& cls : classes) {
        LatencySummary s;
        auto it = t.latency.find(cls);
        if (it != t.latency.end()) {
          s = it->second;
        }
        row("latency_mean_ms", cls, num(s.mean_ms));
        row("latency_stddev_ms", cls, num(s.stddev_ms));
        row("latency_p50_ms", cls, num(s.p50_ms));
        row("latency_p99_ms", cls, num(s.p99_ms));
      }
      for (const auto& stage : stages) {
        auto it = t.overhead_fractions.find(stage);
        row("overhead_fraction", stage,
            num(it == t.overhead_fractions.end() ? 0.0 : it->second));
      }
      for (const int k : retry_keys) {
        auto it = t.retry_histogram.find(k);
        row("retries", std::to_string(k),
            std::to_string(it == t.retry_histogram.end() ? 0 : it->second));
      }
    }
  }
};

/** Raw per-trial material for offline analysis and verification. */
struct TrialArtifacts {
  std::vector<Event> events;
  std::vector<WaitGraphSample> samples;
  LockStats lock_stats;
  std::uint64_t release_misses = 0;
  std::vector<LockAuditRecord> lock_audit;
};

struct BenchResult {
  MetricsReport report;
  std::vector<TrialArtifacts> artifacts;  // empty when an observer was given
};

using TrialObserver =
    std::function<void(std::size_t, const TrialMetrics&, const TrialArtifacts&)>;

namespace detail {

inline constexpr std::uint64_t kSeedStride = 1000003ull;

[[nodiscard]] inline std::string class_name_of(
    const std::vector<Operation>& ops) {
  auto [reads, writes] = derive_access_sets(ops);
  if (!reads.empty() && !writes.empty()) {
    return to_string(TransactionType::kHybrid);
  }
  if (!writes.empty()) {
    return to_string(TransactionType::kWrite);
  }
  return to_string(TransactionType::kRead);
}

struct WorkerSample {
  Nanos start{0};
  Nanos latency{0};
  std::string cls;
  bool committed = false;
  std::optional<FailureReason> reason;
  int retries = 0;
  bool contended = false;
  TransactionContext::StageNanos stages;
};

/** The uncoordinated client: every RMW degrades to get + update. */
inline bool run_raw_transaction(InMemoryStore& store,
                                const std::vector<Operation>& ops,
                                EventSink* sink, const TransactionId& id,
                                Nanos now) {
  auto emit = [&](EventKind kind, const DocumentId& doc) {
    if (sink != nullptr) {
      Event e;
      e.t = now;
      e.tx = id;
      e.kind = kind;
      e.doc = doc;
      sink->emit(std::move(e));
    }
  };
  emit(EventKind::kInit, DocumentId{});
  bool ok = true;
  for (const auto& op : ops) {
    switch (op.kind) {
      case OpKind::kRead:
        (void)store.get(op.doc);
        emit(EventKind::kRead, op.doc);
        break;
      case OpKind::kReadModifyWrite: {
        const auto current = store.get(op.doc);
        emit(EventKind::kRead, op.doc);
        if (!current) {
          ok = false;
          break;
        }
        Document scratch = *current;
        InMemoryStore::apply_modify(scratch, *op.modify);
        FieldMap changed;
        if (op.modify->kind == ModifySpec::Kind::kSetFields) {
          for (const auto& [k, unused] : op.modify->fields) {
            changed[k] = scratch.fields[k];
          }
        } else {
          changed[op.modify->field] = scratch.fields[op.modify->field];
        }
        const auto result =
            store.apply_write(Operation::update(op.doc, std::move(changed)));
        ok = ok && result.outcome == WriteOutcome::kApplied;
        emit(EventKind::kWrite, op.doc);
        break;
      }
      default: {
        const auto result = store.apply_write(op);
        ok = ok && result.outcome == WriteOutcome::kApplied;
        emit(EventKind::kWrite, op.doc);
        break;
      }
    }
  }
  if (sink != nullptr) {
    Event e;
    e.t = now;
    e.tx = id;
    e.kind = EventKind::kCommit;
    sink->emit(std::move(e));
  }
  return ok;
}

/**
 * Keeps warmup out of the captured history. Events are dropped until
 * enable(); afterwards only transactions whose INIT arrived post-enable
 * are forwarded, so the history never contains a partial transaction.
 * Without the gate, an unmeasured warmup at in-memory speed buffers
 * millions of events that no consumer ever reads.
 */
class GatedSink final : public EventSink {
 public:
  explicit GatedSink(EventSink& inner) : inner_(inner) {}

  void enable() { enabled_.store(true, std::memory_order_release); }

  void emit(Event e) override {
    if (!enabled_.load(std::memory_order_acquire)) {
      return;
    }
    {
      std::lock_guard<std::mutex> g(mu_);
      if (e.kind == EventKind::kInit) {
        admitted_.insert(e.tx);
      } else if (!admitted_.contains(e.tx)) {
        return;
      }
    }
    inner_.emit(std::move(e));
  }

 private:
  EventSink& inner_;
  std::atomic<bool> enabled_{false};
  std::mutex mu_;
  std::unordered_set<TransactionId> admitted_;
};

inline TrialMetrics run_trial(const BenchConfig& cfg, int trial,
                              TrialArtifacts& artifacts) {
  const std::uint64_t seed_t =
      cfg.seed + kSeedStride * static_cast<std::uint64_t>(trial);

  std::shared_ptr<Clock> clock;
  if (cfg.virtual_time) {
    clock = std::make_shared<VirtualClock>();
  } else {
    clock = std::make_shared<RealClock>();
  }

  InMemoryStore store(clock);
  load_phase(cfg.workload, store, seed_t);
  if (cfg.store_latency) {
    LatencyProfile profile = *cfg.store_latency;
    profile.seed = seed_t ^ 0x9E3779B97F4A7C15ull;
    store.set_latency(profile);
  }

  BackoffPolicy policy = cfg.pipeline.backoff;
  policy.seed = seed_t ^ 0xC2B2AE3D27D4EB4Full;
  LockManager locks(clock, policy, cfg.pipeline.lock_timeout);
  locks.set_audit_enabled(cfg.audit_locks);

  std::unique_ptr<MemoryEventSink> sink;
  std::unique_ptr<GatedSink> gate;
  if (cfg.capture_history) {
    sink = std::make_unique<MemoryEventSink>();
    gate = std::make_unique<GatedSink>(*sink);
  }

  PipelineConfig pcfg = cfg.pipeline;
  pcfg.backoff = policy;
  pcfg.id_seed = seed_t ^ 0xA0761D6478BD642Full;
  pcfg.skip_readiness_check = (cfg.mode == BenchMode::kBaselineNoStage3);
  std::optional<Pipeline> pipeline;
  if (cfg.mode != BenchMode::kRawStore) {
    pipeline.emplace(clock, store, locks, gate.get(), pcfg);
  }

  // Maintenance: sweep expired deadlines and sample the wait graph.
  std::vector<WaitGraphSample> samples;
  std::atomic<bool> stop_maintenance{false};
  std::thread maintenance;
  if (!cfg.virtual_time && cfg.mode != BenchMode::kRawStore) {
    maintenance = std::thread([&] {
      const Nanos tick =
          std::min(Nanos(std::chrono::milliseconds(5)), cfg.sample_interval);
      Nanos next_sample = clock->now() + cfg.sample_interval;
      while (!stop_maintenance.load(std::memory_order_relaxed)) {
        const Nanos now = clock->now();
        locks.expire_deadlines(now);
        if (now >= next_sample) {
          samples.push_back(WaitGraphSample{now, locks.wait_graph_snapshot()});
          next_sample = now + cfg.sample_interval;
        }
        clock->sleep_for(tick);
      }
    });
  }

  std::atomic<std::int64_t> remaining{
      static_cast<std::int64_t>(cfg.transactions)};
  std::atomic<std::uint64_t> raw_ids{0};
  const Nanos measured_from = clock->now() + (cfg.virtual_time ? Nanos::zero()
                                                               : cfg.warmup);
  std::vector<std::vector<WorkerSample>> worker_samples(
      static_cast<std::size_t>(cfg.clients));
  std::mutex error_mu;
  std::string first_error;

  auto worker_body = [&](int worker_index) {
    WorkloadGenerator gen(cfg.workload,
                          seed_t + static_cast<std::uint64_t>(worker_index));
    const std::string client = "client-" + std::to_string(worker_index);
    auto run_one = [&](bool measured) {
      std::vector<Operation> ops = gen.next_transaction();
      WorkerSample s;
      s.cls = class_name_of(ops);
      s.start = clock->now();
      if (cfg.mode == BenchMode::kRawStore) {
        const TransactionId id{
            "raw-" + std::to_string(raw_ids.fetch_add(1) + 1)};
        s.committed =
            run_raw_transaction(store, ops, gate.get(), id, clock->now());
      } else {
        auto outcome = pipeline->run_transaction(std::move(ops), client);
        s.committed = outcome.result.ok();
        s.reason = outcome.result.reason;
        s.retries = outcome.tc.retry_count;
        s.contended = outcome.tc.lock_contended;
        s.stages = outcome.tc.stages;
      }
      s.latency = clock->now() - s.start;
      if (measured) {
        worker_samples[static_cast<std::size_t>(worker_index)].push_back(
            std::move(s));
      }
    };
    while (clock->now() < measured_from) {
      run_one(false);
    }
    if (gate) {
      gate->enable();  // idempotent; first worker out of warmup opens it
    }
    while (remaining.fetch_sub(1, std::memory_order_relaxed) > 0) {
      run_one(true);
    }
  };

  auto guarded_worker = [&](int worker_index) {
    try {
      worker_body(worker_index);
    } catch (const std::exception& ex) {
      std::lock_guard<std::mutex> g(error_mu);
      if (first_error.empty()) {
        first_error = ex.what();
      }
      remaining.store(0);  // stop the other workers promptly
    }
  };

  if (cfg.virtual_time) {
    guarded_worker(0);
  } else {
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(cfg.clients));
    for (int w = 0; w < cfg.clients; ++w) {
      workers.emplace_back(guarded_worker, w);
    }
    for (auto& t : workers) {
      t.join();
    }
  }

  if (maintenance.joinable()) {
    stop_maintenance.store(true);
    maintenance.join();
  }
  if (!first_error.empty()) {
    throw std::runtime_error("benchmark worker failed: " + first_error);
  }

  // ── metrics ──
  TrialMetrics m;
  m.trial = trial;
  m.seed = seed_t;
  m.lock_entries_after = locks.entry_count();
  const LockStats lock_stats = locks.stats();
  m.lock_acquisitions = lock_stats.acquisitions;
  m.lock_failures = lock_stats.failures;
  const std::uint64_t lock_outcomes =
      lock_stats.acquisitions + lock_stats.failures;
  m.avg_lock_wait_ms =
      lock_outcomes == 0
          ? 0.0
          : static_cast<double>(lock_stats.total_wait.count()) / 1e6 /
                static_cast<double>(lock_outcomes);

  std::map<std::string, std::vector<double>> latencies;
  Nanos first_start = Nanos::max();
  Nanos last_end = Nanos::min();
  std::uint64_t conflicted = 0;
  TransactionContext::StageNanos stage_sums;
  Nanos total_latency{0};
  std::uint64_t committed_count = 0;
  for (const auto& per_worker : worker_samples) {
    for (const auto& s : per_worker) {
      first_start = std::min(first_start, s.start);
      last_end = std::max(last_end, s.start + s.latency);
      if (s.committed) {
        m.committed++;
      } else {
        m.aborted++;
        if (s.reason) {
          m.abort_reasons[to_string(*s.reason)]++;
        }
      }
      m.retry_histogram[s.retries]++;
      const bool conflict =
          s.retries > 0 || s.contended ||
          (s.reason && (*s.reason == FailureReason::kLockTimeout ||
                        *s.reason == FailureReason::kAutoReleased));
      if (conflict) {
        conflicted++;
      }
      if (s.committed) {
        const double ms = static_cast<double>(s.latency.count()) / 1e6;
        latencies[s.cls].push_back(ms);
        latencies["all"].push_back(ms);
        committed_count++;
        total_latency += s.latency;
        stage_sums.init += s.stages.init;
        stage_sums.classify += s.stages.classify;
        stage_sums.assess += s.stages.assess;
        stage_sums.lock += s.stages.lock;
        stage_sums.exec += s.stages.exec;
        stage_sums.commit += s.stages.commit;
      }
    }
  }
  const std::uint64_t terminals = m.committed + m.aborted;
  m.abort_rate = terminals == 0
                     ? 0.0
                     : static_cast<double>(m.aborted) /
                           static_cast<double>(terminals);
  m.conflict_rate = terminals == 0
                        ? 0.0
                        : static_cast<double>(conflicted) /
                              static_cast<double>(terminals);
  const Nanos duration =
      last_end > first_start ? last_end - first_start : Nanos(1);
  m.duration_s = static_cast<double>(duration.count()) / 1e9;
  m.throughput = static_cast<double>(terminals) / m.duration_s;
  for (auto& [cls, xs] : latencies) {
    m.latency[cls] = summarize_latency(std::move(xs));
  }
  if (cfg.mode != BenchMode::kRawStore && committed_count > 0 &&
      total_latency > Nanos::zero()) {
    const auto frac = [&](Nanos part) {
      return static_cast<double>(part.count()) /
             static_cast<double>(total_latency.count());
    };
    m.overhead_fractions["init"] = frac(stage_sums.init);
    m.overhead_fractions["classify"] = frac(stage_sums.classify);
    m.overhead_fractions["assess"] = frac(stage_sums.assess);
    m.overhead_fractions["lock"] = frac(stage_sums.lock);
    m.overhead_fractions["exec"] = frac(stage_sums.exec);
    m.overhead_fractions["commit"] = frac(stage_sums.commit);
  }
  m.deadlock_count =
      persistent_cycles(samples, cfg.pipeline.lock_timeout).size();

  if (sink && cfg.mode != BenchMode::kRawStore) {
    artifacts.events = sink->snapshot();
    m.serializable = is_conflict_serializable(
        ExecutionHistory::from_events(artifacts.events));
  } else if (sink) {
    artifacts.events = sink->snapshot();
  }
  artifacts.samples = std::move(samples);
  artifacts.lock_stats = lock_stats;
  artifacts.release_misses = locks.release_misses();
  if (cfg.audit_locks) {
    artifacts.lock_audit = locks.audit_log();
  }
  return m;
}

}  // namespace detail

/**
 * Runs trials back to back with derived per-trial seeds. When an observer
 * is given, per-trial artifacts are handed to it and dropped; otherwise
 * they are returned.
 */
inline BenchResult run_benchmark_detailed(const BenchConfig& cfg,
                                          const TrialObserver& observer = {}) {
  cfg.validate();
  BenchResult result;
  result.report.mode = to_string(cfg.mode);
  result.report.virtual_time = cfg.virtual_time;
  result.report.config = cfg.to_json();
  result.report.config_hash = fnv1a_hex(result.report.config.dump());

  std::vector<double> throughputs;
  std::vector<double> abort_rates;
  std::vector<double> conflict_rates;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    TrialArtifacts artifacts;
    TrialMetrics metrics = detail::run_trial(cfg, trial, artifacts);
    throughputs.push_back(metrics.throughput);
    abort_rates.push_back(metrics.abort_rate);
    conflict_rates.push_back(metrics.conflict_rate);
    result.report.total_deadlocks += metrics.deadlock_count;
    if (metrics.serializable.has_value() && !*metrics.serializable) {
      result.report.correctness_failure = true;
    }
    if (observer) {
      observer(static_cast<std::size_t>(trial), metrics, artifacts);
    } else {
      result.artifacts.push_back(std::move(artifacts));
    }
    result.report.trials.push_back(std::move(metrics));
  }
  result.report.throughput_ci = ci95(throughputs);
  result.report.mean_abort_rate = mean_of(abort_rates);
  result.report.mean_conflict_rate = mean_of(conflict_rates);
  return result;
}

[[nodiscard]] inline MetricsReport run_benchmark(const BenchConfig& cfg) {
  return run_benchmark_detailed(cfg).report;
}

/** Side-by-side framework vs raw-store run over identical seeds. */
struct OverheadReport {
  MetricsReport framework;
  MetricsReport raw;
  double total_overhead = 0.0;  // (framework mean latency / raw) − 1
  std::map<std::string, double> stage_fractions;

  [[nodiscard]] nlohmann::json to_json() const {
    return nlohmann::json{
        {"framework", framework.to_json()},
        {"raw", raw.to_json()},
        {"total_overhead", total_overhead},
        {"stage_fractions", stage_fractions},
    };
  }
};

[[nodiscard]] inline OverheadReport measure_overhead(const BenchConfig& cfg) {
  OverheadReport report;
  BenchConfig fw = cfg;
  fw.mode = BenchMode::kFramework;
  report.framework = run_benchmark(fw);
  BenchConfig raw = cfg;
  raw.mode = BenchMode::kRawStore;
  report.raw = run_benchmark(raw);

  const double fw_mean = report.framework.mean_latency_ms("all");
  const double raw_mean = report.raw.mean_latency_ms("all");
  report.total_overhead = raw_mean > 0.0 ? fw_mean / raw_mean - 1.0 : 0.0;

  std::map<std::string, std::vector<double>> fractions;
  for (const auto& t : report.framework.trials) {
    for (const auto& [stage, f] : t.overhead_fractions) {
      fractions[stage].push_back(f);
    }
  }
  for (const auto& [stage, xs] : fractions) {
    report.stage_fractions[stage] = mean_of(xs);
  }
  return report;
}

enum class SweepParam { kLockTimeout, kInitialBackoff, kMaxBackoff, kMaxRetries };

[[nodiscard]] inline const char* to_string(SweepParam p) {
  switch (p) {
    case SweepParam::kLockTimeout: return "lock-timeout";
    case SweepParam::kInitialBackoff: return "initial-backoff";
    case SweepParam::kMaxBackoff: return "max-backoff";
    case SweepParam::kMaxRetries: return "max-retries";
  }
  return "?";
}

[[nodiscard]] inline std::optional<SweepParam> sweep_param_from(
    const std::string& name) {
  if (name == "lock-timeout") return SweepParam::kLockTimeout;
  if (name == "initial-backoff") return SweepParam::kInitialBackoff;
  if (name == "max-backoff") return SweepParam::kMaxBackoff;
  if (name == "max-retries") return SweepParam::kMaxRetries;
  return std::nullopt;
}

struct SweepPoint {
  SweepParam param = SweepParam::kLockTimeout;
  double value = 0.0;  // milliseconds, or a count for max-retries
  MetricsReport report;

  [[nodiscard]] nlohmann::json to_json() const {
    return nlohmann::json{{"param", std::string(to_string(param))},
                          {"value", value},
                          {"report", report.to_json()}};
  }
};

/**
 * Runs the benchmark once per value of the chosen parameter, all other
 * settings (seeds included) held fixed. Values are validated against the
 * tested ranges: lock-timeout 10–1000 ms, initial-backoff 1–50 ms,
 * max-backoff 100–2000 ms, max-retries 1–10.
 */
[[nodiscard]] inline std::vector<SweepPoint> sweep(
    const BenchConfig& base, SweepParam param,
    const std::vector<double>& values) {
  struct Range {
    double lo;
    double hi;
  };
  const Range range = [&] {
    switch (param) {
      case SweepParam::kLockTimeout: return Range{10, 1000};
      case SweepParam::kInitialBackoff: return Range{1, 50};
      case SweepParam::kMaxBackoff: return Range{100, 2000};
      case SweepParam::kMaxRetries: return Range{1, 10};
    }
    return Range{0, 0};
  }();
  for (const double v : values) {
    if (v < range.lo || v > range.hi) {
      throw std::invalid_argument(
          std::string(to_string(param)) + " value " + std::to_string(v) +
          " outside the tested range [" + std::to_string(range.lo) + ", " +
          std::to_string(range.hi) + "]");
    }
  }

  std::vector<SweepPoint> points;
  for (const double v : values) {
    BenchConfig cfg = base;
    const auto as_ns = [](double ms) {
      return Nanos(static_cast<std::int64_t>(ms * 1e6));
    };
    switch (param) {
      case SweepParam::kLockTimeout:
        cfg.pipeline.lock_timeout = as_ns(v);
        break;
      case SweepParam::kInitialBackoff:
        cfg.pipeline.backoff.initial = as_ns(v);
        break;
      case SweepParam::kMaxBackoff:
        cfg.pipeline.backoff.max = as_ns(v);
        break;
      case SweepParam::kMaxRetries:
        cfg.pipeline.max_retries = static_cast<int>(v);
        break;
    }
    SweepPoint point;
    point.param = param;
    point.value = v;
    point.report = run_benchmark(cfg);
    points.push_back(std::move(point));
  }
  return points;
}

enum class ReportFormat { kJson, kCsv };

/** Writes the report to a file; JSON is pretty-printed and stable. */
inline void emit_report(const MetricsReport& report, ReportFormat format,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open report file for writing: " + path);
  }
  if (format == ReportFormat::kJson) {
    out << report.to_json().dump(2) << '\n';
  } else {
    report.write_csv(out);
  }
}

}  // namespace dtx
