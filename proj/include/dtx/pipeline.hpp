#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dtx/clock.hpp"
#include "dtx/event_log.hpp"
#include "dtx/lock_manager.hpp"
#include "dtx/retry_queue.hpp"
#include "dtx/store.hpp"
#include "dtx/types.hpp"

namespace dtx {

enum class Readiness { kReady, kNotReady };

enum class ExecStatus { kSuccess, kFailure, kRetryScheduled };

enum class FailureReason {
  kMaxRetriesExceeded,
  kLockTimeout,
  kConstraintViolation,
  kAutoReleased,
};

[[nodiscard]] inline const char* to_string(FailureReason r) {
  switch (r) {
    case FailureReason::kMaxRetriesExceeded: return "MAX_RETRIES_EXCEEDED";
    case FailureReason::kLockTimeout: return "LOCK_TIMEOUT";
    case FailureReason::kConstraintViolation: return "CONSTRAINT_VIOLATION";
    case FailureReason::kAutoReleased: return "AUTO_RELEASED";
  }
  return "?";
}

struct ExecutionResult {
  ExecStatus status = ExecStatus::kSuccess;
  std::optional<FailureReason> reason;

  [[nodiscard]] bool ok() const { return status == ExecStatus::kSuccess; }
};

/** Lock mode used for the read-only documents of a hybrid transaction. */
enum class HybridReadLocks { kExclusive, kShared };

struct PipelineConfig {
  Nanos lock_timeout = std::chrono::milliseconds(100);
  BackoffPolicy backoff;
  int max_retries = 3;
  // Hybrid transactions lock everything exclusively by default (the
  // strictest mode for their access pattern); kShared relaxes their
  // read-only documents to shared locks.
  HybridReadLocks hybrid_read_locks = HybridReadLocks::kExclusive;
  std::uint64_t id_seed = 0;
  // Ablation switch: report every readiness assessment as READY, so all
  // conflicts surface at lock acquisition instead of being deferred.
  bool skip_readiness_check = false;
};

class RegistrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/**
 * Coordinates transactions through four stages:
 *
 *   1. init      — identity, timestamp, registration
 *   2. classify  — type and access sets from the operation list
 *   3. assess    — defer transactions whose conflicts are already visible
 *   4. execute   — strict two-phase locking around the store operations
 *
 * All locks are acquired, in canonical document order, before the first
 * store operation, and released only after the commit/abort decision. That
 * ordering discipline plus the bounded acquisition timeout gives
 * conflict-serializable histories with no unresolvable deadlocks.
 *
 * Thread safety: one worker drives one transaction; any number of workers
 * may share a Pipeline. The shared pieces (registry, retry queue, expiry
 * coordination) take care of their own locking.
 */
class Pipeline {
 public:
  Pipeline(std::shared_ptr<Clock> clock, Store& store, LockManager& locks,
           EventSink* sink, PipelineConfig config = {})
      : clock_(std::move(clock)),
        store_(store),
        locks_(locks),
        sink_(sink),
        cfg_(config),
        id_rng_(config.id_seed) {
    locks_.set_expiry_filter(
        [this](const DocumentId& doc, const TransactionId& tx) {
          return expiry_decision(doc, tx);
        });
  }

  [[nodiscard]] const PipelineConfig& config() const { return cfg_; }

  /**
   * Stage 1: creates and registers a context. Throws std::invalid_argument
   * on a malformed operation and RegistrationError on an id collision;
   * neither leaves a context behind.
   */
  TransactionContext init_transaction(std::vector<Operation> ops,
                                      std::string client_id = "anonymous") {
    const Nanos t0 = clock_->now();
    for (const auto& op : ops) {
      op.validate();
    }
    TransactionContext tc;
    tc.id = next_id();
    tc.timestamp = t0;
    tc.client_id = std::move(client_id);
    tc.max_retries = cfg_.max_retries;
    tc.operations = std::move(ops);
    tc.runtime = std::make_shared<TxRuntime>();
    {
      std::lock_guard<std::mutex> g(registry_mu_);
      auto [it, inserted] = registry_.emplace(tc.id, tc.runtime);
      if (!inserted) {
        throw RegistrationError("transaction id already registered: " +
                                tc.id.value);
      }
    }
    emit_simple(tc, EventKind::kInit);
    tc.stages.init += clock_->now() - t0;
    return tc;
  }

  /**
   * Stage 2: derives the transaction type, access sets, and lock mode from
   * the operation list. Pure — no pipeline state is touched, and calling it
   * twice yields the same result.
   */
  [[nodiscard]] static TransactionContext classify(TransactionContext tc) {
    auto [reads, writes] = derive_access_sets(tc.operations);
    const bool has_reads = !reads.empty();
    const bool has_writes = !writes.empty();
    if (has_reads && has_writes) {
      tc.type = TransactionType::kHybrid;
      tc.read_set = std::move(reads);
      tc.write_set = std::move(writes);
      tc.lock_mode = LockMode::kExclusive;  // strictest mode for mixed access
    } else if (has_writes) {
      tc.type = TransactionType::kWrite;
      tc.write_set = std::move(writes);
      tc.lock_mode = LockMode::kExclusive;
    } else {
      tc.type = TransactionType::kRead;
      tc.read_set = std::move(reads);
      tc.lock_mode = LockMode::kShared;
    }
    return tc;
  }

  /**
   * Stage 3: looks for conflicts that are already visible in the lock
   * table. Write-set conflicts (any other holder) are checked first; only
   * a transaction still unchallenged has its read set checked against
   * pending exclusive writes. READY moves the state forward; NOT_READY
   * records the conflicts and leaves the transaction PENDING.
   */
  std::pair<Readiness, std::vector<ConflictRecord>> assess_readiness(
      TransactionContext& tc) {
    const Nanos t0 = clock_->now();
    std::vector<ConflictRecord> conflicts;
    if (!cfg_.skip_readiness_check) {
      if (tc.type == TransactionType::kWrite ||
          tc.type == TransactionType::kHybrid) {
        for (const auto& doc : tc.write_set) {
          const auto info = locks_.current_holder(doc);
          if (!info) {
            continue;
          }
          for (const auto& holder : info->holders) {
            if (holder != tc.id) {
              conflicts.push_back(ConflictRecord{doc, holder});
              break;
            }
          }
        }
      }
      if (conflicts.empty() && (tc.type == TransactionType::kRead ||
                                tc.type == TransactionType::kHybrid)) {
        for (const auto& doc : tc.read_set) {
          if (!locks_.has_pending_write(doc)) {
            continue;
          }
          const auto info = locks_.current_holder(doc);
          if (info && info->holders.size() == 1 &&
              info->holders.front() == tc.id) {
            continue;  // our own lock is not a conflict
          }
          conflicts.push_back(ConflictRecord{doc, std::nullopt});
        }
      }
    }
    if (!conflicts.empty()) {
      tc.last_conflicts = conflicts;
      tc.conflict_timestamp = clock_->now();
      Event e = base_event(tc, EventKind::kNotReady);
      e.lock_count = static_cast<int>(conflicts.size());
      emit(std::move(e));
      tc.stages.assess += clock_->now() - t0;
      return {Readiness::kNotReady, std::move(conflicts)};
    }
    tc.last_conflicts.clear();
    tc.set_state(TxState::kReady);
    emit_simple(tc, EventKind::kReady);
    tc.stages.assess += clock_->now() - t0;
    return {Readiness::kReady, {}};
  }

  /**
   * Stage 4. NOT_READY transactions are re-queued with exponential backoff
   * until their retry budget runs out. READY transactions acquire every
   * lock in canonical order, run their operations, and commit — or roll
   * back on a constraint failure, a lock-acquisition timeout, or a lock
   * lost to deadline expiry.
   */
  ExecutionResult execute(TransactionContext& tc, Readiness readiness) {
    if (readiness == Readiness::kNotReady) {
      return handle_not_ready(tc);
    }

    tc.set_state(TxState::kExecuting);
    emit_simple(tc, EventKind::kExecute);

    if (!acquire_all_locks(tc)) {
      finish(tc, FailureReason::kLockTimeout, /*rolled_back=*/false);
      return {ExecStatus::kFailure, FailureReason::kLockTimeout};
    }

    const Nanos exec0 = clock_->now();
    bool applied_all = true;
    for (const auto& op : tc.operations) {
      if (!begin_operation(tc, op)) {
        applied_all = false;  // a lock expired; stop before touching more
        break;
      }
      if (!run_operation(tc, op)) {
        applied_all = false;
        break;
      }
    }
    tc.stages.exec += clock_->now() - exec0;

    // Make deadline expiry deterministic even without a background
    // sweeper, then take the commit/abort decision under the runtime
    // latch so it cannot race a concurrent expiry.
    locks_.expire_deadlines(clock_->now());
    std::optional<FailureReason> failure;
    if (!applied_all) {
      failure = FailureReason::kConstraintViolation;
    }
    {
      std::lock_guard<std::mutex> g(tc.runtime->mu);
      if (tc.runtime->abort_required) {
        failure = FailureReason::kAutoReleased;
      } else if (!failure) {
        tc.runtime->completed = true;
      }
    }

    if (failure) {
      const Nanos rb0 = clock_->now();
      rollback(tc);
      tc.stages.exec += clock_->now() - rb0;
      finish(tc, *failure, /*rolled_back=*/true);
      return {ExecStatus::kFailure, *failure};
    }

    const Nanos c0 = clock_->now();
    tc.set_state(TxState::kCommitted);
    tc.commit_time = clock_->now();
    emit_simple(tc, EventKind::kCommit);
    release_all_locks(tc);
    cleanup(tc);
    tc.stages.commit += clock_->now() - c0;
    return {ExecStatus::kSuccess, std::nullopt};
  }

  /**
   * Restores the pre-image of every document this transaction wrote, in
   * reverse touch order, and moves it to ABORTED. The caller still holds
   * exclusive locks on those documents, which is what makes the restore
   * safe against concurrent owners.
   */
  void rollback(TransactionContext& tc) {
    if (tc.state != TxState::kExecuting) {
      throw std::logic_error("rollback outside the execution stage");
    }
    for (auto it = tc.pre_images.rbegin(); it != tc.pre_images.rend(); ++it) {
      store_.restore(it->first, it->second);
    }
    tc.pre_images.clear();
    tc.set_state(TxState::kAborted);
  }

  struct RunOutcome {
    ExecutionResult result;
    TransactionContext tc;
  };

  /** Drives one transaction through all four stages, retries included. */
  RunOutcome run_transaction(std::vector<Operation> ops,
                             std::string client_id = "anonymous") {
    TransactionContext tc = init_transaction(std::move(ops),
                                             std::move(client_id));
    const Nanos c0 = clock_->now();
    tc = classify(std::move(tc));
    Event ce = base_event(tc, EventKind::kClassify);
    ce.detail = to_string(tc.type);
    emit(std::move(ce));
    tc.stages.classify += clock_->now() - c0;

    for (;;) {
      auto [readiness, conflicts] = assess_readiness(tc);
      ExecutionResult result = execute(tc, readiness);
      if (result.status != ExecStatus::kRetryScheduled) {
        return RunOutcome{result, std::move(tc)};
      }
      clock_->sleep_until(*tc.next_wake);
      retries_.remove(tc.id);
      tc.next_wake.reset();
    }
  }

  /** Backoff before retry k (0-based): min(initial · multiplier^k, max). */
  [[nodiscard]] Nanos retry_delay(int retry_index) const {
    Nanos d = cfg_.backoff.initial;
    for (int i = 0; i < retry_index; ++i) {
      d = Nanos(static_cast<std::int64_t>(static_cast<double>(d.count()) *
                                          cfg_.backoff.multiplier));
      if (d >= cfg_.backoff.max) {
        return cfg_.backoff.max;
      }
    }
    return std::min(d, cfg_.backoff.max);
  }

  [[nodiscard]] std::size_t active_transactions() const {
    std::lock_guard<std::mutex> g(registry_mu_);
    return registry_.size();
  }

  [[nodiscard]] const RetryQueue& retry_queue() const { return retries_; }

 private:
  // ─────────────────── stage-4 helpers ───────────────────

  ExecutionResult handle_not_ready(TransactionContext& tc) {
    if (tc.retry_count < tc.max_retries) {
      const int prior = tc.retry_count;
      tc.retry_count++;
      const Nanos wake = clock_->now() + retry_delay(prior);
      tc.next_wake = wake;
      retries_.push(RetryQueue::Entry{wake, tc.timestamp, tc.id});
      Event e = base_event(tc, EventKind::kRetry);
      e.retry = tc.retry_count;
      e.wake = wake;
      emit(std::move(e));
      return {ExecStatus::kRetryScheduled, std::nullopt};
    }
    tc.set_state(TxState::kAborted);
    Event e = base_event(tc, EventKind::kAbort);
    e.detail = to_string(FailureReason::kMaxRetriesExceeded);
    emit(std::move(e));
    cleanup(tc);
    return {ExecStatus::kFailure, FailureReason::kMaxRetriesExceeded};
  }

  /** Acquires every lock in canonical order; rolls the grants back on a
      timeout. Returns whether all locks are held. */
  bool acquire_all_locks(TransactionContext& tc) {
    const Nanos t0 = clock_->now();
    std::set<DocumentId> docs = tc.write_set;
    docs.insert(tc.read_set.begin(), tc.read_set.end());
    for (const auto& doc : docs) {
      const LockMode mode = mode_for(tc, doc);
      AcquireTrace trace;
      const AcquireResult r = locks_.acquire_with_timeout(
          doc, tc.id, mode, cfg_.lock_timeout, cfg_.backoff, &trace);
      if (trace.attempts > 1) {
        tc.lock_contended = true;
      }
      if (r != AcquireResult::kSuccess) {
        release_all_locks(tc);
        tc.stages.lock += clock_->now() - t0;
        return false;
      }
      tc.acquired_locks.emplace_back(doc, mode);
      Event e = base_event(tc, EventKind::kLock);
      e.doc = doc;
      e.mode = mode;
      emit(std::move(e));
    }
    Event e = base_event(tc, EventKind::kLocked);
    e.lock_count = static_cast<int>(tc.acquired_locks.size());
    emit(std::move(e));
    tc.stages.lock += clock_->now() - t0;
    return true;
  }

  [[nodiscard]] LockMode mode_for(const TransactionContext& tc,
                                  const DocumentId& doc) const {
    if (tc.write_set.contains(doc)) {
      return LockMode::kExclusive;
    }
    if (tc.type == TransactionType::kHybrid &&
        cfg_.hybrid_read_locks == HybridReadLocks::kExclusive) {
      return LockMode::kExclusive;
    }
    return LockMode::kShared;
  }

  /** Declares the upcoming operation under the runtime latch. Returns false
      when the transaction has been flagged for abort. */
  bool begin_operation(TransactionContext& tc, const Operation& op) {
    std::lock_guard<std::mutex> g(tc.runtime->mu);
    if (tc.runtime->abort_required) {
      return false;
    }
    if (op.in_write_class()) {
      tc.runtime->write_touched.insert(op.doc);
    }
    return true;
  }

  /** Runs one operation; returns false on a failed write. */
  bool run_operation(TransactionContext& tc, const Operation& op) {
    if (op.kind == OpKind::kRead) {
      (void)store_.get(op.doc);
      Event e = base_event(tc, EventKind::kRead);
      e.doc = op.doc;
      emit(std::move(e));
      return true;
    }
    const WriteResult result = store_.apply_write(op);
    if (op.kind == OpKind::kReadModifyWrite) {
      Event e = base_event(tc, EventKind::kRead);
      e.doc = op.doc;
      emit(std::move(e));
    }
    if (result.outcome != WriteOutcome::kApplied) {
      return false;
    }
    bool first_touch = true;
    for (const auto& [doc, pre] : tc.pre_images) {
      if (doc == op.doc) {
        first_touch = false;
        break;
      }
    }
    if (first_touch) {
      tc.pre_images.emplace_back(op.doc, result.pre_image);
    }
    Event e = base_event(tc, EventKind::kWrite);
    e.doc = op.doc;
    emit(std::move(e));
    return true;
  }

  void release_all_locks(TransactionContext& tc) {
    for (auto it = tc.acquired_locks.rbegin(); it != tc.acquired_locks.rend();
         ++it) {
      // A grant lost to deadline expiry is already gone; only a real
      // release is worth an event.
      if (locks_.release(it->first, tc.id)) {
        Event e = base_event(tc, EventKind::kRelease);
        e.doc = it->first;
        e.mode = it->second;
        emit(std::move(e));
      }
    }
    tc.acquired_locks.clear();
  }

  /** Terminal bookkeeping for a failure discovered in stage 4. */
  void finish(TransactionContext& tc, FailureReason reason, bool rolled_back) {
    if (!rolled_back) {
      // Lock timeout: nothing was written, so there is nothing to restore.
      tc.set_state(TxState::kAborted);
    }
    Event e = base_event(tc, EventKind::kAbort);
    e.detail = to_string(reason);
    emit(std::move(e));
    release_all_locks(tc);
    cleanup(tc);
  }

  /** Marks completion, releases bookkeeping, unregisters the context. */
  void cleanup(TransactionContext& tc) {
    {
      std::lock_guard<std::mutex> g(tc.runtime->mu);
      tc.runtime->completed = true;
    }
    locks_.clear_auto_release(tc.id);
    std::lock_guard<std::mutex> g(registry_mu_);
    registry_.erase(tc.id);
  }

  /**
   * Expiry policy: never free a lock protecting a document its owner has
   * already written — the owner's rollback depends on it. Anything else
   * (read locks, locks of still-waiting transactions) may go, and the
   * owner is flagged so it aborts at its next checkpoint. Waiting
   * transactions hold no writes under strict two-phase locking, so stalls
   * are still dissolved.
   */
  ExpiryDecision expiry_decision(const DocumentId& doc,
                                 const TransactionId& tx) {
    std::shared_ptr<TxRuntime> runtime;
    {
      std::lock_guard<std::mutex> g(registry_mu_);
      auto it = registry_.find(tx);
      if (it != registry_.end()) {
        runtime = it->second;
      }
    }
    if (!runtime) {
      return ExpiryDecision::kRelease;  // transaction already finished
    }
    std::lock_guard<std::mutex> g(runtime->mu);
    if (runtime->completed) {
      return ExpiryDecision::kRelease;
    }
    if (runtime->write_touched.contains(doc)) {
      return ExpiryDecision::kRetain;
    }
    runtime->abort_required = true;
    return ExpiryDecision::kRelease;
  }

  // ─────────────────── plumbing ───────────────────

  [[nodiscard]] TransactionId next_id() {
    std::uint64_t hi;
    std::uint64_t lo;
    {
      std::lock_guard<std::mutex> g(id_mu_);
      hi = id_rng_();
      lo = id_rng_();
    }
    return TransactionId{format_uuid(hi, lo)};
  }

  /** RFC 4122 version-4 layout from 128 random bits. */
  [[nodiscard]] static std::string format_uuid(std::uint64_t hi,
                                               std::uint64_t lo) {
    hi = (hi & 0xFFFFFFFFFFFF0FFFull) | 0x0000000000004000ull;  // version 4
    lo = (lo & 0x3FFFFFFFFFFFFFFFull) | 0x8000000000000000ull;  // variant 1
    char buf[37];
    std::snprintf(buf, sizeof(buf), "%08x-%04x-%04x-%04x-%012llx",
                  static_cast<unsigned>(hi >> 32),
                  static_cast<unsigned>((hi >> 16) & 0xFFFF),
                  static_cast<unsigned>(hi & 0xFFFF),
                  static_cast<unsigned>(lo >> 48),
                  static_cast<unsigned long long>(lo & 0xFFFFFFFFFFFFull));
    return std::string(buf);
  }

  [[nodiscard]] Event base_event(const TransactionContext& tc,
                                 EventKind kind) const {
    Event e;
    e.t = clock_->now();
    e.tx = tc.id;
    e.kind = kind;
    return e;
  }

  void emit(Event e) {
    if (sink_ != nullptr) {
      sink_->emit(std::move(e));
    }
  }

  void emit_simple(const TransactionContext& tc, EventKind kind) {
    emit(base_event(tc, kind));
  }

  std::shared_ptr<Clock> clock_;
  Store& store_;
  LockManager& locks_;
  EventSink* sink_;
  PipelineConfig cfg_;

  mutable std::mutex registry_mu_;
  std::unordered_map<TransactionId, std::shared_ptr<TxRuntime>> registry_;

  std::mutex id_mu_;
  std::mt19937_64 id_rng_;

  RetryQueue retries_;
};

}  // namespace dtx
