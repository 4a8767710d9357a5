#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dtx/clock.hpp"
#include "dtx/types.hpp"

namespace dtx {

/**
 * Retry timing for contended lock acquisition: exponential backoff with
 * additive jitter. The wait after attempt k is
 *
 *     min(initial * multiplier^k, max) + Random(0, jitter_fraction * base)
 *
 * Jitter desynchronizes competing waiters so they do not retry in lockstep.
 */
struct BackoffPolicy {
  Nanos initial = std::chrono::milliseconds(10);
  Nanos max = std::chrono::milliseconds(500);
  double multiplier = 2.0;
  double jitter_fraction = 0.1;
  std::uint64_t seed = 0;
};

/** Aggregate lock-manager counters. */
struct LockStats {
  std::uint64_t acquisitions = 0;
  std::uint64_t failures = 0;
  Nanos total_wait{0};
  std::map<int, std::uint64_t> attempts_histogram;

  [[nodiscard]] nlohmann::json to_json() const {
    const std::uint64_t outcomes = acquisitions + failures;
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [attempts, count] : attempts_histogram) {
      hist[std::to_string(attempts)] = count;
    }
    return nlohmann::json{
        {"acquisitions", acquisitions},
        {"failures", failures},
        {"avg_wait_ms",
         outcomes == 0 ? 0.0
                       : static_cast<double>(total_wait.count()) / 1e6 /
                             static_cast<double>(outcomes)},
        {"attempts_histogram", std::move(hist)},
    };
  }
};

/** Who holds a document right now, and in which mode. */
struct HolderInfo {
  LockMode mode = LockMode::kShared;
  std::vector<TransactionId> holders;  // sorted, deterministic
};

/** Waits-for edges: waiter → set of current holders of the wanted lock. */
struct WaitGraph {
  std::map<TransactionId, std::set<TransactionId>> edges;

  [[nodiscard]] bool empty() const { return edges.empty(); }

  [[nodiscard]] std::set<TransactionId> nodes() const {
    std::set<TransactionId> out;
    for (const auto& [from, tos] : edges) {
      out.insert(from);
      out.insert(tos.begin(), tos.end());
    }
    return out;
  }
};

enum class AcquireResult { kSuccess, kFailure };

/** Per-call acquisition trace, for timing tests and diagnostics. */
struct AcquireTrace {
  int attempts = 0;
  std::vector<Nanos> waits;  // backoff sleeps taken, in order
  bool reentrant = false;    // lock was already held by the caller
};

/** One grant/release/expiry, for auditing mutual exclusion offline. */
struct LockAuditRecord {
  enum class Kind { kGrant, kRelease, kExpire };
  std::uint64_t seq = 0;
  Nanos t{0};
  Kind kind = Kind::kGrant;
  DocumentId doc;
  TransactionId tx;
  LockMode mode = LockMode::kShared;
};

enum class ExpiryDecision { kRelease, kRetain };

/**
 * Consulted before a deadline expiry actually frees a lock. Lets the
 * transaction layer veto the release of locks protecting documents the
 * owner has already written (their rollback needs the protection) while
 * still allowing expiry to dissolve stalls among waiting transactions.
 */
using ExpiryFilter =
    std::function<ExpiryDecision(const DocumentId&, const TransactionId&)>;

/**
 * Sharded two-mode (shared / exclusive) document lock table.
 *
 * Acquisition never blocks inside the table: attempt_lock is a single
 * try-grant, and acquire_with_timeout loops attempts with exponential
 * backoff until a deadline. Every grant carries an auto-release deadline;
 * expire_deadlines frees stale grants so that a stuck owner cannot wedge
 * the system. Transactions whose locks were expired are flagged and must
 * abort rather than commit.
 *
 * No lock upgrades: a shared holder requesting exclusive on the same
 * document is denied. Re-acquiring at the same or weaker mode succeeds
 * without a new grant.
 */
class LockManager {
 public:
  explicit LockManager(std::shared_ptr<Clock> clock, BackoffPolicy policy = {},
                       Nanos default_lease = std::chrono::milliseconds(100))
      : clock_(std::move(clock)),
        policy_(policy),
        default_lease_(default_lease),
        jitter_rng_(policy.seed) {}

  /** Single non-blocking grant attempt. Uses the default lease. */
  bool attempt_lock(const DocumentId& doc, const TransactionId& tx,
                    LockMode mode) {
    return try_grant(doc, tx, mode, default_lease_) != Grant::kDenied;
  }

  AcquireResult acquire_with_timeout(const DocumentId& doc,
                                     const TransactionId& tx, LockMode mode,
                                     Nanos timeout,
                                     AcquireTrace* trace = nullptr) {
    return acquire_with_timeout(doc, tx, mode, timeout, policy_, trace);
  }

  /**
   * Repeats grant attempts under `policy` until success or until the
   * elapsed time reaches `timeout`. Returns within
   * timeout + policy.max * (1 + jitter_fraction): the final sleep may
   * straddle the deadline but nothing waits beyond it.
   */
  AcquireResult acquire_with_timeout(const DocumentId& doc,
                                     const TransactionId& tx, LockMode mode,
                                     Nanos timeout,
                                     const BackoffPolicy& policy,
                                     AcquireTrace* trace = nullptr) {
    const Nanos start = clock_->now();
    Nanos backoff = policy.initial;
    int attempts = 0;
    bool waiting = false;
    while (clock_->now() - start < timeout) {
      ++attempts;
      const Grant g = try_grant(doc, tx, mode, timeout);
      if (g != Grant::kDenied) {
        if (waiting) {
          clear_waiter(tx);
        }
        record_success(attempts, clock_->now() - start);
        if (trace != nullptr) {
          trace->attempts = attempts;
          trace->reentrant = (g == Grant::kReentrant);
        }
        return AcquireResult::kSuccess;
      }
      if (!waiting) {
        set_waiter(tx, doc);
        waiting = true;
      }
      const Nanos wait = backoff + draw_jitter(backoff, policy.jitter_fraction);
      if (trace != nullptr) {
        trace->waits.push_back(wait);
      }
      clock_->sleep_for(wait);
      backoff = scaled(backoff, policy.multiplier);
      if (backoff > policy.max) {
        backoff = policy.max;
      }
    }
    if (waiting) {
      clear_waiter(tx);
    }
    record_failure(clock_->now() - start);
    if (trace != nullptr) {
      trace->attempts = attempts;
    }
    return AcquireResult::kFailure;
  }

  /**
   * Releases tx's hold on doc and cancels its deadline. Returns false when
   * no such hold exists (double release, or the lock already expired);
   * callers treat that as diagnostic, not fatal.
   */
  bool release(const DocumentId& doc, const TransactionId& tx) {
    Shard& s = shard_for(doc);
    std::lock_guard<std::mutex> g(s.mu);
    auto it = s.entries.find(doc);
    if (it == s.entries.end()) {
      release_misses_.fetch_add(1, std::memory_order_relaxed);
      return false;
    }
    auto h = it->second.holders.find(tx);
    if (h == it->second.holders.end()) {
      release_misses_.fetch_add(1, std::memory_order_relaxed);
      return false;
    }
    const LockMode mode = it->second.mode;
    it->second.holders.erase(h);
    if (it->second.holders.empty()) {
      s.entries.erase(it);
    }
    audit(LockAuditRecord::Kind::kRelease, doc, tx, mode);
    return true;
  }

  [[nodiscard]] std::optional<HolderInfo> current_holder(
      const DocumentId& doc) const {
    const Shard& s = shard_for(doc);
    std::lock_guard<std::mutex> g(s.mu);
    auto it = s.entries.find(doc);
    if (it == s.entries.end()) {
      return std::nullopt;
    }
    HolderInfo info;
    info.mode = it->second.mode;
    for (const auto& [tx, holder] : it->second.holders) {
      info.holders.push_back(tx);
    }
    return info;
  }

  /** True when doc is exclusively locked (a write is in flight). */
  [[nodiscard]] bool has_pending_write(const DocumentId& doc) const {
    const Shard& s = shard_for(doc);
    std::lock_guard<std::mutex> g(s.mu);
    auto it = s.entries.find(doc);
    return it != s.entries.end() && it->second.mode == LockMode::kExclusive;
  }

  /**
   * Frees every grant whose deadline is ≤ now (closed bound) unless the
   * expiry filter retains it, in which case the lease is re-armed. Owners
   * of freed grants are flagged; they must abort instead of committing.
   * Returns the (document, transaction) pairs actually released.
   */
  std::vector<std::pair<DocumentId, TransactionId>> expire_deadlines(
      Nanos now) {
    std::vector<std::pair<DocumentId, TransactionId>> candidates;
    for (auto& s : shards_) {
      std::lock_guard<std::mutex> g(s.mu);
      for (auto& [doc, entry] : s.entries) {
        for (auto& [tx, holder] : entry.holders) {
          if (holder.deadline <= now) {
            candidates.emplace_back(doc, tx);
          }
        }
      }
    }
    std::vector<std::pair<DocumentId, TransactionId>> expired;
    for (auto& [doc, tx] : candidates) {
      ExpiryDecision decision = ExpiryDecision::kRelease;
      {
        // Copy the filter so a concurrent set_expiry_filter cannot race.
        ExpiryFilter filter;
        {
          std::lock_guard<std::mutex> g(filter_mu_);
          filter = filter_;
        }
        if (filter) {
          decision = filter(doc, tx);
        }
      }
      Shard& s = shard_for(doc);
      std::lock_guard<std::mutex> g(s.mu);
      auto it = s.entries.find(doc);
      if (it == s.entries.end()) {
        continue;
      }
      auto h = it->second.holders.find(tx);
      if (h == it->second.holders.end() || h->second.deadline > now) {
        continue;  // released or re-acquired in the meantime
      }
      if (decision == ExpiryDecision::kRetain) {
        h->second.deadline = now + h->second.lease;
        continue;
      }
      const LockMode mode = it->second.mode;
      it->second.holders.erase(h);
      if (it->second.holders.empty()) {
        s.entries.erase(it);
      }
      {
        std::lock_guard<std::mutex> fg(flags_mu_);
        auto_released_.insert(tx);
      }
      audit(LockAuditRecord::Kind::kExpire, doc, tx, mode);
      expired.emplace_back(std::move(doc), std::move(tx));
    }
    return expired;
  }

  /** Current waits-for edges derived from registered waiters. */
  [[nodiscard]] WaitGraph wait_graph_snapshot() const {
    std::unordered_map<TransactionId, DocumentId> waiters;
    {
      std::lock_guard<std::mutex> g(waiters_mu_);
      waiters = waiters_;
    }
    WaitGraph graph;
    for (const auto& [tx, doc] : waiters) {
      const auto info = current_holder(doc);
      if (!info) {
        continue;
      }
      for (const auto& holder : info->holders) {
        if (holder != tx) {
          graph.edges[tx].insert(holder);
        }
      }
      if (graph.edges.contains(tx) && graph.edges[tx].empty()) {
        graph.edges.erase(tx);
      }
    }
    return graph;
  }

  [[nodiscard]] bool was_auto_released(const TransactionId& tx) const {
    std::lock_guard<std::mutex> g(flags_mu_);
    return auto_released_.contains(tx);
  }

  void clear_auto_release(const TransactionId& tx) {
    std::lock_guard<std::mutex> g(flags_mu_);
    auto_released_.erase(tx);
  }

  void set_expiry_filter(ExpiryFilter filter) {
    std::lock_guard<std::mutex> g(filter_mu_);
    filter_ = std::move(filter);
  }

  [[nodiscard]] LockStats stats() const {
    std::lock_guard<std::mutex> g(stats_mu_);
    return stats_;
  }

  [[nodiscard]] nlohmann::json stats_json() const { return stats().to_json(); }

  /** Number of documents with at least one live grant. */
  [[nodiscard]] std::size_t entry_count() const {
    std::size_t n = 0;
    for (const auto& s : shards_) {
      std::lock_guard<std::mutex> g(s.mu);
      n += s.entries.size();
    }
    return n;
  }

  [[nodiscard]] std::uint64_t release_misses() const {
    return release_misses_.load(std::memory_order_relaxed);
  }

  void set_audit_enabled(bool enabled) {
    std::lock_guard<std::mutex> g(audit_mu_);
    audit_enabled_ = enabled;
  }

  [[nodiscard]] std::vector<LockAuditRecord> audit_log() const {
    std::lock_guard<std::mutex> g(audit_mu_);
    return audit_log_;
  }

 private:
  enum class Grant { kNew, kReentrant, kDenied };

  struct Holder {
    Nanos deadline{0};
    Nanos lease{0};
  };

  struct Entry {
    LockMode mode = LockMode::kShared;
    std::map<TransactionId, Holder> holders;
  };

  struct Shard {
    mutable std::mutex mu;
    std::unordered_map<DocumentId, Entry> entries;
  };

  static constexpr std::size_t kShards = 64;

  [[nodiscard]] Shard& shard_for(const DocumentId& doc) {
    return shards_[std::hash<DocumentId>{}(doc) % kShards];
  }

  [[nodiscard]] const Shard& shard_for(const DocumentId& doc) const {
    return shards_[std::hash<DocumentId>{}(doc) % kShards];
  }

  Grant try_grant(const DocumentId& doc, const TransactionId& tx,
                  LockMode mode, Nanos lease) {
    const Nanos now = clock_->now();
    Shard& s = shard_for(doc);
    std::lock_guard<std::mutex> g(s.mu);
    auto it = s.entries.find(doc);
    if (it == s.entries.end()) {
      Entry entry;
      entry.mode = mode;
      entry.holders.emplace(tx, Holder{now + lease, lease});
      s.entries.emplace(doc, std::move(entry));
      audit(LockAuditRecord::Kind::kGrant, doc, tx, mode);
      return Grant::kNew;
    }
    Entry& entry = it->second;
    if (entry.holders.contains(tx)) {
      // Held at exclusive satisfies any request; held at shared only
      // satisfies shared (no upgrades). Existing deadline is retained.
      if (entry.mode == LockMode::kExclusive || mode == LockMode::kShared) {
        return Grant::kReentrant;
      }
      return Grant::kDenied;
    }
    if (lock_modes_compatible(entry.mode, mode)) {
      entry.holders.emplace(tx, Holder{now + lease, lease});
      audit(LockAuditRecord::Kind::kGrant, doc, tx, mode);
      return Grant::kNew;
    }
    return Grant::kDenied;
  }

  [[nodiscard]] Nanos draw_jitter(Nanos backoff, double fraction) {
    if (fraction <= 0.0 || backoff <= Nanos::zero()) {
      return Nanos::zero();
    }
    std::lock_guard<std::mutex> g(jitter_mu_);
    std::uniform_real_distribution<double> dist(0.0, fraction);
    // Truncate so the jitter stays strictly below fraction * backoff.
    return Nanos(static_cast<std::int64_t>(
        dist(jitter_rng_) * static_cast<double>(backoff.count())));
  }

  [[nodiscard]] static Nanos scaled(Nanos d, double multiplier) {
    return Nanos(static_cast<std::int64_t>(
        static_cast<double>(d.count()) * multiplier));
  }

  void set_waiter(const TransactionId& tx, const DocumentId& doc) {
    std::lock_guard<std::mutex> g(waiters_mu_);
    waiters_[tx] = doc;
  }

  void clear_waiter(const TransactionId& tx) {
    std::lock_guard<std::mutex> g(waiters_mu_);
    waiters_.erase(tx);
  }

  void record_success(int attempts, Nanos wait) {
    std::lock_guard<std::mutex> g(stats_mu_);
    stats_.acquisitions++;
    stats_.attempts_histogram[attempts]++;
    stats_.total_wait += wait;
  }

  void record_failure(Nanos wait) {
    std::lock_guard<std::mutex> g(stats_mu_);
    stats_.failures++;
    stats_.total_wait += wait;
  }

  void audit(LockAuditRecord::Kind kind, const DocumentId& doc,
             const TransactionId& tx, LockMode mode) {
    std::lock_guard<std::mutex> g(audit_mu_);
    if (!audit_enabled_) {
      return;
    }
    audit_log_.push_back(LockAuditRecord{++audit_seq_, clock_->now(), kind,
                                         doc, tx, mode});
  }

  std::shared_ptr<Clock> clock_;
  BackoffPolicy policy_;
  Nanos default_lease_;

  std::array<Shard, kShards> shards_;

  mutable std::mutex waiters_mu_;
  std::unordered_map<TransactionId, DocumentId> waiters_;

  mutable std::mutex flags_mu_;
  std::unordered_set<TransactionId> auto_released_;

  std::mutex filter_mu_;
  ExpiryFilter filter_;

  mutable std::mutex stats_mu_;
  LockStats stats_;

  std::mutex jitter_mu_;
  std::mt19937_64 jitter_rng_;

  mutable std::mutex audit_mu_;
  bool audit_enabled_ = false;
  std::uint64_t audit_seq_ = 0;
  std::vector<LockAuditRecord> audit_log_;

  std::atomic<std::uint64_t> release_misses_{0};
};

}  // namespace dtx
