#pragma once

#include <mutex>
#include <optional>
#include <set>
#include <tuple>

#include "dtx/clock.hpp"
#include "dtx/types.hpp"

namespace dtx {

/**
 * Transactions deferred by the readiness assessment wait here until their
 * backoff elapses. Ordered by (wake time, original transaction timestamp,
 * id) so older transactions drain first among simultaneous wake-ups.
 */
class RetryQueue {
 public:
  struct Entry {
    Nanos wake{0};
    Nanos tx_timestamp{0};
    TransactionId id;

    [[nodiscard]] bool operator<(const Entry& other) const {
      return std::tie(wake, tx_timestamp, id.value) <
             std::tie(other.wake, other.tx_timestamp, other.id.value);
    }
  };

  void push(Entry e) {
    std::lock_guard<std::mutex> g(mu_);
    entries_.insert(std::move(e));
  }

  /** Pops the earliest entry whose wake time is ≤ now, if any. */
  [[nodiscard]] std::optional<Entry> pop_due(Nanos now) {
    std::lock_guard<std::mutex> g(mu_);
    if (entries_.empty() || entries_.begin()->wake > now) {
      return std::nullopt;
    }
    Entry e = *entries_.begin();
    entries_.erase(entries_.begin());
    return e;
  }

  /** Removes the entry for `id`; returns whether one existed. */
  bool remove(const TransactionId& id) {
    std::lock_guard<std::mutex> g(mu_);
    for (auto it = entries_.begin(); it != entries_.end(); ++it) {
      if (it->id == id) {
        entries_.erase(it);
        return true;
      }
    }
    return false;
  }

  [[nodiscard]] std::optional<Nanos> next_wake() const {
    std::lock_guard<std::mutex> g(mu_);
    if (entries_.empty()) {
      return std::nullopt;
    }
    return entries_.begin()->wake;
  }

  [[nodiscard]] std::size_t size() const {
    std::lock_guard<std::mutex> g(mu_);
    return entries_.size();
  }

 private:
  mutable std::mutex mu_;
  std::set<Entry> entries_;
};

}  // namespace dtx
