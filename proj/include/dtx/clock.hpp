#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <thread>
#include <utility>

namespace dtx {

using Nanos = std::chrono::nanoseconds;

/**
 * Time source used by every component that sleeps, stamps, or schedules.
 *
 * Two implementations exist: RealClock (monotonic wall time) and
 * VirtualClock (deterministic simulated time for tests). Components take a
 * shared_ptr<Clock> so an entire stack — store latency injection, lock
 * backoff, retry wakeups — can run against the same time source.
 */
class Clock {
 public:
  enum class Mode { kReal, kVirtual };

  virtual ~Clock() = default;

  /** Current time as an offset from an arbitrary fixed origin. */
  [[nodiscard]] virtual Nanos now() const = 0;

  /** Blocks (or advances virtual time) for the given duration. */
  virtual void sleep_for(Nanos d) = 0;

  /** Blocks (or advances virtual time) until the given instant. */
  virtual void sleep_until(Nanos t) = 0;

  [[nodiscard]] virtual Mode mode() const = 0;
};

/** Monotonic wall-clock time. Thread safe. */
class RealClock final : public Clock {
 public:
  [[nodiscard]] Nanos now() const override {
    return std::chrono::steady_clock::now().time_since_epoch();
  }

  void sleep_for(Nanos d) override {
    if (d > Nanos::zero()) {
      std::this_thread::sleep_for(d);
    }
  }

  void sleep_until(Nanos t) override {
    std::this_thread::sleep_until(
        std::chrono::steady_clock::time_point(t));
  }

  [[nodiscard]] Mode mode() const override { return Mode::kReal; }
};

/**
 * Deterministic simulated time with an event scheduler.
 *
 * sleep_for / advance move time forward and fire any callbacks scheduled
 * inside the crossed interval, in timestamp order. Callbacks may schedule
 * further events. Time never moves backwards. Single-threaded by design:
 * callers drive one logical timeline, so tests built on a VirtualClock are
 * exactly reproducible.
 */
class VirtualClock final : public Clock {
 public:
  [[nodiscard]] Nanos now() const override { return now_; }

  void sleep_for(Nanos d) override { advance(d); }

  void sleep_until(Nanos t) override { advance_to(t); }

  [[nodiscard]] Mode mode() const override { return Mode::kVirtual; }

  /** Schedules fn to run when time reaches t (clamped to now). */
  void schedule_at(Nanos t, std::function<void()> fn) {
    events_.emplace(t < now_ ? now_ : t, std::move(fn));
  }

  /** Schedules fn to run after the given delay. */
  void schedule_after(Nanos d, std::function<void()> fn) {
    schedule_at(now_ + d, std::move(fn));
  }

  /** Moves time forward by d, firing due events in order. */
  void advance(Nanos d) {
    if (d > Nanos::zero()) {
      advance_to(now_ + d);
    }
  }

  /** Moves time forward to target, firing due events in order. */
  void advance_to(Nanos target) {
    while (!events_.empty()) {
      auto it = events_.begin();
      if (it->first > target) {
        break;
      }
      auto fn = std::move(it->second);
      now_ = std::max(now_, it->first);
      events_.erase(it);
      fn();
    }
    now_ = std::max(now_, target);
  }

  [[nodiscard]] std::size_t pending_events() const { return events_.size(); }

 private:
  Nanos now_{0};
  std::multimap<Nanos, std::function<void()>> events_;
};

}  // namespace dtx
