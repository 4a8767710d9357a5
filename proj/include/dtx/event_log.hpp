#pragma once

#include <cstdint>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dtx/clock.hpp"
#include "dtx/types.hpp"

namespace dtx {

/**
 * The pipeline narrates every transaction through these events. The stream
 * is the system's audit surface: serializability checks, state-machine
 * audits, and two-phase-locking audits all replay it.
 */
enum class EventKind {
  kInit,      // context created, registered
  kClassify,  // type and access sets derived
  kReady,     // readiness assessment passed
  kNotReady,  // readiness assessment found conflicts
  kRetry,     // re-queued with a wake-up time
  kExecute,   // entered the execution stage
  kLock,      // one lock granted
  kLocked,    // all locks held
  kRead,      // document read
  kWrite,     // document written
  kCommit,    // effects made permanent
  kAbort,     // effects rolled back / transaction gave up
  kRelease,   // one lock released
};

[[nodiscard]] inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::kInit: return "INIT";
    case EventKind::kClassify: return "CLASSIFY";
    case EventKind::kReady: return "READY";
    case EventKind::kNotReady: return "NOT_READY";
    case EventKind::kRetry: return "RETRY";
    case EventKind::kExecute: return "EXECUTE";
    case EventKind::kLock: return "LOCK";
    case EventKind::kLocked: return "LOCKED";
    case EventKind::kRead: return "READ";
    case EventKind::kWrite: return "WRITE";
    case EventKind::kCommit: return "COMMIT";
    case EventKind::kAbort: return "ABORT";
    case EventKind::kRelease: return "RELEASE";
  }
  return "?";
}

[[nodiscard]] inline std::optional<EventKind> event_kind_from(
    const std::string& name) {
  static const std::vector<std::pair<std::string, EventKind>> kNames = {
      {"INIT", EventKind::kInit},         {"CLASSIFY", EventKind::kClassify},
      {"READY", EventKind::kReady},       {"NOT_READY", EventKind::kNotReady},
      {"RETRY", EventKind::kRetry},       {"EXECUTE", EventKind::kExecute},
      {"LOCK", EventKind::kLock},         {"LOCKED", EventKind::kLocked},
      {"READ", EventKind::kRead},         {"WRITE", EventKind::kWrite},
      {"COMMIT", EventKind::kCommit},     {"ABORT", EventKind::kAbort},
      {"RELEASE", EventKind::kRelease},
  };
  for (const auto& [n, k] : kNames) {
    if (n == name) {
      return k;
    }
  }
  return std::nullopt;
}

struct Event {
  std::uint64_t seq = 0;  // assigned by the sink, starts at 1
  Nanos t{0};
  TransactionId tx;
  EventKind kind = EventKind::kInit;
  std::optional<DocumentId> doc;
  std::optional<LockMode> mode;
  std::optional<std::string> detail;  // type name, abort reason, …
  std::optional<int> retry;
  std::optional<Nanos> wake;
  std::optional<int> lock_count;

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j{
        {"seq", seq},
        {"t", t.count()},
        {"tx", tx.value},
        {"event", to_string(kind)},
    };
    if (doc) j["doc"] = doc->value;
    if (mode) j["mode"] = to_string(*mode);
    if (detail) j["detail"] = *detail;
    if (retry) j["retry"] = *retry;
    if (wake) j["wake"] = wake->count();
    if (lock_count) j["locks"] = *lock_count;
    return j;
  }

  [[nodiscard]] static Event from_json(const nlohmann::json& j) {
    Event e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.t = Nanos(j.at("t").get<std::int64_t>());
    e.tx.value = j.at("tx").get<std::string>();
    const auto kind = event_kind_from(j.at("event").get<std::string>());
    if (!kind) {
      throw std::invalid_argument("unknown event kind: " +
                                  j.at("event").get<std::string>());
    }
    e.kind = *kind;
    if (j.contains("doc")) e.doc = DocumentId{j["doc"].get<std::string>()};
    if (j.contains("mode")) {
      e.mode = j["mode"].get<std::string>() == "SHARED" ? LockMode::kShared
                                                        : LockMode::kExclusive;
    }
    if (j.contains("detail")) e.detail = j["detail"].get<std::string>();
    if (j.contains("retry")) e.retry = j["retry"].get<int>();
    if (j.contains("wake")) e.wake = Nanos(j["wake"].get<std::int64_t>());
    if (j.contains("locks")) e.lock_count = j["locks"].get<int>();
    return e;
  }
};

class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual void emit(Event e) = 0;
};

/**
 * Collects events in memory. Sequence numbers are assigned atomically with
 * the append, so the stored order and the seq order always agree.
 */
class MemoryEventSink final : public EventSink {
 public:
  void emit(Event e) override {
    std::lock_guard<std::mutex> g(mu_);
    e.seq = ++seq_;
    events_.push_back(std::move(e));
  }

  [[nodiscard]] std::vector<Event> snapshot() const {
    std::lock_guard<std::mutex> g(mu_);
    return events_;
  }

  [[nodiscard]] std::size_t size() const {
    std::lock_guard<std::mutex> g(mu_);
    return events_.size();
  }

  void clear() {
    std::lock_guard<std::mutex> g(mu_);
    events_.clear();
    seq_ = 0;
  }

  void write_jsonl(std::ostream& out) const {
    for (const auto& e : snapshot()) {
      out << e.to_json().dump() << '\n';
    }
  }

  [[nodiscard]] static std::vector<Event> read_jsonl(std::istream& in) {
    std::vector<Event> events;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) {
        continue;
      }
      events.push_back(Event::from_json(nlohmann::json::parse(line)));
    }
    return events;
  }

 private:
  mutable std::mutex mu_;
  std::uint64_t seq_ = 0;
  std::vector<Event> events_;
};

}  // namespace dtx
