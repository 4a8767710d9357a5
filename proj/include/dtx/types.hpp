#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dtx/clock.hpp"

namespace dtx {

// ───────────────────────── identifiers ─────────────────────────

/** Identifies one document in the store. Ordered lexicographically. */
struct DocumentId {
  std::string value;
  auto operator<=>(const DocumentId&) const = default;
};

/** Identifies one transaction (UUID-format string). */
struct TransactionId {
  std::string value;
  auto operator<=>(const TransactionId&) const = default;
};

enum class Ordering { kLess, kEqual, kGreater };

/**
 * The canonical document ordering: byte-wise lexicographic comparison of the
 * id value. Every component that needs a deterministic document order (lock
 * acquisition, snapshots, reports) uses this single definition, which is what
 * makes the global acquisition order total and cycle-free.
 */
[[nodiscard]] inline Ordering canonical_order(const DocumentId& a,
                                              const DocumentId& b) {
  const int c = a.value.compare(b.value);
  if (c < 0) return Ordering::kLess;
  if (c > 0) return Ordering::kGreater;
  return Ordering::kEqual;
}

// ───────────────────────── documents ─────────────────────────

/** Field name → value. Ordered so serialized forms are deterministic. */
using FieldMap = std::map<std::string, std::string>;

/** One stored document plus its monotonically increasing version. */
struct Document {
  DocumentId id;
  FieldMap fields;
  std::uint64_t version = 0;

  bool operator==(const Document&) const = default;
};

// ───────────────────────── operations ─────────────────────────

/** Describes the modify half of a read-modify-write. */
struct ModifySpec {
  enum class Kind { kSetFields, kIncrement };

  Kind kind = Kind::kSetFields;
  FieldMap fields;     // kSetFields: fields merged into the document
  std::string field;   // kIncrement: the counter field
  std::int64_t delta = 0;

  [[nodiscard]] static ModifySpec set_fields(FieldMap f) {
    ModifySpec m;
    m.kind = Kind::kSetFields;
    m.fields = std::move(f);
    return m;
  }

  [[nodiscard]] static ModifySpec increment(std::string field,
                                            std::int64_t delta) {
    ModifySpec m;
    m.kind = Kind::kIncrement;
    m.field = std::move(field);
    m.delta = delta;
    return m;
  }
};

enum class OpKind { kRead, kInsert, kUpdate, kDelete, kReadModifyWrite };

[[nodiscard]] inline const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::kRead: return "READ";
    case OpKind::kInsert: return "INSERT";
    case OpKind::kUpdate: return "UPDATE";
    case OpKind::kDelete: return "DELETE";
    case OpKind::kReadModifyWrite: return "READ_MODIFY_WRITE";
  }
  return "?";
}

/**
 * One document operation inside a transaction. Use the factory functions;
 * they keep the payload/modify invariants straight.
 */
struct Operation {
  OpKind kind = OpKind::kRead;
  DocumentId doc;
  FieldMap payload;                  // INSERT / UPDATE
  std::optional<ModifySpec> modify;  // READ_MODIFY_WRITE

  [[nodiscard]] static Operation read(DocumentId doc) {
    return Operation{OpKind::kRead, std::move(doc), {}, {}};
  }

  [[nodiscard]] static Operation insert(DocumentId doc, FieldMap fields) {
    return Operation{OpKind::kInsert, std::move(doc), std::move(fields), {}};
  }

  [[nodiscard]] static Operation update(DocumentId doc, FieldMap fields) {
    return Operation{OpKind::kUpdate, std::move(doc), std::move(fields), {}};
  }

  [[nodiscard]] static Operation remove(DocumentId doc) {
    return Operation{OpKind::kDelete, std::move(doc), {}, {}};
  }

  [[nodiscard]] static Operation read_modify_write(DocumentId doc,
                                                   ModifySpec spec) {
    return Operation{OpKind::kReadModifyWrite, std::move(doc), {},
                     std::move(spec)};
  }

  /** True when the operation observes document state (READ, RMW). */
  [[nodiscard]] bool in_read_class() const {
    return kind == OpKind::kRead || kind == OpKind::kReadModifyWrite;
  }

  /** True when the operation mutates document state (everything but READ). */
  [[nodiscard]] bool in_write_class() const { return kind != OpKind::kRead; }

  /** Throws std::invalid_argument when the shape is inconsistent. */
  void validate() const {
    if (doc.value.empty()) {
      throw std::invalid_argument("operation without a document id");
    }
    if (kind == OpKind::kReadModifyWrite && !modify.has_value()) {
      throw std::invalid_argument(
          "READ_MODIFY_WRITE operation without a modify spec");
    }
    if (kind != OpKind::kReadModifyWrite && modify.has_value()) {
      throw std::invalid_argument("modify spec on a non-RMW operation");
    }
    if ((kind == OpKind::kRead || kind == OpKind::kDelete) &&
        !payload.empty()) {
      throw std::invalid_argument("payload on a READ/DELETE operation");
    }
  }
};

/** readSet = docs touched by read-class ops, writeSet = write-class ops. */
[[nodiscard]] inline std::pair<std::set<DocumentId>, std::set<DocumentId>>
derive_access_sets(const std::vector<Operation>& ops) {
  std::set<DocumentId> reads;
  std::set<DocumentId> writes;
  for (const auto& op : ops) {
    if (op.in_read_class()) reads.insert(op.doc);
    if (op.in_write_class()) writes.insert(op.doc);
  }
  return {std::move(reads), std::move(writes)};
}

// ───────────────────────── transaction state ─────────────────────────

enum class TransactionType { kRead, kWrite, kHybrid };

[[nodiscard]] inline const char* to_string(TransactionType t) {
  switch (t) {
    case TransactionType::kRead: return "READ";
    case TransactionType::kWrite: return "WRITE";
    case TransactionType::kHybrid: return "HYBRID";
  }
  return "?";
}

enum class LockMode { kShared, kExclusive };

[[nodiscard]] inline const char* to_string(LockMode m) {
  return m == LockMode::kShared ? "SHARED" : "EXCLUSIVE";
}

/** Two lock modes may coexist on one document only when both are shared. */
[[nodiscard]] inline bool lock_modes_compatible(LockMode a, LockMode b) {
  return a == LockMode::kShared && b == LockMode::kShared;
}

enum class TxState { kPending, kReady, kExecuting, kCommitted, kAborted };

[[nodiscard]] inline const char* to_string(TxState s) {
  switch (s) {
    case TxState::kPending: return "PENDING";
    case TxState::kReady: return "READY";
    case TxState::kExecuting: return "EXECUTING";
    case TxState::kCommitted: return "COMMITTED";
    case TxState::kAborted: return "ABORTED";
  }
  return "?";
}

/**
 * The transaction lifecycle permits exactly these moves:
 *
 *   PENDING   → READY | ABORTED
 *   READY     → EXECUTING | PENDING (re-queued for retry)
 *   EXECUTING → COMMITTED | ABORTED
 *
 * COMMITTED and ABORTED are terminal.
 */
[[nodiscard]] inline bool is_legal_transition(TxState from, TxState to) {
  switch (from) {
    case TxState::kPending:
      return to == TxState::kReady || to == TxState::kAborted;
    case TxState::kReady:
      return to == TxState::kExecuting || to == TxState::kPending;
    case TxState::kExecuting:
      return to == TxState::kCommitted || to == TxState::kAborted;
    case TxState::kCommitted:
    case TxState::kAborted:
      return false;
  }
  return false;
}

/** One conflict found during readiness assessment. */
struct ConflictRecord {
  DocumentId doc;
  // Holder of the conflicting lock, or nullopt when the conflict is a
  // pending exclusive write observed against the read set.
  std::optional<TransactionId> holder;

  [[nodiscard]] bool pending_write() const { return !holder.has_value(); }
};

/**
 * State shared between the worker executing a transaction and the lock
 * manager's deadline-expiry path. The mutex serializes "is this transaction
 * allowed to keep going" decisions against lock auto-release, which is what
 * keeps expiry from ever freeing a lock whose document the transaction has
 * already written (the rollback would otherwise race with a new owner).
 */
struct TxRuntime {
  std::mutex mu;
  bool abort_required = false;       // expiry released one of our locks
  bool completed = false;            // commit/abort decision has been made
  std::set<DocumentId> write_touched;  // docs declared for writing so far
};

/**
 * Everything the pipeline tracks for one transaction. Created by stage 1,
 * enriched by each later stage. Owned by a single worker thread; the shared
 * piece lives behind `runtime`.
 */
struct TransactionContext {
  TransactionId id;
  Nanos timestamp{0};  // assigned at init, monotonic per clock
  TxState state = TxState::kPending;
  std::string client_id = "anonymous";
  int retry_count = 0;
  int max_retries = 3;

  TransactionType type = TransactionType::kRead;
  std::vector<Operation> operations;
  std::set<DocumentId> read_set;
  std::set<DocumentId> write_set;
  LockMode lock_mode = LockMode::kShared;

  std::optional<Nanos> conflict_timestamp;  // set on the latest NOT_READY
  std::vector<ConflictRecord> last_conflicts;
  std::optional<Nanos> next_wake;  // retry wake-up instant, when queued

  std::vector<std::pair<DocumentId, LockMode>> acquired_locks;
  std::vector<std::pair<DocumentId, std::optional<Document>>> pre_images;
  bool lock_contended = false;  // any acquisition needed more than one try

  std::shared_ptr<TxRuntime> runtime;
  Nanos commit_time{0};

  // Wall time spent per stage, for the overhead breakdown.
  struct StageNanos {
    Nanos init{0};
    Nanos classify{0};
    Nanos assess{0};
    Nanos lock{0};
    Nanos exec{0};
    Nanos commit{0};
  } stages;

  /** Moves to `next`, throwing std::logic_error on an illegal transition. */
  void set_state(TxState next) {
    if (!is_legal_transition(state, next)) {
      throw std::logic_error(std::string("illegal transaction transition ") +
                             to_string(state) + " -> " + to_string(next));
    }
    state = next;
  }
};

}  // namespace dtx

template <>
struct std::hash<dtx::DocumentId> {
  std::size_t operator()(const dtx::DocumentId& d) const noexcept {
    return std::hash<std::string>{}(d.value);
  }
};

template <>
struct std::hash<dtx::TransactionId> {
  std::size_t operator()(const dtx::TransactionId& t) const noexcept {
    return std::hash<std::string>{}(t.value);
  }
};
