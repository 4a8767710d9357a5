#include <gtest/gtest.h>

#include <chrono>
#include <memory>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "dtx/pipeline.hpp"

namespace dtx {
namespace {

using std::chrono::milliseconds;

struct Rig {
  std::shared_ptr<VirtualClock> clock = std::make_shared<VirtualClock>();
  InMemoryStore store{clock};
  LockManager locks;
  MemoryEventSink sink;
  Pipeline pipeline;

  explicit Rig(PipelineConfig cfg = {}, Nanos lease = milliseconds(100))
      : locks(clock, cfg.backoff, lease),
        pipeline(clock, store, locks, &sink, cfg) {}

  std::vector<EventKind> kinds_for(const TransactionId& tx) {
    std::vector<EventKind> out;
    for (const auto& e : sink.snapshot()) {
      if (e.tx == tx) {
        out.push_back(e.kind);
      }
    }
    return out;
  }
};

DocumentId doc(const std::string& s) { return DocumentId{s}; }

// ───────────────────── stage 1: init ─────────────────────

TEST(PipelineInit, CreatesRegisteredPendingContextWithUuid) {
  Rig rig;
  rig.clock->advance(milliseconds(3));
  const auto tc = rig.pipeline.init_transaction(
      {Operation::read(doc("a"))}, "client-7");

  EXPECT_EQ(tc.state, TxState::kPending);
  EXPECT_EQ(tc.timestamp, milliseconds(3));
  EXPECT_EQ(tc.client_id, "client-7");
  EXPECT_EQ(tc.retry_count, 0);
  ASSERT_TRUE(tc.runtime != nullptr);
  EXPECT_EQ(rig.pipeline.active_transactions(), 1u);

  // Version-4 UUID shape: 8-4-4-4-12 hex, version nibble 4, variant 8..b.
  const std::regex uuid(
      "^[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}$");
  EXPECT_TRUE(std::regex_match(tc.id.value, uuid)) << tc.id.value;

  const auto events = rig.sink.snapshot();
  ASSERT_EQ(events.size(), 1u);
  EXPECT_EQ(events[0].kind, EventKind::kInit);
  EXPECT_EQ(events[0].tx, tc.id);
  EXPECT_EQ(events[0].t, milliseconds(3));
}

TEST(PipelineInit, RejectsMalformedOperationsWithoutSideEffects) {
  Rig rig;
  Operation bad = Operation::read(doc("a"));
  bad.payload = {{"f", "v"}};  // payload on a read is inconsistent
  EXPECT_THROW(rig.pipeline.init_transaction({bad}), std::invalid_argument);
  EXPECT_EQ(rig.pipeline.active_transactions(), 0u);
  EXPECT_EQ(rig.sink.size(), 0u);
}

TEST(PipelineInit, IdsAreUniqueAndSeedDeterministic) {
  PipelineConfig cfg;
  cfg.id_seed = 99;
  Rig a(cfg);
  Rig b(cfg);
  std::set<std::string> seen;
  for (int i = 0; i < 5000; ++i) {
    const auto tc = a.pipeline.init_transaction({Operation::read(doc("d"))});
    EXPECT_TRUE(seen.insert(tc.id.value).second) << "duplicate " << tc.id.value;
  }
  // Same seed, same sequence.
  const auto ta = b.pipeline.init_transaction({Operation::read(doc("d"))});
  PipelineConfig cfg2;
  cfg2.id_seed = 99;
  Rig c(cfg2);
  const auto tb = c.pipeline.init_transaction({Operation::read(doc("d"))});
  EXPECT_EQ(ta.id, tb.id);
}

// ───────────────────── stage 2: classify ─────────────────────

TransactionContext classified(std::vector<Operation> ops) {
  TransactionContext tc;
  tc.operations = std::move(ops);
  return Pipeline::classify(std::move(tc));
}

TEST(PipelineClassify, ReadOnlyIsSharedReadType) {
  const auto tc = classified({Operation::read(doc("a")),
                              Operation::read(doc("b"))});
  EXPECT_EQ(tc.type, TransactionType::kRead);
  EXPECT_EQ(tc.lock_mode, LockMode::kShared);
  EXPECT_EQ(tc.read_set, (std::set<DocumentId>{doc("a"), doc("b")}));
  EXPECT_TRUE(tc.write_set.empty());
}

TEST(PipelineClassify, WriteOnlyIsExclusiveWriteType) {
  const auto tc = classified({Operation::update(doc("a"), {{"f", "1"}}),
                              Operation::insert(doc("b"), {{"g", "2"}}),
                              Operation::remove(doc("c"))});
  EXPECT_EQ(tc.type, TransactionType::kWrite);
  EXPECT_EQ(tc.lock_mode, LockMode::kExclusive);
  EXPECT_TRUE(tc.read_set.empty());
  EXPECT_EQ(tc.write_set,
            (std::set<DocumentId>{doc("a"), doc("b"), doc("c")}));
}

TEST(PipelineClassify, MixedOperationsAreHybridAndStrict) {
  const auto tc = classified({Operation::read(doc("r")),
                              Operation::update(doc("w"), {{"f", "1"}})});
  EXPECT_EQ(tc.type, TransactionType::kHybrid);
  EXPECT_EQ(tc.lock_mode, LockMode::kExclusive);  // strictest mode wins
  EXPECT_EQ(tc.read_set, (std::set<DocumentId>{doc("r")}));
  EXPECT_EQ(tc.write_set, (std::set<DocumentId>{doc("w")}));
}

TEST(PipelineClassify, RmwAloneIsHybridBecauseItReadsAndWrites) {
  const auto tc = classified({Operation::read_modify_write(
      doc("n"), ModifySpec::increment("count", 1))});
  EXPECT_EQ(tc.type, TransactionType::kHybrid);
  EXPECT_EQ(tc.read_set, (std::set<DocumentId>{doc("n")}));
  EXPECT_EQ(tc.write_set, (std::set<DocumentId>{doc("n")}));
}

TEST(PipelineClassify, IsPureAndRepeatable) {
  auto tc1 = classified({Operation::read(doc("a")),
                         Operation::update(doc("b"), {{"f", "1"}})});
  auto tc2 = Pipeline::classify(tc1);  // classify its own output again
  EXPECT_EQ(tc1.type, tc2.type);
  EXPECT_EQ(tc1.read_set, tc2.read_set);
  EXPECT_EQ(tc1.write_set, tc2.write_set);
  EXPECT_EQ(tc1.lock_mode, tc2.lock_mode);
}

// ───────────────────── stage 3: assess readiness ─────────────────────

TEST(PipelineAssess, CleanTableIsReady) {
  Rig rig;
  auto tc = Pipeline::classify(rig.pipeline.init_transaction(
      {Operation::update(doc("a"), {{"f", "1"}})}));
  const auto [readiness, conflicts] = rig.pipeline.assess_readiness(tc);
  EXPECT_EQ(readiness, Readiness::kReady);
  EXPECT_TRUE(conflicts.empty());
  EXPECT_EQ(tc.state, TxState::kReady);
  EXPECT_EQ(rig.kinds_for(tc.id).back(), EventKind::kReady);
}

TEST(PipelineAssess, WriteSetConflictDefersAndRecordsHolder) {
  Rig rig;
  const TransactionId intruder{"intruder"};
  rig.locks.attempt_lock(doc("a"), intruder, LockMode::kExclusive);

  auto tc = Pipeline::classify(rig.pipeline.init_transaction(
      {Operation::update(doc("a"), {{"f", "1"}})}));
  const auto [readiness, conflicts] = rig.pipeline.assess_readiness(tc);
  EXPECT_EQ(readiness, Readiness::kNotReady);
  ASSERT_EQ(conflicts.size(), 1u);
  EXPECT_EQ(conflicts[0].doc, doc("a"));
  EXPECT_EQ(conflicts[0].holder, intruder);
  EXPECT_FALSE(conflicts[0].pending_write());

  EXPECT_EQ(tc.state, TxState::kPending);  // deferral, not a transition
  EXPECT_TRUE(tc.conflict_timestamp.has_value());
  EXPECT_EQ(tc.last_conflicts.size(), 1u);

  const auto events = rig.sink.snapshot();
  EXPECT_EQ(events.back().kind, EventKind::kNotReady);
  EXPECT_EQ(events.back().lock_count, 1);
}

TEST(PipelineAssess, SharedHoldersAlsoBlockWriters) {
  Rig rig;
  rig.locks.attempt_lock(doc("a"), TransactionId{"reader"},
                         LockMode::kShared);
  auto tc = Pipeline::classify(rig.pipeline.init_transaction(
      {Operation::update(doc("a"), {{"f", "1"}})}));
  EXPECT_EQ(rig.pipeline.assess_readiness(tc).first, Readiness::kNotReady);
}

TEST(PipelineAssess, PendingWriteDefersReaders) {
  Rig rig;
  rig.locks.attempt_lock(doc("a"), TransactionId{"writer"},
                         LockMode::kExclusive);
  auto tc = Pipeline::classify(
      rig.pipeline.init_transaction({Operation::read(doc("a"))}));
  const auto [readiness, conflicts] = rig.pipeline.assess_readiness(tc);
  EXPECT_EQ(readiness, Readiness::kNotReady);
  ASSERT_EQ(conflicts.size(), 1u);
  EXPECT_TRUE(conflicts[0].pending_write());  // recorded without a holder
  EXPECT_EQ(conflicts[0].doc, doc("a"));
}

TEST(PipelineAssess, SharedHoldersDoNotDeferReaders) {
  Rig rig;
  rig.locks.attempt_lock(doc("a"), TransactionId{"reader"},
                         LockMode::kShared);
  auto tc = Pipeline::classify(
      rig.pipeline.init_transaction({Operation::read(doc("a"))}));
  EXPECT_EQ(rig.pipeline.assess_readiness(tc).first, Readiness::kReady);
}

TEST(PipelineAssess, WriteConflictsMaskReadConflictsForHybrids) {
  Rig rig;
  rig.locks.attempt_lock(doc("w"), TransactionId{"holder-w"},
                         LockMode::kExclusive);
  rig.locks.attempt_lock(doc("r"), TransactionId{"holder-r"},
                         LockMode::kExclusive);
  auto tc = Pipeline::classify(rig.pipeline.init_transaction(
      {Operation::read(doc("r")),
       Operation::update(doc("w"), {{"f", "1"}})}));
  const auto [readiness, conflicts] = rig.pipeline.assess_readiness(tc);
  EXPECT_EQ(readiness, Readiness::kNotReady);
  // Only the write-set conflict is reported; the read set is not scanned
  // once the write set is already contested.
  ASSERT_EQ(conflicts.size(), 1u);
  EXPECT_EQ(conflicts[0].doc, doc("w"));
  EXPECT_EQ(conflicts[0].holder, TransactionId{"holder-w"});
}

TEST(PipelineAssess, OwnSoleLockIsNotAConflict) {
  Rig rig;
  auto tc = Pipeline::classify(
      rig.pipeline.init_transaction({Operation::read(doc("a"))}));
  rig.locks.attempt_lock(doc("a"), tc.id, LockMode::kExclusive);
  EXPECT_EQ(rig.pipeline.assess_readiness(tc).first, Readiness::kReady);
}

TEST(PipelineAssess, AblationSkipsTheCheckEntirely) {
  PipelineConfig cfg;
  cfg.skip_readiness_check = true;
  Rig rig(cfg);
  rig.locks.attempt_lock(doc("a"), TransactionId{"intruder"},
                         LockMode::kExclusive);
  auto tc = Pipeline::classify(rig.pipeline.init_transaction(
      {Operation::update(doc("a"), {{"f", "1"}})}));
  EXPECT_EQ(rig.pipeline.assess_readiness(tc).first, Readiness::kReady);
}

// ───────────────────── stage 4: retries ─────────────────────

TEST(PipelineRetry, DelaysFollowTheBackoffLadder) {
  Rig rig;
  // min(10 · 2^k, 500) ms, frozen.
  EXPECT_EQ(rig.pipeline.retry_delay(0), milliseconds(10));
  EXPECT_EQ(rig.pipeline.retry_delay(1), milliseconds(20));
  EXPECT_EQ(rig.pipeline.retry_delay(2), milliseconds(40));
  EXPECT_EQ(rig.pipeline.retry_delay(3), milliseconds(80));
  EXPECT_EQ(rig.pipeline.retry_delay(6), milliseconds(500));  // capped at 640
  EXPECT_EQ(rig.pipeline.retry_delay(20), milliseconds(500));
}

TEST(PipelineRetry, SchedulesWithGrowingDelaysThenAborts) {
  Rig rig;
  auto tc = Pipeline::classify(rig.pipeline.init_transaction(
      {Operation::update(doc("a"), {{"f", "1"}})}));

  const std::vector<Nanos> expected_delays{milliseconds(10), milliseconds(20),
                                           milliseconds(40)};
  for (int k = 0; k < 3; ++k) {
    const Nanos now = rig.clock->now();
    const auto r = rig.pipeline.execute(tc, Readiness::kNotReady);
    EXPECT_EQ(r.status, ExecStatus::kRetryScheduled);
    EXPECT_EQ(tc.retry_count, k + 1);
    ASSERT_TRUE(tc.next_wake.has_value());
    EXPECT_EQ(*tc.next_wake - now, expected_delays[static_cast<std::size_t>(k)])
        << "retry " << k;
    EXPECT_EQ(tc.state, TxState::kPending);

    const auto events = rig.sink.snapshot();
    EXPECT_EQ(events.back().kind, EventKind::kRetry);
    EXPECT_EQ(events.back().retry, tc.retry_count);
    EXPECT_EQ(events.back().wake, *tc.next_wake);
    rig.clock->advance(milliseconds(100));
  }

  // The retry budget (3) is exhausted: the fourth deferral aborts.
  const auto r = rig.pipeline.execute(tc, Readiness::kNotReady);
  EXPECT_EQ(r.status, ExecStatus::kFailure);
  EXPECT_EQ(r.reason, FailureReason::kMaxRetriesExceeded);
  EXPECT_EQ(tc.state, TxState::kAborted);
  EXPECT_EQ(rig.pipeline.active_transactions(), 0u);
  const auto events = rig.sink.snapshot();
  EXPECT_EQ(events.back().kind, EventKind::kAbort);
  EXPECT_EQ(events.back().detail, "MAX_RETRIES_EXCEEDED");
}

TEST(PipelineRetry, RunTransactionRetriesOnVirtualTimeAndSucceeds) {
  Rig rig;
  rig.store.put_raw(Document{doc("a"), {{"f", "0"}}, 1});
  const TransactionId intruder{"intruder"};
  rig.locks.attempt_lock(doc("a"), intruder, LockMode::kExclusive);
  // Retries wake at 10 ms and 30 ms; the holder leaves at 15 ms, so the
  // transaction defers twice and commits on its third assessment.
  rig.clock->schedule_at(milliseconds(15),
                         [&] { rig.locks.release(doc("a"), intruder); });

  auto outcome = rig.pipeline.run_transaction(
      {Operation::update(doc("a"), {{"f", "1"}})});
  EXPECT_TRUE(outcome.result.ok());
  EXPECT_EQ(outcome.tc.retry_count, 2);
  EXPECT_EQ(outcome.tc.state, TxState::kCommitted);
  EXPECT_EQ(rig.store.get(doc("a"))->fields.at("f"), "1");
  EXPECT_EQ(rig.clock->now(), milliseconds(30));

  const auto kinds = rig.kinds_for(outcome.tc.id);
  const std::vector<EventKind> expected{
      EventKind::kInit,    EventKind::kClassify, EventKind::kNotReady,
      EventKind::kRetry,   EventKind::kNotReady, EventKind::kRetry,
      EventKind::kReady,   EventKind::kExecute,  EventKind::kLock,
      EventKind::kLocked,  EventKind::kWrite,    EventKind::kCommit,
      EventKind::kRelease};
  EXPECT_EQ(kinds, expected);
}

// ───────────────────── stage 4: execution paths ─────────────────────

TEST(PipelineExecute, CommitPathEmitsTheCanonicalSequence) {
  Rig rig;
  rig.store.put_raw(Document{doc("a"), {{"f", "0"}}, 1});
  rig.store.put_raw(Document{doc("b"), {{"g", "0"}}, 1});

  auto outcome = rig.pipeline.run_transaction(
      {Operation::update(doc("b"), {{"g", "1"}}),
       Operation::update(doc("a"), {{"f", "1"}})});
  ASSERT_TRUE(outcome.result.ok());
  EXPECT_EQ(outcome.tc.state, TxState::kCommitted);
  EXPECT_EQ(rig.pipeline.active_transactions(), 0u);
  EXPECT_EQ(rig.locks.entry_count(), 0u);
  EXPECT_EQ(rig.locks.release_misses(), 0u);

  const auto events = rig.sink.snapshot();
  const std::vector<EventKind> expected{
      EventKind::kInit,   EventKind::kClassify, EventKind::kReady,
      EventKind::kExecute, EventKind::kLock,    EventKind::kLock,
      EventKind::kLocked, EventKind::kWrite,    EventKind::kWrite,
      EventKind::kCommit, EventKind::kRelease,  EventKind::kRelease};
  std::vector<EventKind> kinds;
  for (const auto& e : events) {
    kinds.push_back(e.kind);
  }
  EXPECT_EQ(kinds, expected);

  // Locks are taken in canonical order, released in reverse.
  EXPECT_EQ(events[4].doc, doc("a"));
  EXPECT_EQ(events[5].doc, doc("b"));
  EXPECT_EQ(events[6].lock_count, 2);
  EXPECT_EQ(events[10].doc, doc("b"));
  EXPECT_EQ(events[11].doc, doc("a"));
  // Writes run in operation order, which need not be canonical.
  EXPECT_EQ(events[7].doc, doc("b"));
  EXPECT_EQ(events[8].doc, doc("a"));
  // Exclusive mode for a write transaction.
  EXPECT_EQ(events[4].mode, LockMode::kExclusive);
}

TEST(PipelineExecute, ReadTransactionUsesSharedLocks) {
  Rig rig;
  rig.store.put_raw(Document{doc("a"), {{"f", "0"}}, 1});
  auto outcome = rig.pipeline.run_transaction({Operation::read(doc("a"))});
  ASSERT_TRUE(outcome.result.ok());
  for (const auto& e : rig.sink.snapshot()) {
    if (e.kind == EventKind::kLock) {
      EXPECT_EQ(e.mode, LockMode::kShared);
    }
    if (e.kind == EventKind::kRead) {
      EXPECT_EQ(e.doc, doc("a"));
    }
  }
}

TEST(PipelineExecute, HybridRmwCommitsAndEmitsReadThenWrite) {
  Rig rig;
  rig.store.put_raw(Document{doc("n"), {{"count", "41"}}, 1});
  auto outcome = rig.pipeline.run_transaction(
      {Operation::read_modify_write(doc("n"),
                                    ModifySpec::increment("count", 1))});
  ASSERT_TRUE(outcome.result.ok());
  EXPECT_EQ(outcome.tc.type, TransactionType::kHybrid);
  EXPECT_EQ(rig.store.get(doc("n"))->fields.at("count"), "42");

  const auto events = rig.sink.snapshot();
  std::vector<EventKind> data;
  LockMode lock_mode = LockMode::kShared;
  for (const auto& e : events) {
    if (e.kind == EventKind::kRead || e.kind == EventKind::kWrite) {
      data.push_back(e.kind);
    }
    if (e.kind == EventKind::kLock) {
      lock_mode = *e.mode;
    }
  }
  EXPECT_EQ(data, (std::vector<EventKind>{EventKind::kRead,
                                          EventKind::kWrite}));
  EXPECT_EQ(lock_mode, LockMode::kExclusive);  // hybrids lock strictly
}

TEST(PipelineExecute, HybridReadLocksCanBeRelaxedToShared) {
  PipelineConfig cfg;
  cfg.hybrid_read_locks = HybridReadLocks::kShared;
  Rig rig(cfg);
  rig.store.put_raw(Document{doc("r"), {{"f", "0"}}, 1});
  rig.store.put_raw(Document{doc("w"), {{"f", "0"}}, 1});
  auto outcome = rig.pipeline.run_transaction(
      {Operation::read(doc("r")),
       Operation::update(doc("w"), {{"f", "1"}})});
  ASSERT_TRUE(outcome.result.ok());
  for (const auto& e : rig.sink.snapshot()) {
    if (e.kind == EventKind::kLock && e.doc == doc("r")) {
      EXPECT_EQ(e.mode, LockMode::kShared);
    }
    if (e.kind == EventKind::kLock && e.doc == doc("w")) {
      EXPECT_EQ(e.mode, LockMode::kExclusive);
    }
  }
}

TEST(PipelineExecute, EmptyTransactionCommitsTrivially) {
  Rig rig;
  auto outcome = rig.pipeline.run_transaction({});
  EXPECT_TRUE(outcome.result.ok());
  EXPECT_EQ(outcome.tc.state, TxState::kCommitted);
  EXPECT_EQ(rig.pipeline.active_transactions(), 0u);
}

TEST(PipelineExecute, LockTimeoutAbortsWithoutRetryAndFreesPartialGrants) {
  PipelineConfig cfg;
  cfg.skip_readiness_check = true;  // drive the conflict into stage 4
  cfg.lock_timeout = milliseconds(30);
  Rig rig(cfg);
  rig.store.put_raw(Document{doc("a"), {{"f", "0"}}, 1});
  rig.store.put_raw(Document{doc("b"), {{"f", "0"}}, 1});
  const TransactionId intruder{"intruder"};
  rig.locks.attempt_lock(doc("b"), intruder, LockMode::kExclusive);

  auto outcome = rig.pipeline.run_transaction(
      {Operation::update(doc("a"), {{"f", "1"}}),
       Operation::update(doc("b"), {{"f", "1"}})});
  EXPECT_EQ(outcome.result.status, ExecStatus::kFailure);
  EXPECT_EQ(outcome.result.reason, FailureReason::kLockTimeout);
  EXPECT_EQ(outcome.tc.state, TxState::kAborted);
  EXPECT_EQ(outcome.tc.retry_count, 0);  // lock timeouts are not retried

  // The partial grant on "a" was rolled back; only the intruder remains.
  EXPECT_EQ(rig.locks.entry_count(), 1u);
  EXPECT_TRUE(rig.locks.has_pending_write(doc("b")));
  EXPECT_EQ(rig.pipeline.active_transactions(), 0u);
  // Nothing was written.
  EXPECT_EQ(rig.store.get(doc("a"))->fields.at("f"), "0");

  bool saw_abort = false;
  for (const auto& e : rig.sink.snapshot()) {
    if (e.kind == EventKind::kAbort) {
      saw_abort = true;
      EXPECT_EQ(e.detail, "LOCK_TIMEOUT");
    }
  }
  EXPECT_TRUE(saw_abort);
}

TEST(PipelineExecute, ConstraintViolationRollsBackEverything) {
  Rig rig;
  rig.store.register_constraint([](const Document& d) {
    auto it = d.fields.find("balance");
    return it == d.fields.end() || std::stoll(it->second) >= 0;
  });
  rig.store.put_raw(Document{doc("acct"), {{"balance", "100"}}, 1});
  rig.store.put_raw(Document{doc("log"), {{"entries", "0"}}, 1});
  const auto before = rig.store.snapshot();

  // Three writes: the first two apply (one update, one insert), the third
  // violates the constraint — everything must be restored.
  auto outcome = rig.pipeline.run_transaction(
      {Operation::update(doc("log"), {{"entries", "1"}}),
       Operation::insert(doc("receipt"), {{"total", "150"}}),
       Operation::read_modify_write(doc("acct"),
                                    ModifySpec::increment("balance", -150))});
  EXPECT_EQ(outcome.result.status, ExecStatus::kFailure);
  EXPECT_EQ(outcome.result.reason, FailureReason::kConstraintViolation);
  EXPECT_EQ(outcome.tc.state, TxState::kAborted);
  EXPECT_EQ(rig.store.snapshot(), before);  // bit-exact restore
  EXPECT_EQ(rig.locks.entry_count(), 0u);
  EXPECT_EQ(rig.pipeline.active_transactions(), 0u);

  const auto events = rig.sink.snapshot();
  EXPECT_EQ(events.back().kind, EventKind::kRelease);
  bool saw_abort = false;
  for (const auto& e : events) {
    if (e.kind == EventKind::kAbort) {
      saw_abort = true;
      EXPECT_EQ(e.detail, "CONSTRAINT_VIOLATION");
    }
  }
  EXPECT_TRUE(saw_abort);
}

TEST(PipelineExecute, MissingDocumentUpdateAbortsAndRestores) {
  Rig rig;
  rig.store.put_raw(Document{doc("a"), {{"f", "0"}}, 1});
  const auto before = rig.store.snapshot();
  auto outcome = rig.pipeline.run_transaction(
      {Operation::update(doc("a"), {{"f", "1"}}),
       Operation::update(doc("ghost"), {{"f", "1"}})});
  EXPECT_EQ(outcome.result.status, ExecStatus::kFailure);
  EXPECT_EQ(rig.store.snapshot(), before);
}

TEST(PipelineExecute, ExpiredReadLockForcesAbort) {
  // Pipeline grants carry the lock timeout (100 ms) as their lease. A store
  // slower than that lets the read lock expire mid-transaction; the sweep
  // releases it and the owner must abort.
  Rig rig;
  LatencyProfile slow;
  slow.read_delay = {milliseconds(150), milliseconds(150)};
  rig.store.set_latency(slow);
  rig.store.put_raw(Document{doc("a"), {{"f", "0"}}, 1});

  auto outcome = rig.pipeline.run_transaction({Operation::read(doc("a"))});
  EXPECT_EQ(outcome.result.status, ExecStatus::kFailure);
  EXPECT_EQ(outcome.result.reason, FailureReason::kAutoReleased);
  EXPECT_EQ(outcome.tc.state, TxState::kAborted);
  EXPECT_EQ(rig.locks.entry_count(), 0u);
  EXPECT_EQ(rig.pipeline.active_transactions(), 0u);

  const auto events = rig.sink.snapshot();
  EXPECT_EQ(events.back().kind, EventKind::kAbort);
  EXPECT_EQ(events.back().detail, "AUTO_RELEASED");
}

TEST(PipelineExecute, WrittenDocumentsSurviveExpiryAndCommit) {
  // Writes outlive the lease too, but locks on documents the transaction
  // has already written are retained (re-armed), so the commit succeeds.
  Rig rig;
  LatencyProfile slow;
  slow.write_delay = {milliseconds(150), milliseconds(150)};
  rig.store.set_latency(slow);
  rig.store.put_raw(Document{doc("a"), {{"f", "0"}}, 1});

  auto outcome = rig.pipeline.run_transaction(
      {Operation::update(doc("a"), {{"f", "1"}})});
  EXPECT_TRUE(outcome.result.ok());
  EXPECT_EQ(rig.store.get(doc("a"))->fields.at("f"), "1");
  EXPECT_EQ(rig.locks.entry_count(), 0u);
  EXPECT_EQ(rig.locks.release_misses(), 0u);
}

TEST(PipelineExecute, RollbackOutsideExecutionThrows) {
  Rig rig;
  auto tc = rig.pipeline.init_transaction({Operation::read(doc("a"))});
  EXPECT_THROW(rig.pipeline.rollback(tc), std::logic_error);
}

}  // namespace
}  // namespace dtx
