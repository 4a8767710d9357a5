#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dtx/event_log.hpp"
#include "dtx/lock_manager.hpp"
#include "dtx/types.hpp"

namespace dtx {

/**
 * The subset of the event stream that matters for isolation checking:
 * which transaction touched which document, in what global order, and how
 * each transaction ended.
 */
struct HistoryEvent {
  enum class Kind { kRead, kWrite, kCommit, kAbort };

  std::uint64_t seq = 0;
  TransactionId tx;
  Kind kind = Kind::kRead;
  std::optional<DocumentId> doc;  // set for kRead / kWrite
};

/**
 * An append-only, order-validated account of one execution. record()
 * enforces that sequence numbers strictly increase and that no transaction
 * produces data events after its terminal event.
 */
class ExecutionHistory {
 public:
  void record(HistoryEvent e) {
    if (e.seq <= last_seq_) {
      throw std::invalid_argument(
          "history events must arrive in strictly increasing seq order");
    }
    const bool is_data =
        e.kind == HistoryEvent::Kind::kRead || e.kind == HistoryEvent::Kind::kWrite;
    if (is_data && !e.doc.has_value()) {
      throw std::invalid_argument("data event without a document");
    }
    if (terminal_.contains(e.tx)) {
      throw std::invalid_argument("event after terminal for transaction " +
                                  e.tx.value);
    }
    if (!is_data) {
      terminal_.insert(e.tx);
      if (e.kind == HistoryEvent::Kind::kCommit) {
        committed_.insert(e.tx);
      }
    }
    last_seq_ = e.seq;
    events_.push_back(std::move(e));
  }

  [[nodiscard]] const std::vector<HistoryEvent>& events() const {
    return events_;
  }

  [[nodiscard]] const std::set<TransactionId>& committed() const {
    return committed_;
  }

  /** Projects the pipeline event stream down to history events. */
  [[nodiscard]] static ExecutionHistory from_events(
      const std::vector<Event>& events) {
    ExecutionHistory h;
    for (const auto& e : events) {
      switch (e.kind) {
        case EventKind::kRead:
          h.record(HistoryEvent{e.seq, e.tx, HistoryEvent::Kind::kRead, e.doc});
          break;
        case EventKind::kWrite:
          h.record(
              HistoryEvent{e.seq, e.tx, HistoryEvent::Kind::kWrite, e.doc});
          break;
        case EventKind::kCommit:
          h.record(HistoryEvent{e.seq, e.tx, HistoryEvent::Kind::kCommit,
                                std::nullopt});
          break;
        case EventKind::kAbort:
          h.record(HistoryEvent{e.seq, e.tx, HistoryEvent::Kind::kAbort,
                                std::nullopt});
          break;
        default:
          break;
      }
    }
    return h;
  }

  [[nodiscard]] static ExecutionHistory from_jsonl(std::istream& in) {
    return from_events(MemoryEventSink::read_jsonl(in));
  }

 private:
  std::vector<HistoryEvent> events_;
  std::unordered_set<TransactionId> terminal_;
  std::set<TransactionId> committed_;
  std::uint64_t last_seq_ = 0;
};

/** Directed conflict graph over committed transactions. */
struct ConflictGraph {
  std::set<TransactionId> nodes;
  std::map<TransactionId, std::set<TransactionId>> adj;
};

/**
 * Builds the conflict graph: an edge T→U whenever a committed T touches a
 * document before a committed U does and at least one of the two accesses
 * is a write. Events of aborted (or still-running) transactions are
 * excluded — their effects were rolled back and never observed.
 */
[[nodiscard]] inline ConflictGraph build_conflict_graph(
    const ExecutionHistory& history) {
  ConflictGraph graph;
  graph.nodes = history.committed();

  struct Access {
    TransactionId tx;
    bool write;
  };
  std::map<DocumentId, std::vector<Access>> per_doc;
  for (const auto& e : history.events()) {
    const bool is_write = e.kind == HistoryEvent::Kind::kWrite;
    const bool is_read = e.kind == HistoryEvent::Kind::kRead;
    if (!is_write && !is_read) {
      continue;
    }
    if (!graph.nodes.contains(e.tx)) {
      continue;
    }
    per_doc[*e.doc].push_back(Access{e.tx, is_write});
  }

  for (const auto& [doc, accesses] : per_doc) {
    for (std::size_t i = 0; i < accesses.size(); ++i) {
      for (std::size_t j = i + 1; j < accesses.size(); ++j) {
        if (accesses[i].tx == accesses[j].tx) {
          continue;
        }
        if (accesses[i].write || accesses[j].write) {
          graph.adj[accesses[i].tx].insert(accesses[j].tx);
        }
      }
    }
  }
  return graph;
}

/** Returns one cycle (as a node sequence) when the graph has any. */
[[nodiscard]] inline std::optional<std::vector<TransactionId>> find_cycle(
    const ConflictGraph& graph) {
  enum class Color { kWhite, kGray, kBlack };
  std::map<TransactionId, Color> color;
  for (const auto& n : graph.nodes) {
    color[n] = Color::kWhite;
  }

  for (const auto& root : graph.nodes) {
    if (color[root] != Color::kWhite) {
      continue;
    }
    // Iterative DFS; the stack holds (node, next-neighbor iterator).
    std::vector<
        std::pair<TransactionId, std::set<TransactionId>::const_iterator>>
        stack;
    static const std::set<TransactionId> kNoNeighbors;
    auto neighbors_of = [&](const TransactionId& n)
        -> const std::set<TransactionId>& {
      auto it = graph.adj.find(n);
      return it == graph.adj.end() ? kNoNeighbors : it->second;
    };
    color[root] = Color::kGray;
    stack.emplace_back(root, neighbors_of(root).begin());
    while (!stack.empty()) {
      auto& [node, it] = stack.back();
      const auto& neighbors = neighbors_of(node);
      if (it == neighbors.end()) {
        color[node] = Color::kBlack;
        stack.pop_back();
        continue;
      }
      const TransactionId next = *it;
      ++it;
      if (color[next] == Color::kWhite) {
        color[next] = Color::kGray;
        stack.emplace_back(next, neighbors_of(next).begin());
      } else if (color[next] == Color::kGray) {
        // Back edge: the cycle is `next … node` on the gray stack.
        std::vector<TransactionId> cycle;
        bool collecting = false;
        for (const auto& [n, unused] : stack) {
          if (n == next) {
            collecting = true;
          }
          if (collecting) {
            cycle.push_back(n);
          }
        }
        return cycle;
      }
    }
  }
  return std::nullopt;
}

/** Cycle-free conflict graph ⇔ conflict serializable. */
[[nodiscard]] inline bool is_conflict_serializable(
    const ExecutionHistory& history) {
  return !find_cycle(build_conflict_graph(history)).has_value();
}

inline constexpr std::size_t kBruteForceLimit = 6;

/**
 * Ground-truth serializability: enumerates every serial order of the
 * committed transactions and accepts when one of them honours all conflict
 * precedences. Deliberately independent of the graph-based check so the
 * two can validate each other. Refuses (throws std::invalid_argument)
 * beyond 6 committed transactions — factorial growth.
 */
[[nodiscard]] inline bool brute_force_serializable(
    const ExecutionHistory& history) {
  const auto& committed = history.committed();
  if (committed.size() > kBruteForceLimit) {
    throw std::invalid_argument(
        "brute-force serializability enumeration is limited to " +
        std::to_string(kBruteForceLimit) + " committed transactions, got " +
        std::to_string(committed.size()));
  }
  if (committed.size() <= 1) {
    return true;
  }

  std::vector<TransactionId> txs(committed.begin(), committed.end());
  std::map<TransactionId, std::size_t> index;
  for (std::size_t i = 0; i < txs.size(); ++i) {
    index[txs[i]] = i;
  }

  // Required precedences: first-accessor before second-accessor for every
  // conflicting pair, derived straight from the event order.
  std::set<std::pair<std::size_t, std::size_t>> precedences;
  {
    struct Access {
      TransactionId tx;
      bool write;
    };
    std::map<DocumentId, std::vector<Access>> per_doc;
    for (const auto& e : history.events()) {
      const bool is_write = e.kind == HistoryEvent::Kind::kWrite;
      const bool is_read = e.kind == HistoryEvent::Kind::kRead;
      if ((!is_write && !is_read) || !committed.contains(e.tx)) {
        continue;
      }
      per_doc[*e.doc].push_back(Access{e.tx, is_write});
    }
    for (const auto& [doc, accesses] : per_doc) {
      for (std::size_t i = 0; i < accesses.size(); ++i) {
        for (std::size_t j = i + 1; j < accesses.size(); ++j) {
          if (accesses[i].tx != accesses[j].tx &&
              (accesses[i].write || accesses[j].write)) {
            precedences.emplace(index[accesses[i].tx], index[accesses[j].tx]);
          }
        }
      }
    }
  }

  std::vector<std::size_t> order(txs.size());
  std::iota(order.begin(), order.end(), 0);
  do {
    std::vector<std::size_t> position(txs.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      position[order[pos]] = pos;
    }
    bool valid = true;
    for (const auto& [before, after] : precedences) {
      if (position[before] >= position[after]) {
        valid = false;
        break;
      }
    }
    if (valid) {
      return true;
    }
  } while (std::next_permutation(order.begin(), order.end()));
  return false;
}

/** Machine-readable verdict: {"serializable": bool, "cycle": [...]|null}. */
[[nodiscard]] inline nlohmann::json serializability_verdict(
    const ExecutionHistory& history) {
  const auto cycle = find_cycle(build_conflict_graph(history));
  nlohmann::json j;
  j["serializable"] = !cycle.has_value();
  if (cycle) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& tx : *cycle) {
      nodes.push_back(tx.value);
    }
    j["cycle"] = std::move(nodes);
  } else {
    j["cycle"] = nullptr;
  }
  return j;
}

// ───────────────────── deadlock dissolution ─────────────────────

/** One wait-graph observation. */
struct WaitGraphSample {
  Nanos t{0};
  WaitGraph graph;
};

/** Strongly connected components with ≥ 2 nodes — the cyclic ones. */
[[nodiscard]] inline std::vector<std::set<TransactionId>> cyclic_components(
    const WaitGraph& graph) {
  // Tarjan's algorithm, iterative.
  std::vector<TransactionId> nodes;
  std::map<TransactionId, std::size_t> id_of;
  for (const auto& n : graph.nodes()) {
    id_of[n] = nodes.size();
    nodes.push_back(n);
  }
  const std::size_t n = nodes.size();
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& [from, tos] : graph.edges) {
    for (const auto& to : tos) {
      adj[id_of[from]].push_back(id_of[to]);
    }
  }

  constexpr std::size_t kUnvisited = static_cast<std::size_t>(-1);
  std::vector<std::size_t> index(n, kUnvisited);
  std::vector<std::size_t> lowlink(n, 0);
  std::vector<bool> on_stack(n, false);
  std::vector<std::size_t> stack;
  std::size_t counter = 0;
  std::vector<std::set<TransactionId>> cyclic;

  struct Frame {
    std::size_t node;
    std::size_t edge = 0;
  };
  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] != kUnvisited) {
      continue;
    }
    std::vector<Frame> frames{{root}};
    while (!frames.empty()) {
      Frame& f = frames.back();
      if (f.edge == 0) {
        index[f.node] = lowlink[f.node] = counter++;
        stack.push_back(f.node);
        on_stack[f.node] = true;
      }
      if (f.edge < adj[f.node].size()) {
        const std::size_t next = adj[f.node][f.edge++];
        if (index[next] == kUnvisited) {
          frames.push_back(Frame{next});
        } else if (on_stack[next]) {
          lowlink[f.node] = std::min(lowlink[f.node], index[next]);
        }
        continue;
      }
      if (lowlink[f.node] == index[f.node]) {
        std::set<TransactionId> component;
        for (;;) {
          const std::size_t top = stack.back();
          stack.pop_back();
          on_stack[top] = false;
          component.insert(nodes[top]);
          if (top == f.node) {
            break;
          }
        }
        if (component.size() >= 2) {
          cyclic.push_back(std::move(component));
        }
      }
      const std::size_t done = f.node;
      frames.pop_back();
      if (!frames.empty()) {
        lowlink[frames.back().node] =
            std::min(lowlink[frames.back().node], lowlink[done]);
      }
    }
  }
  return cyclic;
}

/**
 * A cycle only counts as a deadlock when the same set of transactions
 * stays cyclically entangled in every consecutive sample across an
 * interval longer than `timeout`. Returns those node sets (empty ⇒ all
 * cycles dissolved in time).
 */
[[nodiscard]] inline std::vector<std::set<TransactionId>> persistent_cycles(
    const std::vector<WaitGraphSample>& samples, Nanos timeout) {
  std::map<std::set<TransactionId>, Nanos> first_seen;
  std::set<std::set<TransactionId>> violating;
  for (const auto& sample : samples) {
    std::map<std::set<TransactionId>, Nanos> next;
    for (auto& component : cyclic_components(sample.graph)) {
      auto it = first_seen.find(component);
      const Nanos start = it == first_seen.end() ? sample.t : it->second;
      if (sample.t - start > timeout) {
        violating.insert(component);
      }
      next.emplace(std::move(component), start);
    }
    first_seen = std::move(next);  // absence breaks the streak
  }
  return {violating.begin(), violating.end()};
}

/** True when no wait-graph cycle outlived the timeout. */
[[nodiscard]] inline bool check_deadlock_dissolution(
    const std::vector<WaitGraphSample>& samples, Nanos timeout) {
  return persistent_cycles(samples, timeout).empty();
}

// ───────────────────── protocol audit ─────────────────────

/**
 * Replays a pipeline event stream and checks the protocol discipline:
 * locking is two-phase per transaction (no lock after the first data
 * operation, no data operation after the first release) and every state
 * transition implied by the events is legal.
 */
struct AuditReport {
  std::uint64_t transactions = 0;
  std::uint64_t release_before_data = 0;
  std::uint64_t lock_after_data = 0;
  std::uint64_t illegal_transitions = 0;
  std::vector<std::string> violations;

  [[nodiscard]] bool clean() const {
    return release_before_data == 0 && lock_after_data == 0 &&
           illegal_transitions == 0;
  }
};

[[nodiscard]] inline AuditReport audit_history(
    const std::vector<Event>& events) {
  struct TxTrace {
    bool saw_data = false;
    bool saw_release = false;
    TxState state = TxState::kPending;
    bool terminal = false;
  };
  std::unordered_map<TransactionId, TxTrace> traces;
  AuditReport report;

  auto note = [&report](std::string msg) {
    if (report.violations.size() < 32) {
      report.violations.push_back(std::move(msg));
    }
  };
  auto transition = [&](TxTrace& trace, const Event& e, TxState to) {
    if (!is_legal_transition(trace.state, to)) {
      report.illegal_transitions++;
      note("tx " + e.tx.value + ": illegal transition " +
           std::string(to_string(trace.state)) + " -> " + to_string(to) +
           " at seq " + std::to_string(e.seq));
      return;
    }
    trace.state = to;
  };

  for (const auto& e : events) {
    auto [it, inserted] = traces.try_emplace(e.tx);
    TxTrace& trace = it->second;
    if (inserted) {
      report.transactions++;
    }
    switch (e.kind) {
      case EventKind::kInit:
      case EventKind::kClassify:
      case EventKind::kNotReady:
      case EventKind::kRetry:
        break;  // PENDING stays PENDING
      case EventKind::kReady:
        transition(trace, e, TxState::kReady);
        break;
      case EventKind::kExecute:
        transition(trace, e, TxState::kExecuting);
        break;
      case EventKind::kLock:
      case EventKind::kLocked:
        if (trace.saw_data) {
          report.lock_after_data++;
          note("tx " + e.tx.value + ": lock after data at seq " +
               std::to_string(e.seq));
        }
        break;
      case EventKind::kRead:
      case EventKind::kWrite:
        trace.saw_data = true;
        if (trace.saw_release) {
          report.release_before_data++;
          note("tx " + e.tx.value + ": data after release at seq " +
               std::to_string(e.seq));
        }
        break;
      case EventKind::kCommit:
        transition(trace, e, TxState::kCommitted);
        trace.terminal = true;
        break;
      case EventKind::kAbort:
        transition(trace, e, TxState::kAborted);
        trace.terminal = true;
        break;
      case EventKind::kRelease:
        trace.saw_release = true;
        break;
    }
  }
  return report;
}

}  // namespace dtx
