#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dtx/clock.hpp"
#include "dtx/types.hpp"

namespace dtx {

enum class WriteOutcome { kApplied, kConstraintViolation, kNotFound };

[[nodiscard]] inline const char* to_string(WriteOutcome o) {
  switch (o) {
    case WriteOutcome::kApplied: return "APPLIED";
    case WriteOutcome::kConstraintViolation: return "CONSTRAINT_VIOLATION";
    case WriteOutcome::kNotFound: return "NOT_FOUND";
  }
  return "?";
}

/**
 * Result of one write-class operation. pre_image is the document state the
 * write replaced (nullopt when the write created the document) and is only
 * meaningful when outcome == kApplied; it is captured atomically with the
 * mutation so callers can roll back without a second racing read.
 */
struct WriteResult {
  WriteOutcome outcome = WriteOutcome::kApplied;
  std::optional<Document> pre_image;
};

/** Inclusive delay range; min == max gives a fixed delay. */
struct DelayRange {
  Nanos min{0};
  Nanos max{0};

  [[nodiscard]] bool zero() const {
    return min <= Nanos::zero() && max <= Nanos::zero();
  }
};

/** Optional per-operation latency injection, emulating a remote store. */
struct LatencyProfile {
  DelayRange read_delay;
  DelayRange write_delay;
  std::uint64_t seed = 0;
};

/** Post-image predicate; a write only commits when every predicate holds. */
using ConstraintFn = std::function<bool(const Document&)>;

/**
 * Minimal document-store interface the pipeline coordinates against.
 *
 * The store itself guarantees only per-document atomicity of a single call;
 * all multi-document and read-modify-write isolation comes from the layers
 * above. `restore` exists solely for rollback: it reinstates a pre-image
 * verbatim (including its version) or removes the document when the
 * pre-image is empty.
 */
class Store {
 public:
  virtual ~Store() = default;

  [[nodiscard]] virtual std::optional<Document> get(const DocumentId& id) = 0;
  virtual WriteResult apply_write(const Operation& op) = 0;
  [[nodiscard]] virtual std::map<DocumentId, Document> snapshot() const = 0;
  virtual void restore(const DocumentId& id,
                       const std::optional<Document>& pre_image) = 0;
  [[nodiscard]] virtual std::size_t size() const = 0;
};

/**
 * Hash-sharded in-memory document store.
 *
 * Each shard holds its own mutex, so operations on different documents run
 * concurrently. Injected latency is applied before the shard latch is taken:
 * the delay models the round trip to a remote store, not time spent holding
 * internal locks.
 */
class InMemoryStore final : public Store {
 public:
  explicit InMemoryStore(std::shared_ptr<Clock> clock,
                         std::optional<LatencyProfile> latency = std::nullopt)
      : clock_(std::move(clock)) {
    set_latency(std::move(latency));
  }

  /** Replaces the latency profile (reseeds the delay RNG). */
  void set_latency(std::optional<LatencyProfile> latency) {
    std::lock_guard<std::mutex> g(delay_mu_);
    latency_ = std::move(latency);
    delay_rng_.seed(latency_ ? latency_->seed : 0);
  }

  /** Registers a post-image constraint. Not applied to deletes. */
  void register_constraint(ConstraintFn fn) {
    std::unique_lock<std::shared_mutex> g(constraints_mu_);
    constraints_.push_back(std::move(fn));
  }

  [[nodiscard]] std::optional<Document> get(const DocumentId& id) override {
    inject_read_delay();
    Shard& s = shard_for(id);
    std::lock_guard<std::mutex> g(s.mu);
    auto it = s.docs.find(id);
    if (it == s.docs.end()) {
      return std::nullopt;
    }
    return it->second;
  }

  WriteResult apply_write(const Operation& op) override {
    if (!op.in_write_class()) {
      throw std::logic_error("apply_write called with a READ operation");
    }
    inject_write_delay();
    Shard& s = shard_for(op.doc);
    std::lock_guard<std::mutex> g(s.mu);
    auto it = s.docs.find(op.doc);
    switch (op.kind) {
      case OpKind::kInsert: {
        if (it != s.docs.end()) {
          // Duplicate creation violates insert semantics.
          return {WriteOutcome::kConstraintViolation, std::nullopt};
        }
        Document candidate{op.doc, op.payload, 1};
        if (!satisfies_constraints(candidate)) {
          return {WriteOutcome::kConstraintViolation, std::nullopt};
        }
        s.docs.emplace(op.doc, std::move(candidate));
        return {WriteOutcome::kApplied, std::nullopt};
      }
      case OpKind::kUpdate: {
        if (it == s.docs.end()) {
          return {WriteOutcome::kNotFound, std::nullopt};
        }
        Document candidate = it->second;
        for (const auto& [k, v] : op.payload) {
          candidate.fields[k] = v;
        }
        candidate.version++;
        if (!satisfies_constraints(candidate)) {
          return {WriteOutcome::kConstraintViolation, std::nullopt};
        }
        Document pre = std::exchange(it->second, std::move(candidate));
        return {WriteOutcome::kApplied, std::move(pre)};
      }
      case OpKind::kDelete: {
        if (it == s.docs.end()) {
          return {WriteOutcome::kNotFound, std::nullopt};
        }
        Document pre = std::move(it->second);
        s.docs.erase(it);
        return {WriteOutcome::kApplied, std::move(pre)};
      }
      case OpKind::kReadModifyWrite: {
        if (it == s.docs.end()) {
          return {WriteOutcome::kNotFound, std::nullopt};
        }
        Document candidate = it->second;
        apply_modify(candidate, *op.modify);
        candidate.version++;
        if (!satisfies_constraints(candidate)) {
          return {WriteOutcome::kConstraintViolation, std::nullopt};
        }
        Document pre = std::exchange(it->second, std::move(candidate));
        return {WriteOutcome::kApplied, std::move(pre)};
      }
      case OpKind::kRead:
        break;
    }
    throw std::logic_error("unreachable write kind");
  }

  [[nodiscard]] std::map<DocumentId, Document> snapshot() const override {
    std::array<std::unique_lock<std::mutex>, kShards> guards;
    for (std::size_t i = 0; i < kShards; ++i) {
      guards[i] = std::unique_lock<std::mutex>(shards_[i].mu);
    }
    std::map<DocumentId, Document> out;
    for (const auto& shard : shards_) {
      for (const auto& [id, doc] : shard.docs) {
        out.emplace(id, doc);
      }
    }
    return out;
  }

  void restore(const DocumentId& id,
               const std::optional<Document>& pre_image) override {
    Shard& s = shard_for(id);
    std::lock_guard<std::mutex> g(s.mu);
    if (pre_image.has_value()) {
      s.docs[id] = *pre_image;
    } else {
      s.docs.erase(id);
    }
  }

  [[nodiscard]] std::size_t size() const override {
    std::size_t n = 0;
    for (const auto& shard : shards_) {
      std::lock_guard<std::mutex> g(shard.mu);
      n += shard.docs.size();
    }
    return n;
  }

  /** Bulk-load path: no delay, no constraints, version kept as given. */
  void put_raw(Document doc) {
    Shard& s = shard_for(doc.id);
    std::lock_guard<std::mutex> g(s.mu);
    s.docs[doc.id] = std::move(doc);
  }

  /** Loads one NDJSON document per line; returns the number loaded. */
  std::size_t load_ndjson(std::istream& in) {
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) {
        continue;
      }
      const auto j = nlohmann::json::parse(line);
      Document doc;
      doc.id.value = j.at("id").get<std::string>();
      doc.version = j.at("version").get<std::uint64_t>();
      for (const auto& [k, v] : j.at("fields").items()) {
        doc.fields[k] = v.get<std::string>();
      }
      put_raw(std::move(doc));
      ++n;
    }
    return n;
  }

  /** Writes the full content as NDJSON, ordered by document id. */
  void dump_ndjson(std::ostream& out) const {
    for (const auto& [id, doc] : snapshot()) {
      nlohmann::json j;
      j["id"] = id.value;
      j["fields"] = doc.fields;
      j["version"] = doc.version;
      out << j.dump() << '\n';
    }
  }

  /** Applies a modify spec to a document in place (no version bump). */
  static void apply_modify(Document& doc, const ModifySpec& spec) {
    if (spec.kind == ModifySpec::Kind::kSetFields) {
      for (const auto& [k, v] : spec.fields) {
        doc.fields[k] = v;
      }
      return;
    }
    // kIncrement: treat a missing or non-numeric field as zero.
    std::int64_t current = 0;
    auto it = doc.fields.find(spec.field);
    if (it != doc.fields.end()) {
      const auto& text = it->second;
      std::from_chars(text.data(), text.data() + text.size(), current);
    }
    doc.fields[spec.field] = std::to_string(current + spec.delta);
  }

 private:
  static constexpr std::size_t kShards = 64;

  struct Shard {
    mutable std::mutex mu;
    std::unordered_map<DocumentId, Document> docs;
  };

  [[nodiscard]] Shard& shard_for(const DocumentId& id) {
    return shards_[std::hash<DocumentId>{}(id) % kShards];
  }

  [[nodiscard]] bool satisfies_constraints(const Document& candidate) const {
    std::shared_lock<std::shared_mutex> g(constraints_mu_);
    for (const auto& fn : constraints_) {
      if (!fn(candidate)) {
        return false;
      }
    }
    return true;
  }

  void inject_read_delay() { inject([](const LatencyProfile& p) {
    return p.read_delay; }); }

  void inject_write_delay() { inject([](const LatencyProfile& p) {
    return p.write_delay; }); }

  template <typename RangeFn>
  void inject(RangeFn range_of) {
    Nanos d{0};
    {
      std::lock_guard<std::mutex> g(delay_mu_);
      if (!latency_) {
        return;
      }
      const DelayRange r = range_of(*latency_);
      if (r.zero()) {
        return;
      }
      std::uniform_int_distribution<std::int64_t> dist(r.min.count(),
                                                       r.max.count());
      d = Nanos(dist(delay_rng_));
    }
    clock_->sleep_for(d);
  }

  std::shared_ptr<Clock> clock_;
  std::optional<LatencyProfile> latency_;
  std::mt19937_64 delay_rng_;
  std::mutex delay_mu_;
  std::vector<ConstraintFn> constraints_;
  mutable std::shared_mutex constraints_mu_;
  std::array<Shard, kShards> shards_;
};

}  // namespace dtx
