#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dtx/store.hpp"
#include "dtx/types.hpp"

namespace dtx {

enum class WorkloadName { kA, kB, kF, kCustom };

[[nodiscard]] inline const char* to_string(WorkloadName n) {
  switch (n) {
    case WorkloadName::kA: return "a";
    case WorkloadName::kB: return "b";
    case WorkloadName::kF: return "f";
    case WorkloadName::kCustom: return "custom";
  }
  return "?";
}

enum class KeyDistribution { kZipfian, kUniform, kHotspot };

[[nodiscard]] inline const char* to_string(KeyDistribution d) {
  switch (d) {
    case KeyDistribution::kZipfian: return "zipfian";
    case KeyDistribution::kUniform: return "uniform";
    case KeyDistribution::kHotspot: return "hotspot";
  }
  return "?";
}

/**
 * Describes an operation mix over a keyspace of `record_count` documents
 * named user0 … userN-1, each with `field_count` fields of `field_length`
 * printable bytes. The three standard mixes:
 *
 *   a — 50% reads, 50% updates        (update heavy)
 *   b — 95% reads,  5% updates        (read mostly)
 *   f — 50% reads, 50% read-modify-writes
 */
struct WorkloadSpec {
  WorkloadName name = WorkloadName::kCustom;
  double read_fraction = 1.0;
  double update_fraction = 0.0;
  double rmw_fraction = 0.0;
  std::size_t record_count = 1000;
  int field_count = 10;
  int field_length = 100;
  KeyDistribution distribution = KeyDistribution::kZipfian;
  double zipf_theta = 0.99;
  double hot_op_fraction = 0.2;   // share of ops aimed at the hot set
  double hot_key_fraction = 0.01; // share of the keyspace that is hot
  int ops_per_transaction = 1;

  [[nodiscard]] static WorkloadSpec workload_a() {
    WorkloadSpec s;
    s.name = WorkloadName::kA;
    s.read_fraction = 0.5;
    s.update_fraction = 0.5;
    return s;
  }

  [[nodiscard]] static WorkloadSpec workload_b() {
    WorkloadSpec s;
    s.name = WorkloadName::kB;
    s.read_fraction = 0.95;
    s.update_fraction = 0.05;
    return s;
  }

  [[nodiscard]] static WorkloadSpec workload_f() {
    WorkloadSpec s;
    s.name = WorkloadName::kF;
    s.read_fraction = 0.5;
    s.rmw_fraction = 0.5;
    return s;
  }

  void validate() const {
    const double sum = read_fraction + update_fraction + rmw_fraction;
    if (std::abs(sum - 1.0) > 1e-9) {
      throw std::invalid_argument(
          "operation fractions must sum to 1, got " + std::to_string(sum));
    }
    if (read_fraction < 0 || update_fraction < 0 || rmw_fraction < 0) {
      throw std::invalid_argument("operation fractions must be non-negative");
    }
    if (record_count == 0) {
      throw std::invalid_argument("record_count must be positive");
    }
    if (field_count <= 0 || field_length <= 0) {
      throw std::invalid_argument("field shape must be positive");
    }
    if (ops_per_transaction <= 0) {
      throw std::invalid_argument("ops_per_transaction must be positive");
    }
    if (zipf_theta <= 0 || zipf_theta >= 1) {
      throw std::invalid_argument("zipfian theta must be in (0, 1)");
    }
    if (hot_op_fraction < 0 || hot_op_fraction > 1 || hot_key_fraction <= 0 ||
        hot_key_fraction > 1) {
      throw std::invalid_argument("hot-spot fractions out of range");
    }
  }

  /**
   * Parses a properties file: `key=value` lines, `#` comments. Recognized
   * keys: recordcount, fieldcount, fieldlength, readproportion,
   * updateproportion, readmodifywriteproportion, requestdistribution,
   * zipfianconstant, hotspotopnfraction, hotspotdatafraction,
   * opspertransaction. Unknown keys are ignored.
   */
  [[nodiscard]] static WorkloadSpec from_properties(std::istream& in) {
    WorkloadSpec s;
    s.read_fraction = 0.0;
    std::string line;
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) {
        line.erase(hash);
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        continue;
      }
      auto trim = [](std::string v) {
        const auto b = v.find_first_not_of(" \t\r\n");
        const auto e = v.find_last_not_of(" \t\r\n");
        return b == std::string::npos ? std::string{}
                                      : v.substr(b, e - b + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty() || value.empty()) {
        continue;
      }
      try {
        if (key == "recordcount") {
          s.record_count = std::stoull(value);
        } else if (key == "fieldcount") {
          s.field_count = std::stoi(value);
        } else if (key == "fieldlength") {
          s.field_length = std::stoi(value);
        } else if (key == "readproportion") {
          s.read_fraction = std::stod(value);
        } else if (key == "updateproportion") {
          s.update_fraction = std::stod(value);
        } else if (key == "readmodifywriteproportion") {
          s.rmw_fraction = std::stod(value);
        } else if (key == "requestdistribution") {
          if (value == "zipfian") {
            s.distribution = KeyDistribution::kZipfian;
          } else if (value == "uniform") {
            s.distribution = KeyDistribution::kUniform;
          } else if (value == "hotspot") {
            s.distribution = KeyDistribution::kHotspot;
          } else {
            throw std::invalid_argument("unknown requestdistribution: " +
                                        value);
          }
        } else if (key == "zipfianconstant") {
          s.zipf_theta = std::stod(value);
        } else if (key == "hotspotopnfraction") {
          s.hot_op_fraction = std::stod(value);
        } else if (key == "hotspotdatafraction") {
          s.hot_key_fraction = std::stod(value);
        } else if (key == "opspertransaction") {
          s.ops_per_transaction = std::stoi(value);
        }
      } catch (const std::invalid_argument&) {
        throw;
      } catch (const std::exception&) {
        throw std::invalid_argument("bad value for " + key + ": " + value);
      }
    }
    s.validate();
    return s;
  }

  [[nodiscard]] static WorkloadSpec from_properties_file(
      const std::string& path) {
    std::ifstream in(path);
    if (!in) {
      throw std::invalid_argument("cannot open workload file: " + path);
    }
    return from_properties(in);
  }
};

/**
 * Zipfian rank sampler over {0 … n-1} with skew theta, rank 0 being the
 * most popular item. Uses the standard rejection-free construction: the
 * normalizer zeta(n, theta) is precomputed, and each draw inverts the
 * CDF approximation with two special cases for the first two ranks.
 */
class ZipfianGenerator {
 public:
  ZipfianGenerator(std::uint64_t n, double theta) : n_(n), theta_(theta) {
    if (n == 0) {
      throw std::invalid_argument("zipfian over an empty keyspace");
    }
    zetan_ = zeta(n, theta);
    zeta2_ = zeta(2, theta);
    alpha_ = 1.0 / (1.0 - theta);
    eta_ = (1.0 - std::pow(2.0 / static_cast<double>(n), 1.0 - theta)) /
           (1.0 - zeta2_ / zetan_);
  }

  /** Harmonic-like normalizer: Σ_{i=1..n} 1 / i^theta. */
  [[nodiscard]] static double zeta(std::uint64_t n, double theta) {
    double sum = 0.0;
    for (std::uint64_t i = 1; i <= n; ++i) {
      sum += 1.0 / std::pow(static_cast<double>(i), theta);
    }
    return sum;
  }

  [[nodiscard]] double zetan() const { return zetan_; }

  template <typename Rng>
  [[nodiscard]] std::uint64_t next(Rng& rng) const {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double u = uniform(rng);
    const double uz = u * zetan_;
    if (uz < 1.0) {
      return 0;
    }
    if (uz < 1.0 + std::pow(0.5, theta_)) {
      return 1;
    }
    const auto rank = static_cast<std::uint64_t>(
        static_cast<double>(n_) * std::pow(eta_ * u - eta_ + 1.0, alpha_));
    return std::min(rank, n_ - 1);
  }

 private:
  std::uint64_t n_;
  double theta_;
  double zetan_;
  double zeta2_;
  double alpha_;
  double eta_;
};

/**
 * One-shot Zipfian draw. Caches the generator for the last (theta, n) pair
 * per thread, so repeated calls with stable parameters stay O(1).
 */
template <typename Rng>
[[nodiscard]] inline std::uint64_t zipfian_next(double theta, std::uint64_t n,
                                                Rng& rng) {
  thread_local double cached_theta = -1.0;
  thread_local std::uint64_t cached_n = 0;
  thread_local std::optional<ZipfianGenerator> cached;
  if (!cached || cached_theta != theta || cached_n != n) {
    cached.emplace(n, theta);
    cached_theta = theta;
    cached_n = n;
  }
  return cached->next(rng);
}

/** Key for the i-th record. */
[[nodiscard]] inline DocumentId ycsb_key(std::uint64_t index) {
  return DocumentId{"user" + std::to_string(index)};
}

/** `len` random characters from a printable alphabet (JSON-safe). */
template <typename Rng>
[[nodiscard]] inline std::string printable_bytes(int len, Rng& rng) {
  static constexpr char kAlphabet[] =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  std::uniform_int_distribution<std::size_t> pick(0, sizeof(kAlphabet) - 2);
  std::string out;
  out.reserve(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) {
    out.push_back(kAlphabet[pick(rng)]);
  }
  return out;
}

/**
 * Populates the store with record_count documents (user0 … userN-1), each
 * carrying field0 … fieldK-1 of random printable bytes. Returns the number
 * of documents loaded. Deterministic for a given seed.
 */
inline std::size_t load_phase(const WorkloadSpec& spec, InMemoryStore& store,
                              std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  for (std::uint64_t i = 0; i < spec.record_count; ++i) {
    Document doc;
    doc.id = ycsb_key(i);
    doc.version = 1;
    for (int f = 0; f < spec.field_count; ++f) {
      doc.fields["field" + std::to_string(f)] =
          printable_bytes(spec.field_length, rng);
    }
    store.put_raw(std::move(doc));
  }
  return spec.record_count;
}

/**
 * Streams transactions for one client. Deterministic: the same spec and
 * seed always produce the same operation sequence. Each client gets its
 * own generator seeded with (base seed + worker index).
 */
class WorkloadGenerator {
 public:
  WorkloadGenerator(WorkloadSpec spec, std::uint64_t seed)
      : spec_(std::move(spec)), rng_(seed) {
    spec_.validate();
    if (spec_.distribution == KeyDistribution::kZipfian) {
      zipf_.emplace(spec_.record_count, spec_.zipf_theta);
    }
    hot_records_ = std::max<std::uint64_t>(
        1, static_cast<std::uint64_t>(
               std::llround(spec_.hot_key_fraction *
                            static_cast<double>(spec_.record_count))));
    hot_records_ = std::min<std::uint64_t>(hot_records_, spec_.record_count);
  }

  [[nodiscard]] const WorkloadSpec& spec() const { return spec_; }

  [[nodiscard]] Operation next_operation() {
    const DocumentId key = ycsb_key(next_key_index());
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double u = uniform(rng_);
    if (u < spec_.read_fraction) {
      return Operation::read(key);
    }
    if (u < spec_.read_fraction + spec_.update_fraction) {
      return Operation::update(key, {{random_field(), random_value()}});
    }
    return Operation::read_modify_write(
        key, ModifySpec::set_fields({{random_field(), random_value()}}));
  }

  [[nodiscard]] std::vector<Operation> next_transaction() {
    std::vector<Operation> ops;
    ops.reserve(static_cast<std::size_t>(spec_.ops_per_transaction));
    for (int i = 0; i < spec_.ops_per_transaction; ++i) {
      ops.push_back(next_operation());
    }
    return ops;
  }

 private:
  [[nodiscard]] std::uint64_t next_key_index() {
    switch (spec_.distribution) {
      case KeyDistribution::kZipfian:
        return zipf_->next(rng_);
      case KeyDistribution::kUniform: {
        std::uniform_int_distribution<std::uint64_t> pick(
            0, spec_.record_count - 1);
        return pick(rng_);
      }
      case KeyDistribution::kHotspot: {
        std::uniform_real_distribution<double> uniform(0.0, 1.0);
        if (uniform(rng_) < spec_.hot_op_fraction) {
          std::uniform_int_distribution<std::uint64_t> pick(0,
                                                            hot_records_ - 1);
          return pick(rng_);
        }
        if (hot_records_ >= spec_.record_count) {
          return spec_.record_count - 1;
        }
        std::uniform_int_distribution<std::uint64_t> pick(
            hot_records_, spec_.record_count - 1);
        return pick(rng_);
      }
    }
    throw std::logic_error("unreachable distribution");
  }

  [[nodiscard]] std::string random_field() {
    std::uniform_int_distribution<int> pick(0, spec_.field_count - 1);
    return "field" + std::to_string(pick(rng_));
  }

  [[nodiscard]] std::string random_value() {
    return printable_bytes(spec_.field_length, rng_);
  }

  WorkloadSpec spec_;
  std::mt19937_64 rng_;
  std::optional<ZipfianGenerator> zipf_;
  std::uint64_t hot_records_ = 1;
};

}  // namespace dtx
