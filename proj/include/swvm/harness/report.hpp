#pragma once

// Harness configuration and the JSON metrics report.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace swvm {

enum class Algo { waitfree, lockfree, locked_oracle };

inline const char* to_string(Algo a) {
  switch (a) {
    case Algo::waitfree: return "waitfree";
    case Algo::lockfree: return "lockfree";
    default: return "locked-oracle";
  }
}

inline std::optional<Algo> parse_algo(const std::string& s) {
  if (s == "waitfree") return Algo::waitfree;
  if (s == "lockfree") return Algo::lockfree;
  if (s == "locked-oracle") return Algo::locked_oracle;
  return std::nullopt;
}

struct BenchConfig {
  Algo algo = Algo::waitfree;
  std::size_t threads = 8;
  double seconds = 10.0;
  std::size_t n_u = 1;       // insertions per write transaction
  std::size_t n_q = 10000;   // range sums per read transaction
  std::size_t keys = 100000; // initial tree size
  std::uint64_t seed = 1;
  bool collect = true;
  std::string out;           // JSON report path, empty for stdout
  std::string samples_csv;   // optional live-version time series

  /// Empty when valid, otherwise the first problem found.
  std::string validate() const {
    if (threads < 2) return "bench needs at least 2 threads (1 writer, 1 reader)";
    if (n_u < 1 || n_q < 1) return "--nu and --nq must be at least 1";
    if (!(seconds > 0)) return "--seconds must be positive";
    if (keys < 1) return "--keys must be at least 1";
    return {};
  }
};

struct StressConfig {
  Algo algo = Algo::waitfree;
  std::size_t threads = 8;
  double seconds = 10.0;
  std::size_t keys = 1000;
  std::uint64_t seed = 1;
  double yield_probability = 0.05;  // chance of yielding at each instrumented step
  std::string out;

  std::string validate() const {
    if (threads < 1) return "--threads must be at least 1";
    if (!(seconds > 0)) return "--seconds must be positive";
    if (yield_probability < 0 || yield_probability > 1) return "--yield must be in [0, 1]";
    return {};
  }
};

struct LincheckConfig {
  Algo algo = Algo::waitfree;
  std::size_t threads = 3;
  std::size_t ops = 12;
  std::size_t trials = 1000;
  std::uint64_t seed = 1;
  double yield_probability = 0.5;
  std::string fail_dir = ".";  // where failing histories are written

  std::string validate() const {
    if (threads < 2 || threads > 3) return "--threads must be 2 or 3";
    if (ops < 3 || ops > 14) return "--ops must be in [3, 14]";
    if (trials < 1) return "--trials must be at least 1";
    return {};
  }
};

/// Collect sizes bucketed by powers of two: "0", "1", "2-3", "4-7", ...
class FreedHistogram {
 public:
  void add(std::size_t freed) {
    const std::size_t b = bucket(freed);
    if (counts_.size() <= b) counts_.resize(b + 1, 0);
    ++counts_[b];
  }
  void merge(const FreedHistogram& o) {
    if (counts_.size() < o.counts_.size()) counts_.resize(o.counts_.size(), 0);
    for (std::size_t i = 0; i < o.counts_.size(); ++i) counts_[i] += o.counts_[i];
  }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  static std::size_t bucket(std::size_t freed) {
    std::size_t b = 0;
    while (freed) {
      ++b;
      freed >>= 1;
    }
    return b;
  }
  static std::string label(std::size_t b) {
    if (b == 0) return "0";
    const std::uint64_t lo = std::uint64_t{1} << (b - 1), hi = (std::uint64_t{1} << b) - 1;
    return lo == hi ? std::to_string(lo) : std::to_string(lo) + "-" + std::to_string(hi);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::size_t b = 0; b < counts_.size(); ++b)
      if (counts_[b]) j[label(b)] = counts_[b];
    return j;
  }

 private:
  std::vector<std::uint64_t> counts_;
};

struct FailedCas {
  std::uint64_t acquire = 0;
  std::uint64_t release = 0;
  std::uint64_t set = 0;
};

struct MetricsReport {
  std::size_t max_live_versions = 0;
  double avg_live_versions = 0;  // sampled right after each set, on the writer
  double update_throughput = 0;  // inserted keys per second
  double query_throughput = 0;   // range sums (or reads) per second
  std::optional<std::uint64_t> acquire_shared_access_max;  // absent for the locked reference
  FailedCas failed_cas;
  std::size_t allocated_tuples = 0;  // at the end of the run
  FreedHistogram collect_freed;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["max_live_versions"] = max_live_versions;
    j["avg_live_versions"] = avg_live_versions;
    j["update_throughput"] = update_throughput;
    j["query_throughput"] = query_throughput;
    if (acquire_shared_access_max)
      j["acquire_shared_access_max"] = *acquire_shared_access_max;
    else
      j["acquire_shared_access_max"] = nullptr;
    j["failed_cas"] = {{"acquire", failed_cas.acquire}, {"release", failed_cas.release}, {"set", failed_cas.set}};
    j["allocated_tuples"] = allocated_tuples;
    j["collect_freed"] = collect_freed.to_json();
    return j;
  }
};

/// Running statistics of live-version samples.
struct LiveSamples {
  std::size_t max = 0;
  std::uint64_t sum = 0;
  std::uint64_t count = 0;
  std::vector<std::size_t> series;  // kept only when requested
  bool keep_series = false;

  void add(std::size_t live) {
    max = std::max(max, live);
    sum += live;
    ++count;
    if (keep_series) series.push_back(live);
  }
  double mean() const { return count ? static_cast<double>(sum) / static_cast<double>(count) : 0.0; }
};

}  // namespace swvm
