#pragma once

// Range-sum benchmark: one writer committing batches of insertions, P-1
// readers answering batches of range sums, all through transactions.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "swvm/harness/report.hpp"
#include "swvm/instrumentation.hpp"
#include "swvm/locked_vm.hpp"
#include "swvm/lockfree_vm.hpp"
#include "swvm/ptree.hpp"
#include "swvm/tuple_store.hpp"
#include "swvm/txn.hpp"
#include "swvm/verify/audit.hpp"
#include "swvm/verify/online_serializability.hpp"
#include "swvm/waitfree_vm.hpp"

namespace swvm {

struct BenchResult {
  MetricsReport metrics;
  std::uint64_t commits = 0;
  std::uint64_t reads = 0;
  double elapsed_seconds = 0;
  SerializabilityReport serializability;
  std::optional<AuditReport> audit;  // skipped when collection is off
  std::uint64_t stale_faults = 0;
  std::vector<std::size_t> live_series;
  std::vector<std::string> breaches;

  bool clean() const { return breaches.empty(); }
};

namespace detail {

template <class Vm>
concept CountedVm = requires(const Vm& vm) { vm.counters(); };

inline std::uint64_t seed_for(std::uint64_t seed, std::size_t k) {
  SplitMix64 g(seed ^ (0x632be59bd9b4e019ULL * (k + 1)));
  return g.next();
}

template <class Vm, class... VmArgs>
BenchResult run_bench_with(const BenchConfig& cfg, VmArgs&&... vm_args) {
  using Key = AugmentedTreap::Key;
  using Value = AugmentedTreap::Value;
  const std::size_t P = cfg.threads;
  const Key key_space = static_cast<Key>(cfg.keys) * 4;

  TupleStore store;
  AugmentedTreap tree(store);

  // Initial tree and the writer's shadow copy.
  std::unordered_map<Key, Value> shadow;
  std::uint64_t shadow_sum = 0;
  std::mt19937_64 init_rng(seed_for(cfg.seed, P));
  std::vector<std::pair<Key, Value>> pairs;
  pairs.reserve(cfg.keys);
  while (shadow.size() < cfg.keys) {
    const Key k = static_cast<Key>(init_rng() % static_cast<std::uint64_t>(key_space));
    const Value v = static_cast<Value>(1 + init_rng() % 1000);
    if (shadow.emplace(k, v).second) {
      pairs.emplace_back(k, v);
      shadow_sum += static_cast<std::uint64_t>(v);
    }
  }
  TreeRoot initial;
  {
    CreationLog log = store.open_log();
    initial = tree.build(std::move(pairs), log);
    store.output(initial, log);
  }
  const Digest initial_digest = shadow_sum;

  LiveSamples live;
  live.keep_series = !cfg.samples_csv.empty();
  std::vector<Padded<FreedHistogram>> freed(P);
  TxnOptions options;
  options.collect = cfg.collect;
  TxnRuntime<Vm>* rt_ptr = nullptr;
  options.on_publish = [&](VersionId) { live.add(rt_ptr->vm().occupied_versions()); };
  options.on_collect = [&](std::size_t k, std::size_t n) { freed[k].value.add(n); };

  TxnRuntime<Vm> rt(store, P, initial, std::move(options), std::forward<VmArgs>(vm_args)...);
  rt_ptr = &rt;
  OnlineSerializabilityChecker checker(P, initial_digest);
  rt.attach(&checker);

  std::atomic<bool> go{false}, stop{false};
  std::uint64_t commits = 0, updates = 0;
  std::vector<Padded<std::uint64_t>> reads(P), queries(P), faults(P), sink(P);

  std::vector<std::thread> threads;
  threads.emplace_back([&] {
    std::mt19937_64 rng(seed_for(cfg.seed, 0));
    std::vector<std::pair<Key, Value>> batch(cfg.n_u);
    while (!go.load(std::memory_order_acquire)) std::this_thread::yield();
    while (!stop.load(std::memory_order_relaxed)) {
      for (auto& [k, v] : batch) {
        k = static_cast<Key>(rng() % static_cast<std::uint64_t>(key_space));
        v = static_cast<Value>(1 + rng() % 1000);
      }
      for (const auto& [k, v] : batch) {
        auto [it, fresh] = shadow.try_emplace(k, v);
        if (!fresh) {
          shadow_sum -= static_cast<std::uint64_t>(it->second);
          it->second = v;
        }
        shadow_sum += static_cast<std::uint64_t>(v);
      }
      checker.stage_commit_digest(shadow_sum);
      rt.write_txn(0, [&](TreeRoot t, CreationLog& log) {
        for (const auto& [k, v] : batch) t = tree.insert(t, k, v, log);
        return t;
      });
      ++commits;
      updates += cfg.n_u;
    }
  });
  for (std::size_t k = 1; k < P; ++k) {
    threads.emplace_back([&, k] {
      std::mt19937_64 rng(seed_for(cfg.seed, k));
      const std::uint64_t width = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(key_space) / 16);
      std::uint64_t acc = 0;
      while (!go.load(std::memory_order_acquire)) std::this_thread::yield();
      while (!stop.load(std::memory_order_relaxed)) {
        try {
          const Digest d = rt.read_txn(k, [&](TreeRoot t) {
            for (std::size_t q = 0; q < cfg.n_q; ++q) {
              const Key lo = static_cast<Key>(rng() % static_cast<std::uint64_t>(key_space));
              const Key hi = lo + static_cast<Key>(rng() % width);
              acc += static_cast<std::uint64_t>(tree.range_sum(t, lo, hi));
            }
            return static_cast<Digest>(tree.total(t));
          });
          checker.answer(k, d);
          ++reads[k].value;
          queries[k].value += cfg.n_q;
        } catch (const StaleHandle&) {
          checker.abandon(k);
          ++faults[k].value;
        }
      }
      sink[k].value = acc;
    });
  }

  const auto t0 = std::chrono::steady_clock::now();
  go.store(true, std::memory_order_release);
  std::this_thread::sleep_for(std::chrono::duration<double>(cfg.seconds));
  stop.store(true);
  for (auto& t : threads) t.join();
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  BenchResult r;
  r.elapsed_seconds = elapsed;
  r.commits = commits;
  MetricsReport& m = r.metrics;
  m.max_live_versions = live.max;
  m.avg_live_versions = live.mean();
  m.update_throughput = static_cast<double>(updates) / elapsed;
  std::uint64_t total_queries = 0;
  for (std::size_t k = 1; k < P; ++k) {
    total_queries += queries[k].value;
    r.reads += reads[k].value;
    r.stale_faults += faults[k].value;
  }
  m.query_throughput = static_cast<double>(total_queries) / elapsed;
  if constexpr (CountedVm<Vm>) {
    const VmCounters c = rt.vm().counters();
    m.acquire_shared_access_max = c.acquire.accesses_max;
    m.failed_cas = {c.acquire.cas_failed, c.release.cas_failed, c.set.cas_failed};
  }
  for (auto& h : freed) m.collect_freed.merge(h.value);
  m.allocated_tuples = store.stats().allocated;
  r.live_series = std::move(live.series);

  auto breach = [&](const std::string& s) { r.breaches.push_back(s); };
  r.serializability = checker.report();
  if (!r.serializability.passed) breach("strict serializability: " + r.serializability.detail);
  if (static_cast<std::uint64_t>(tree.total(rt.current_root())) != shadow_sum)
    breach("final tree sum differs from the writer's shadow sum");
  if (live.max > P + 1) breach("live versions " + std::to_string(live.max) + " exceed P+1");
  if (r.stale_faults) breach(std::to_string(r.stale_faults) + " reads touched a freed tuple");
  if (cfg.collect) {
    r.audit = reclamation_audit(store, rt.vm(), rt.current_root());
    if (!r.audit->passed) breach("reclamation audit: " + r.audit->detail);
  }
  return r;
}

}  // namespace detail

inline BenchResult run_bench(const BenchConfig& cfg) {
  switch (cfg.algo) {
    case Algo::waitfree:
      return detail::run_bench_with<WaitFreeVm<TreeRoot, Instrumentation>>(cfg);
    case Algo::lockfree:
      return detail::run_bench_with<LockFreeVm<TreeRoot, Instrumentation>>(cfg, detail::seed_for(cfg.seed, 1000));
    default:
      return detail::run_bench_with<LockedVm<TreeRoot>>(cfg);
  }
}

}  // namespace swvm
