#pragma once

// Invariant stress on the bare version maintenance object and tuple store.
//
// Every process loops: with probability 1/P it tries to become the writer
// and runs acquire / path-copy update / set / release; otherwise it runs
// acquire / lookups / release. A true release collects the version. Step
// hooks yield at random to widen the interleavings.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "swvm/harness/bench.hpp"
#include "swvm/harness/report.hpp"
#include "swvm/instrumentation.hpp"
#include "swvm/locked_vm.hpp"
#include "swvm/lockfree_vm.hpp"
#include "swvm/ptree.hpp"
#include "swvm/tuple_store.hpp"
#include "swvm/verify/audit.hpp"
#include "swvm/waitfree_vm.hpp"

namespace swvm {

struct StressResult {
  MetricsReport metrics;
  std::optional<VmCounters> counters;  // absent for the locked reference
  std::uint64_t versions = 0;          // versions published, excluding the initial one
  std::uint64_t reads = 0;
  std::uint64_t writes = 0;
  std::uint64_t true_releases = 0;
  std::uint64_t stale_faults = 0;
  std::vector<std::uint64_t> release_violations;  // timestamps whose true-release count is not as expected
  std::optional<AuditReport> audit;
  std::vector<std::string> breaches;

  bool clean() const { return breaches.empty(); }
};

namespace detail {

// Per-thread generator for yield decisions inside step hooks.
inline std::minstd_rand& hook_rng() {
  static std::atomic<std::uint32_t> next{1};
  thread_local std::minstd_rand rng(next.fetch_add(0x9e3779b9U, std::memory_order_relaxed) | 1U);
  return rng;
}

template <class Vm>
void install_yield_hook(Vm& vm, double probability) {
  if constexpr (CountedVm<Vm>) {
    if (probability <= 0) return;
    const auto threshold = static_cast<std::uint32_t>(probability * static_cast<double>(std::minstd_rand::max()));
    vm.instrumentation().set_step_hook([threshold](StepPoint, std::size_t) {
      if (hook_rng()() <= threshold) std::this_thread::yield();
    });
  }
}

template <class Vm, class... VmArgs>
StressResult run_stress_with(const StressConfig& cfg, VmArgs&&... vm_args) {
  using Key = AugmentedTreap::Key;
  const std::size_t P = cfg.threads;
  const Key key_space = static_cast<Key>(std::max<std::size_t>(cfg.keys, 1) * 2);

  TupleStore store;
  AugmentedTreap tree(store);
  TreeRoot initial;
  {
    std::mt19937_64 rng(seed_for(cfg.seed, P));
    std::vector<std::pair<Key, AugmentedTreap::Value>> pairs;
    for (std::size_t i = 0; i < cfg.keys; ++i)
      pairs.emplace_back(static_cast<Key>(rng() % static_cast<std::uint64_t>(key_space)), 1 + rng() % 100);
    CreationLog log = store.open_log();
    initial = tree.build(std::move(pairs), log);
    if (!initial.is_null()) store.output(initial, log);
  }

  Vm vm(P, initial, std::forward<VmArgs>(vm_args)...);
  install_yield_hook(vm, cfg.yield_probability);

  struct Local {
    std::vector<std::uint64_t> true_released;  // timestamps
    std::uint64_t reads = 0, writes = 0, faults = 0, sink = 0;
    FreedHistogram freed;
    LiveSamples live;
  };
  std::vector<Padded<Local>> locals(P);
  std::mutex writer;
  std::atomic<bool> go{false}, stop{false};

  std::vector<std::thread> threads;
  for (std::size_t k = 0; k < P; ++k) {
    threads.emplace_back([&, k] {
      Local& me = locals[k].value;
      std::mt19937_64 rng(seed_for(cfg.seed, k));
      auto finish = [&](TreeRoot root) {
        const VersionId held = vm.acquired_version(k);
        if (vm.release(k)) {
          me.true_released.push_back(held.timestamp);
          me.freed.add(store.collect(root));
        }
      };
      while (!go.load(std::memory_order_acquire)) std::this_thread::yield();
      while (!stop.load(std::memory_order_relaxed)) {
        if (rng() % P == 0 && writer.try_lock()) {
          const TreeRoot old = vm.acquire(k);
          TreeRoot fresh;
          {
            CreationLog log = store.open_log();
            const Key key = static_cast<Key>(rng() % static_cast<std::uint64_t>(key_space));
            fresh = rng() % 4 == 0 ? tree.erase(old, key, log) : tree.insert(old, key, 1 + rng() % 100, log);
            if (fresh.is_null()) {
              store.discard(log);
            } else if (fresh == old) {
              store.retain(old);
              store.discard(log);
            } else {
              store.output(fresh, log);
            }
          }
          vm.set(fresh);
          me.live.add(vm.occupied_versions());
          ++me.writes;
          finish(old);
          writer.unlock();
          continue;
        }
        const TreeRoot root = vm.acquire(k);
        try {
          for (int i = 0; i < 4; ++i) {
            const Key key = static_cast<Key>(rng() % static_cast<std::uint64_t>(key_space));
            me.sink += static_cast<std::uint64_t>(tree.lookup(root, key).value_or(0));
          }
          me.sink += static_cast<std::uint64_t>(tree.range_sum(root, 0, key_space / 2));
        } catch (const StaleHandle&) {
          ++me.faults;
        }
        ++me.reads;
        finish(root);
      }
    });
  }

  const auto t0 = std::chrono::steady_clock::now();
  go.store(true, std::memory_order_release);
  std::this_thread::sleep_for(std::chrono::duration<double>(cfg.seconds));
  stop.store(true);
  for (auto& t : threads) t.join();
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  StressResult r;
  LiveSamples live;
  const std::uint64_t final_ts = vm.current_version().timestamp;
  std::vector<std::uint32_t> count(final_ts + 1, 0);
  bool out_of_range = false;
  for (auto& l : locals) {
    const Local& me = l.value;
    r.reads += me.reads;
    r.writes += me.writes;
    r.stale_faults += me.faults;
    r.true_releases += me.true_released.size();
    r.metrics.collect_freed.merge(me.freed);
    live.max = std::max(live.max, me.live.max);
    live.sum += me.live.sum;
    live.count += me.live.count;
    for (const std::uint64_t ts : me.true_released) {
      if (ts > final_ts) out_of_range = true;
      else ++count[ts];
    }
  }
  r.versions = final_ts;
  for (std::uint64_t ts = 0; ts <= final_ts; ++ts) {
    const std::uint32_t want = ts == final_ts ? 0 : 1;
    if (count[ts] != want) r.release_violations.push_back(ts);
  }

  MetricsReport& m = r.metrics;
  m.max_live_versions = live.max;
  m.avg_live_versions = live.mean();
  m.update_throughput = static_cast<double>(r.writes) / elapsed;
  m.query_throughput = static_cast<double>(r.reads) / elapsed;
  if constexpr (CountedVm<Vm>) {
    r.counters = vm.counters();
    m.acquire_shared_access_max = r.counters->acquire.accesses_max;
    m.failed_cas = {r.counters->acquire.cas_failed, r.counters->release.cas_failed, r.counters->set.cas_failed};
  }
  m.allocated_tuples = store.stats().allocated;

  auto breach = [&](const std::string& s) { r.breaches.push_back(s); };
  if (out_of_range) breach("a true release named a version newer than the final one");
  if (!r.release_violations.empty()) {
    std::ostringstream os;
    os << r.release_violations.size() << " versions without exactly one true release, first timestamp "
       << r.release_violations.front() << " (count " << count[r.release_violations.front()] << ")";
    breach(os.str());
  }
  if (live.max > P + 1) breach("live versions " + std::to_string(live.max) + " exceed P+1");
  if (r.stale_faults) breach(std::to_string(r.stale_faults) + " reads touched a freed tuple");
  r.audit = reclamation_audit(store, vm, vm.current_data());
  if (!r.audit->passed) breach("reclamation audit: " + r.audit->detail);
  if constexpr (std::is_same_v<Vm, WaitFreeVm<TreeRoot, Instrumentation>>) {
    const VmCounters& c = *r.counters;
    for (std::size_t k = 0; k < P; ++k) {
      if (c.announcement_cas[k] > 8 * c.acquires_by_process[k]) {
        breach("announcement slot " + std::to_string(k) + " saw " + std::to_string(c.announcement_cas[k]) +
               " CASes for " + std::to_string(c.acquires_by_process[k]) + " acquires");
      }
    }
    if (c.acquire.accesses_max > 12) breach("acquire took " + std::to_string(c.acquire.accesses_max) + " shared accesses");
    const std::uint64_t linear = 4 * P + 16;
    if (c.release.accesses_max > linear) breach("release took " + std::to_string(c.release.accesses_max) + " shared accesses");
    if (c.set.accesses_max > linear) breach("set took " + std::to_string(c.set.accesses_max) + " shared accesses");
  }
  return r;
}

}  // namespace detail

inline StressResult run_stress(const StressConfig& cfg) {
  switch (cfg.algo) {
    case Algo::waitfree:
      return detail::run_stress_with<WaitFreeVm<TreeRoot, Instrumentation>>(cfg);
    case Algo::lockfree:
      return detail::run_stress_with<LockFreeVm<TreeRoot, Instrumentation>>(cfg, detail::seed_for(cfg.seed, 1000));
    default:
      return detail::run_stress_with<LockedVm<TreeRoot>>(cfg);
  }
}

}  // namespace swvm
