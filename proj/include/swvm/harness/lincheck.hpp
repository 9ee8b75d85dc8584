#pragma once

// Linearizability sweeps: many short concurrent runs, each recorded and
// checked exhaustively.
//
// Process 0 runs acquire/set/release trios with distinct payloads; the other
// processes run acquire/release pairs. Operations are dealt out round-robin
// until the budget is spent. Step hooks (or, for the locked reference,
// explicit yields between calls) shuffle the interleaving.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "swvm/harness/bench.hpp"
#include "swvm/harness/report.hpp"
#include "swvm/harness/stress.hpp"
#include "swvm/locked_vm.hpp"
#include "swvm/lockfree_vm.hpp"
#include "swvm/verify/history.hpp"
#include "swvm/verify/linearizability.hpp"
#include "swvm/waitfree_vm.hpp"

namespace swvm {

struct LincheckSummary {
  std::size_t trials = 0;
  std::size_t passed = 0;
  std::size_t failed = 0;
  std::size_t refused = 0;
  std::size_t overlapping = 0;  // trials where some operations ran concurrently
  std::size_t max_operations = 0;
  std::uint64_t states_explored = 0;
  double seconds = 0;
  std::vector<std::string> failure_files;
  std::string first_failure;

  bool clean() const { return failed == 0 && refused == 0; }
};

/// Units of work per process: trios for process 0, pairs for the rest.
inline std::vector<std::size_t> deal_operations(std::size_t threads, std::size_t budget) {
  std::vector<std::size_t> units(threads, 0);
  for (bool progress = true; progress;) {
    progress = false;
    for (std::size_t k = 0; k < threads; ++k) {
      const std::size_t cost = k == 0 ? 3 : 2;
      if (budget >= cost) {
        budget -= cost;
        ++units[k];
        progress = true;
      }
    }
  }
  return units;
}

namespace detail {

template <class Vm, class... VmArgs>
LincheckSummary run_lincheck_with(const LincheckConfig& cfg, VmArgs... vm_args) {
  LincheckSummary s;
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::size_t> units = deal_operations(cfg.threads, cfg.ops);
  std::mt19937_64 trial_rng(seed_for(cfg.seed, 0));

  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    Vm vm(cfg.threads, 0, vm_args...);
    install_yield_hook(vm, cfg.yield_probability);
    VmHistoryRecorder rec(cfg.threads, 0);
    if constexpr (!CountedVm<Vm>) {
      const double p = cfg.yield_probability;
      rec.pause = [p] {
        if (hook_rng()() <= p * static_cast<double>(std::minstd_rand::max())) std::this_thread::yield();
      };
    }
    const std::uint64_t trial_seed = trial_rng();
    std::atomic<std::size_t> ready{0};

    auto maybe_yield = [&](std::minstd_rand& rng) {
      if constexpr (!CountedVm<Vm>) {
        if (rng() % 2) std::this_thread::yield();
      }
    };
    std::vector<std::thread> threads;
    for (std::size_t k = 0; k < cfg.threads; ++k) {
      threads.emplace_back([&, k] {
        std::minstd_rand rng(static_cast<std::uint32_t>(trial_seed + k) | 1U);
        ready.fetch_add(1);
        while (ready.load() < cfg.threads) std::this_thread::yield();
        for (std::size_t u = 0; u < units[k]; ++u) {
          rec.acquire(vm, k);
          maybe_yield(rng);
          if (k == 0) {
            rec.set(vm, k, trial * 1000 + u + 1);
            maybe_yield(rng);
          }
          rec.release(vm, k);
          maybe_yield(rng);
        }
      });
    }
    for (auto& t : threads) t.join();

    const VmHistory h = rec.history();
    ++s.trials;
    for (std::size_t i = 0, open = 0; i < h.events.size(); ++i) {
      open += h.events[i].phase == EventPhase::invoke ? 1 : -1;
      if (open > 1) {
        ++s.overlapping;
        break;
      }
    }
    try {
      LinearizabilityOptions opts;
      const LinearizabilityReport rep = check_linearizable(h, opts);
      s.max_operations = std::max(s.max_operations, rep.operations);
      s.states_explored += rep.states_explored;
      if (rep.passed) {
        ++s.passed;
        continue;
      }
      ++s.failed;
      if (s.first_failure.empty()) s.first_failure = "trial " + std::to_string(trial) + ": " + rep.detail;
      const std::filesystem::path file = std::filesystem::path(cfg.fail_dir) /
          ("lincheck-" + std::string(to_string(cfg.algo)) + "-trial" + std::to_string(trial) + ".history");
      std::ofstream out(file);
      out << "# " << rep.detail << '\n' << h.to_text();
      s.failure_files.push_back(file.string());
    } catch (const CheckerRefusal& e) {
      ++s.refused;
      if (s.first_failure.empty()) s.first_failure = "trial " + std::to_string(trial) + " refused: " + e.what();
    }
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s;
}

}  // namespace detail

inline LincheckSummary run_lincheck(const LincheckConfig& cfg) {
  switch (cfg.algo) {
    case Algo::waitfree:
      return detail::run_lincheck_with<WaitFreeVm<std::uint64_t, Instrumentation>>(cfg);
    case Algo::lockfree:
      return detail::run_lincheck_with<LockFreeVm<std::uint64_t, Instrumentation>>(cfg, detail::seed_for(cfg.seed, 1000));
    default:
      return detail::run_lincheck_with<LockedVm<std::uint64_t>>(cfg);
  }
}

}  // namespace swvm
