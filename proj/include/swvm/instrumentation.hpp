#pragma once

// Step and contention counters for the version maintenance objects.
//
// The objects take an instrumentation policy as a template argument.
// `NoInstrumentation` compiles every probe away, so an uninstrumented object
// performs exactly the shared-memory accesses of the algorithm.
// `Instrumentation` counts, per call, every access to a shared word
// (V, S[i], D[i], A[i]), tallies CAS attempts/failures, and counts every CAS
// aimed at each announcement slot. It can also invoke a step hook at labelled
// points, which tests use to force interleavings.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "swvm/version.hpp"

namespace swvm {

/// Labelled points inside the algorithms where a step hook may run.
enum class StepPoint : std::uint8_t {
  acquire_requested_help,
  acquire_read_current,
  acquire_announced,
  acquire_reread_current,
  acquire_committed,
  release_cleared,
  release_read_status,
  release_helping,
  release_final,
  set_slot_claimed,
  set_published,
  set_helping,
};

struct OpCounters {
  std::uint64_t calls = 0;
  std::uint64_t accesses_total = 0;
  std::uint64_t accesses_max = 0;
  std::uint64_t cas_attempts = 0;
  std::uint64_t cas_failed = 0;
};

/// Plain snapshot of an instrumented object's counters.
struct VmCounters {
  OpCounters acquire;
  OpCounters release;
  OpCounters set;
  std::vector<std::uint64_t> acquires_by_process;
  std::vector<std::uint64_t> announcement_cas;  // CASes aimed at A[k], by anyone
  std::vector<std::uint64_t> probe_lengths;     // set's free-slot probe histogram

  const OpCounters& of(OpClass c) const {
    switch (c) {
      case OpClass::acquire: return acquire;
      case OpClass::release: return release;
      default: return set;
    }
  }
};

struct NoInstrumentation {
  static constexpr bool enabled = false;
  explicit NoInstrumentation(std::size_t = 0, std::size_t = 0) {}
};

class Instrumentation {
 public:
  static constexpr bool enabled = true;
  using StepHook = std::function<void(StepPoint, std::size_t process)>;

  Instrumentation(std::size_t processes, std::size_t probe_buckets)
      : per_process_(std::make_unique<ProcessCounters[]>(processes)),
        processes_(processes),
        probe_lengths_(std::make_unique<std::atomic<std::uint64_t>[]>(probe_buckets + 1)),
        probe_buckets_(probe_buckets + 1) {}

  /// Install before the object is shared; not synchronized with running operations.
  void set_step_hook(StepHook hook) { hook_ = std::move(hook); }

  void step(StepPoint p, std::size_t process) {
    if (hook_) hook_(p, process);
  }

  void count_announcement_cas(std::size_t slot) {
    per_process_[slot].announcement_cas.fetch_add(1, std::memory_order_relaxed);
  }

  void count_probe(std::size_t length) {
    probe_lengths_[std::min(length, probe_buckets_ - 1)].fetch_add(1, std::memory_order_relaxed);
  }

  void record(OpClass cls, std::size_t process, std::uint64_t accesses, std::uint64_t cas_attempts,
              std::uint64_t cas_failed) {
    AtomicOpCounters& c = cls == OpClass::set ? set_ : per_process_[process].op(cls);
    c.calls.fetch_add(1, std::memory_order_relaxed);
    c.accesses_total.fetch_add(accesses, std::memory_order_relaxed);
    c.cas_attempts.fetch_add(cas_attempts, std::memory_order_relaxed);
    c.cas_failed.fetch_add(cas_failed, std::memory_order_relaxed);
    std::uint64_t seen = c.accesses_max.load(std::memory_order_relaxed);
    while (accesses > seen &&
           !c.accesses_max.compare_exchange_weak(seen, accesses, std::memory_order_relaxed)) {
    }
  }

  VmCounters snapshot() const {
    VmCounters out;
    out.acquires_by_process.resize(processes_);
    out.announcement_cas.resize(processes_);
    for (std::size_t k = 0; k < processes_; ++k) {
      const ProcessCounters& pc = per_process_[k];
      merge(out.acquire, pc.acquire);
      merge(out.release, pc.release);
      out.acquires_by_process[k] = pc.acquire.calls.load(std::memory_order_relaxed);
      out.announcement_cas[k] = pc.announcement_cas.load(std::memory_order_relaxed);
    }
    merge(out.set, set_);
    out.probe_lengths.resize(probe_buckets_);
    for (std::size_t i = 0; i < probe_buckets_; ++i)
      out.probe_lengths[i] = probe_lengths_[i].load(std::memory_order_relaxed);
    return out;
  }

 private:
  struct AtomicOpCounters {
    std::atomic<std::uint64_t> calls{0};
    std::atomic<std::uint64_t> accesses_total{0};
    std::atomic<std::uint64_t> accesses_max{0};
    std::atomic<std::uint64_t> cas_attempts{0};
    std::atomic<std::uint64_t> cas_failed{0};
  };

  struct alignas(64) ProcessCounters {
    AtomicOpCounters acquire;
    AtomicOpCounters release;
    std::atomic<std::uint64_t> announcement_cas{0};

    AtomicOpCounters& op(OpClass c) { return c == OpClass::acquire ? acquire : release; }
  };

  static void merge(OpCounters& into, const AtomicOpCounters& c) {
    into.calls += c.calls.load(std::memory_order_relaxed);
    into.accesses_total += c.accesses_total.load(std::memory_order_relaxed);
    into.accesses_max = std::max(into.accesses_max, c.accesses_max.load(std::memory_order_relaxed));
    into.cas_attempts += c.cas_attempts.load(std::memory_order_relaxed);
    into.cas_failed += c.cas_failed.load(std::memory_order_relaxed);
  }

  std::unique_ptr<ProcessCounters[]> per_process_;
  std::size_t processes_;
  AtomicOpCounters set_;
  std::unique_ptr<std::atomic<std::uint64_t>[]> probe_lengths_;
  std::size_t probe_buckets_;
  StepHook hook_;
};

namespace detail {

// Per-call tally; folds into the policy object when the call returns.
template <class Instr>
class OpProbe {
 public:
  OpProbe(Instr& instr, OpClass cls, std::size_t process)
      : instr_(instr), cls_(cls), process_(process) {}
  OpProbe(const OpProbe&) = delete;
  OpProbe& operator=(const OpProbe&) = delete;

  ~OpProbe() {
    if constexpr (Instr::enabled) instr_.record(cls_, process_, accesses_, cas_attempts_, cas_failed_);
  }

  void access() {
    if constexpr (Instr::enabled) ++accesses_;
  }
  void cas(bool ok) {
    if constexpr (Instr::enabled) {
      ++accesses_;
      ++cas_attempts_;
      if (!ok) ++cas_failed_;
    }
  }
  void announcement_cas(std::size_t slot, bool ok) {
    cas(ok);
    if constexpr (Instr::enabled) instr_.count_announcement_cas(slot);
  }
  void step(StepPoint p) {
    if constexpr (Instr::enabled) instr_.step(p, process_);
  }
  void probe_length(std::size_t n) {
    if constexpr (Instr::enabled) instr_.count_probe(n);
  }

 private:
  Instr& instr_;
  OpClass cls_;
  std::size_t process_;
  std::uint64_t accesses_ = 0;
  std::uint64_t cas_attempts_ = 0;
  std::uint64_t cas_failed_ = 0;
};

template <class T>
struct alignas(64) Padded {
  T value{};
};

}  // namespace detail
}  // namespace swvm
