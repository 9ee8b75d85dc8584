#pragma once

// Lock-free version maintenance with a counted status table of 2P slots.
//
// acquire increments the count of the current version's slot with a CAS and
// retries if the writer moved V in between, so it is lock-free but not
// wait-free. release decrements the count; the release that drops a
// superseded version to zero competes to empty the slot, and only the
// winner returns true. set probes from a random start for an empty slot.

#include <atomic>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <type_traits>
#include <vector>

#include "swvm/errors.hpp"
#include "swvm/instrumentation.hpp"
#include "swvm/version.hpp"

namespace swvm {

namespace detail {

// <count:16 | timestamp:40 | index:8>
struct CountedStatusWord {
  static constexpr unsigned kTsBits = 40;
  static constexpr std::uint64_t kVersionMask = (std::uint64_t{1} << 48) - 1;
  static constexpr std::uint64_t kEmpty = kVersionMask;  // <empty, 0>

  static constexpr std::uint64_t pack_version(VersionId v) noexcept {
    if (v.is_empty()) return kEmpty;
    return (v.timestamp << 8) | (v.index & 0xffU);
  }
  static constexpr std::uint64_t encode(VersionId v, std::uint64_t count) noexcept {
    return (count << 48) | pack_version(v);
  }
  static constexpr VersionId version(std::uint64_t w) noexcept {
    const std::uint64_t bits = w & kVersionMask;
    if (bits == kEmpty) return VersionId::empty();
    return VersionId{bits >> 8, static_cast<std::uint32_t>(bits & 0xffU)};
  }
  static constexpr std::uint64_t count(std::uint64_t w) noexcept { return w >> 48; }
};

/// splitmix64: a small splittable generator for the writer's probe start.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  SplitMix64 split() noexcept { return SplitMix64(next()); }

 private:
  std::uint64_t state_;
};

}  // namespace detail

template <class Data, class Instr = NoInstrumentation>
class LockFreeVm {
  static_assert(std::is_trivially_copyable_v<Data>);
  using Status = detail::CountedStatusWord;

 public:
  using data_type = Data;
  using instrumentation_type = Instr;
  static constexpr std::size_t max_processes = 128;  // 2P slots addressed by 8 bits

  LockFreeVm(std::size_t processes, Data initial, std::uint64_t seed = 0x5eed)
      : processes_(check_capacity(processes)),
        slots_(2 * processes),
        status_(std::make_unique<detail::Padded<std::atomic<std::uint64_t>>[]>(slots_)),
        data_(std::make_unique<detail::Padded<std::atomic<Data>>[]>(slots_)),
        held_(processes),
        rng_(seed),
        instr_(processes, slots_) {
    const VersionId first{0, 0};
    for (std::size_t i = 0; i < slots_; ++i) status_[i].value.store(Status::kEmpty);
    for (auto& h : held_) h.value = VersionId::empty();
    status_[0].value.store(Status::encode(first, 0));
    data_[0].value.store(initial);
    current_.store(Status::pack_version(first));
  }

  LockFreeVm(const LockFreeVm&) = delete;
  LockFreeVm& operator=(const LockFreeVm&) = delete;

  Data acquire(std::size_t k) {
    detail::OpProbe<Instr> probe(instr_, OpClass::acquire, k);
    VersionId v;
    for (;;) {
      v = read_current(probe);
      probe.step(StepPoint::acquire_read_current);
      std::atomic<std::uint64_t>& status = status_[v.index].value;
      const std::uint64_t s = status.load();
      probe.access();
      std::uint64_t expected = Status::encode(v, Status::count(s));
      const bool ok = status.compare_exchange_strong(expected, Status::encode(v, Status::count(s) + 1));
      probe.cas(ok);
      if (ok) break;
    }
    held_[k].value = v;
    probe.step(StepPoint::acquire_committed);
    probe.access();
    return data_[v.index].value.load();
  }

  bool release(std::size_t k) {
    detail::OpProbe<Instr> probe(instr_, OpClass::release, k);
    const VersionId v = held_[k].value;
    assert(!v.is_empty() && "release without a completed acquire");
    held_[k].value = VersionId::empty();
    std::atomic<std::uint64_t>& status = status_[v.index].value;

    bool last = false;
    for (;;) {
      std::uint64_t s = status.load();
      probe.access();
      assert(Status::version(s) == v && Status::count(s) > 0);
      last = Status::count(s) == 1;
      const bool ok = status.compare_exchange_strong(s, Status::encode(v, Status::count(s) - 1));
      probe.cas(ok);
      if (ok) break;
    }
    probe.step(StepPoint::release_cleared);
    if (v == read_current(probe) || !last) return false;

    std::uint64_t s = status.load();
    probe.access();
    probe.step(StepPoint::release_final);
    if (s != Status::encode(v, 0)) return false;
    const bool emptied = status.compare_exchange_strong(s, Status::kEmpty);
    probe.cas(emptied);
    return emptied;
  }

  /// Single writer only; the caller must hold the current version.
  void set(Data d) {
    detail::OpProbe<Instr> probe(instr_, OpClass::set, 0);
    const std::size_t free = find_free(probe);
    const VersionId cur = read_current(probe);
    assert(cur.timestamp + 1 < (std::uint64_t{1} << Status::kTsBits) && "timestamp overflow");
    const VersionId next{cur.timestamp + 1, static_cast<std::uint32_t>(free)};
    status_[free].value.store(Status::encode(next, 0));
    probe.access();
    probe.step(StepPoint::set_slot_claimed);
    data_[free].value.store(d);
    probe.access();
    current_.store(Status::pack_version(next));
    probe.access();
    probe.step(StepPoint::set_published);
  }

  std::size_t processes() const noexcept { return processes_; }
  std::size_t slot_count() const noexcept { return slots_; }

  VersionId current_version() const { return Status::version(current_.load()); }
  Data current_data() const { return data_[current_version().index].value.load(); }

  /// The version process k holds; meaningful to process k between acquire and release.
  VersionId acquired_version(std::size_t k) const { return held_[k].value; }

  std::size_t occupied_versions() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < slots_; ++i) n += status_[i].value.load() != Status::kEmpty;
    return n;
  }

  /// Count currently recorded in the status slot of v (0 when v is not resident).
  std::uint64_t count_of(VersionId v) const {
    const std::uint64_t s = status_[v.index].value.load();
    return Status::version(s) == v ? Status::count(s) : 0;
  }

  bool quiescent() const {
    for (std::size_t i = 0; i < slots_; ++i) {
      if (Status::count(status_[i].value.load()) != 0) return false;
    }
    return true;
  }

  VmCounters counters() const
    requires Instr::enabled
  {
    return instr_.snapshot();
  }
  Instr& instrumentation() noexcept { return instr_; }

 private:
  static std::size_t check_capacity(std::size_t p) {
    if (p == 0) throw CapacityError("process count must be at least 1");
    if (p > max_processes) throw CapacityError("2P status slots exceed the 8-bit slot index");
    return p;
  }

  VersionId read_current(detail::OpProbe<Instr>& probe) const {
    probe.access();
    return Status::version(current_.load());
  }

  std::size_t find_free(detail::OpProbe<Instr>& probe) {
    std::size_t index = static_cast<std::size_t>(rng_.next() % slots_);
    for (std::size_t probes = 1;; ++probes) {
      probe.access();
      if (status_[index].value.load() == Status::kEmpty) {
        probe.probe_length(probes);
        return index;
      }
      if (probes == slots_) fatal("lock-free set found no empty status slot");
      index = (index + 1) % slots_;
    }
  }

  std::size_t processes_;
  std::size_t slots_;
  alignas(64) std::atomic<std::uint64_t> current_{0};
  std::unique_ptr<detail::Padded<std::atomic<std::uint64_t>>[]> status_;
  std::unique_ptr<detail::Padded<std::atomic<Data>>[]> data_;
  std::vector<detail::Padded<VersionId>> held_;  // written and read by the owning process only
  detail::SplitMix64 rng_;
  Instr instr_;
};

}  // namespace swvm
