#pragma once

// Wait-free version maintenance with an announcement array.
//
// Shared state:
//   V       the current version
//   S[P+2]  status per slot: <version, h>, h in {0,1,2}
//   D[P+2]  data handle per slot
//   A[P]    announcement per process: <help, version>
//
// acquire takes O(1) steps; release and set take O(P) steps. A set helps
// every acquire whose help flag is up, so an acquire never retries more than
// twice. Among the releases of a superseded version, only the one that
// empties its status slot returns true.

#include <atomic>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <type_traits>

#include "swvm/errors.hpp"
#include "swvm/instrumentation.hpp"
#include "swvm/version.hpp"

namespace swvm {

namespace detail {

// <help:1 | timestamp:55 | index:8>
struct AnnouncementWord {
  static constexpr unsigned kTsBits = 55;
  static constexpr std::uint64_t kVersionMask = (std::uint64_t{1} << 63) - 1;
  static constexpr std::uint64_t kEmpty = kVersionMask;

  static constexpr std::uint64_t pack_version(VersionId v) noexcept {
    if (v.is_empty()) return kEmpty;
    return (v.timestamp << 8) | (v.index & 0xffU);
  }
  static constexpr VersionId unpack_version(std::uint64_t bits) noexcept {
    bits &= kVersionMask;
    if (bits == kEmpty) return VersionId::empty();
    return VersionId{bits >> 8, static_cast<std::uint32_t>(bits & 0xffU)};
  }
  static constexpr std::uint64_t encode(bool help, VersionId v) noexcept {
    return (std::uint64_t{help} << 63) | pack_version(v);
  }
  static constexpr bool help(std::uint64_t w) noexcept { return (w >> 63) != 0; }
  static constexpr VersionId version(std::uint64_t w) noexcept { return unpack_version(w); }
};

// <h:2 | timestamp:54 | index:8>
struct StatusWord {
  static constexpr unsigned kTsBits = 54;
  static constexpr std::uint64_t kVersionMask = (std::uint64_t{1} << 62) - 1;
  static constexpr std::uint64_t kEmpty = kVersionMask;  // <empty, 0>

  static constexpr std::uint64_t encode(VersionId v, unsigned h) noexcept {
    const std::uint64_t bits = v.is_empty() ? kEmpty : ((v.timestamp << 8) | (v.index & 0xffU));
    return (std::uint64_t{h} << 62) | bits;
  }
  static constexpr VersionId version(std::uint64_t w) noexcept {
    const std::uint64_t bits = w & kVersionMask;
    if (bits == kEmpty) return VersionId::empty();
    return VersionId{bits >> 8, static_cast<std::uint32_t>(bits & 0xffU)};
  }
  static constexpr unsigned h(std::uint64_t w) noexcept { return static_cast<unsigned>(w >> 62); }
  static constexpr std::uint64_t with_h(std::uint64_t w, unsigned h) noexcept {
    return (w & kVersionMask) | (std::uint64_t{h} << 62);
  }
};

}  // namespace detail

template <class Data, class Instr = NoInstrumentation>
class WaitFreeVm {
  static_assert(std::is_trivially_copyable_v<Data>);
  using Ann = detail::AnnouncementWord;
  using Status = detail::StatusWord;

 public:
  using data_type = Data;
  using instrumentation_type = Instr;
  static constexpr std::size_t max_processes = 254;  // P+2 slots addressed by 8 bits

  WaitFreeVm(std::size_t processes, Data initial)
      : processes_(check_capacity(processes)),
        slots_(processes + 2),
        status_(std::make_unique<detail::Padded<std::atomic<std::uint64_t>>[]>(slots_)),
        data_(std::make_unique<detail::Padded<std::atomic<Data>>[]>(slots_)),
        announce_(std::make_unique<detail::Padded<std::atomic<std::uint64_t>>[]>(processes)),
        instr_(processes, slots_) {
    const VersionId first{0, 0};
    for (std::size_t i = 0; i < slots_; ++i) status_[i].value.store(Status::kEmpty);
    for (std::size_t k = 0; k < processes_; ++k)
      announce_[k].value.store(Ann::encode(false, VersionId::empty()));
    status_[0].value.store(Status::encode(first, 0));
    data_[0].value.store(initial);
    current_.store(Ann::pack_version(first));
  }

  WaitFreeVm(const WaitFreeVm&) = delete;
  WaitFreeVm& operator=(const WaitFreeVm&) = delete;

  Data acquire(std::size_t k) {
    detail::OpProbe<Instr> probe(instr_, OpClass::acquire, k);
    std::atomic<std::uint64_t>& slot = announce_[k].value;
    const std::uint64_t requesting = Ann::encode(true, VersionId::empty());

    slot.store(requesting);
    probe.access();
    probe.step(StepPoint::acquire_requested_help);

    const VersionId v = read_current(probe);
    probe.step(StepPoint::acquire_read_current);
    if (!cas_announcement(k, requesting, Ann::encode(true, v), probe)) return committed_data(k, probe);
    probe.step(StepPoint::acquire_announced);

    if (v != read_current(probe)) {
      const VersionId w = read_current(probe);
      probe.step(StepPoint::acquire_reread_current);
      if (!cas_announcement(k, Ann::encode(true, v), Ann::encode(true, w), probe))
        return committed_data(k, probe);
      if (w != read_current(probe)) return committed_data(k, probe);
      cas_announcement(k, Ann::encode(true, w), Ann::encode(false, w), probe);
      return committed_data(k, probe);
    }
    cas_announcement(k, Ann::encode(true, v), Ann::encode(false, v), probe);
    return committed_data(k, probe);
  }

  bool release(std::size_t k) {
    detail::OpProbe<Instr> probe(instr_, OpClass::release, k);
    std::atomic<std::uint64_t>& slot = announce_[k].value;

    const std::uint64_t mine = slot.load();
    probe.access();
    const VersionId v = Ann::version(mine);
    assert(!Ann::help(mine) && !v.is_empty() && "release without a completed acquire");
    slot.store(Ann::encode(false, VersionId::empty()));
    probe.access();
    probe.step(StepPoint::release_cleared);

    if (v == read_current(probe)) return false;

    std::atomic<std::uint64_t>& status = status_[v.index].value;
    std::uint64_t s = status.load();
    probe.access();
    probe.step(StepPoint::release_read_status);
    if (Status::version(s) != v) return false;

    if (Status::h(s) == 0) {
      std::uint64_t expected = s;
      const bool won = status.compare_exchange_strong(expected, Status::with_h(s, 1));
      probe.cas(won);
      if (!won) return false;
      probe.step(StepPoint::release_helping);
      const std::uint64_t announced = Ann::encode(true, v);
      for (std::size_t i = 0; i < processes_; ++i) {
        std::atomic<std::uint64_t>& a = announce_[i].value;
        probe.access();
        if (a.load() == announced) {
          std::uint64_t exp = announced;
          probe.announcement_cas(i, a.compare_exchange_strong(exp, Ann::encode(false, v)));
        }
      }
      s = Status::with_h(s, 2);
      status.store(s);
      probe.access();
    }

    if (Status::h(s) == 2) {
      const std::uint64_t committed = Ann::encode(false, v);
      for (std::size_t i = 0; i < processes_; ++i) {
        probe.access();
        if (announce_[i].value.load() == committed) return false;
      }
      probe.step(StepPoint::release_final);
      std::uint64_t expected = s;
      const bool emptied = status.compare_exchange_strong(expected, Status::kEmpty);
      probe.cas(emptied);
      return emptied;
    }
    return false;
  }

  /// Single writer only; the caller must hold the current version.
  void set(Data d) {
    detail::OpProbe<Instr> probe(instr_, OpClass::set, 0);
    const VersionId cur = read_current(probe);
    assert(cur.timestamp + 1 < (std::uint64_t{1} << Status::kTsBits) && "timestamp overflow");

    std::size_t free = slots_;
    for (std::size_t i = 0; i < slots_; ++i) {
      probe.access();
      if (status_[i].value.load() == Status::kEmpty) {
        free = i;
        break;
      }
    }
    if (free == slots_) fatal("wait-free set found no empty status slot");
    probe.probe_length(free + 1);

    const VersionId next{cur.timestamp + 1, static_cast<std::uint32_t>(free)};
    data_[free].value.store(d);
    status_[free].value.store(Status::encode(next, 0));
    probe.access();
    probe.access();
    probe.step(StepPoint::set_slot_claimed);

    current_.store(Ann::pack_version(next));
    probe.access();
    probe.step(StepPoint::set_published);

    const std::uint64_t commit = Ann::encode(false, next);
    for (std::size_t i = 0; i < processes_; ++i) {
      std::atomic<std::uint64_t>& a = announce_[i].value;
      for (int attempt = 0; attempt < 3; ++attempt) {
        std::uint64_t seen = a.load();
        probe.access();
        if (!Ann::help(seen)) break;
        probe.step(StepPoint::set_helping);
        const bool ok = a.compare_exchange_strong(seen, commit);
        probe.announcement_cas(i, ok);
        if (ok) break;
      }
    }
  }

  std::size_t processes() const noexcept { return processes_; }
  std::size_t slot_count() const noexcept { return slots_; }

  VersionId current_version() const { return Ann::unpack_version(current_.load()); }
  Data current_data() const { return data_[current_version().index].value.load(); }

  /// The version committed in A[k]; meaningful to process k between acquire and release.
  VersionId acquired_version(std::size_t k) const { return Ann::version(announce_[k].value.load()); }

  /// Number of status slots holding a version (live versions plus those being released).
  std::size_t occupied_versions() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < slots_; ++i) n += status_[i].value.load() != Status::kEmpty;
    return n;
  }

  /// True when no process has an acquisition in progress or outstanding.
  bool quiescent() const {
    for (std::size_t k = 0; k < processes_; ++k) {
      if (!Ann::version(announce_[k].value.load()).is_empty()) return false;
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
    if (p > max_processes) throw CapacityError("process count exceeds the 8-bit slot index");
    return p;
  }

  VersionId read_current(detail::OpProbe<Instr>& probe) const {
    probe.access();
    return Ann::unpack_version(current_.load());
  }

  bool cas_announcement(std::size_t k, std::uint64_t expected, std::uint64_t desired,
                        detail::OpProbe<Instr>& probe) {
    const bool ok = announce_[k].value.compare_exchange_strong(expected, desired);
    probe.announcement_cas(k, ok);
    return ok;
  }

  Data committed_data(std::size_t k, detail::OpProbe<Instr>& probe) {
    const VersionId v = Ann::version(announce_[k].value.load());
    probe.access();
    probe.step(StepPoint::acquire_committed);
    assert(!v.is_empty());
    probe.access();
    return data_[v.index].value.load();
  }

  std::size_t processes_;
  std::size_t slots_;
  alignas(64) std::atomic<std::uint64_t> current_{0};
  std::unique_ptr<detail::Padded<std::atomic<std::uint64_t>>[]> status_;
  std::unique_ptr<detail::Padded<std::atomic<Data>>[]> data_;
  std::unique_ptr<detail::Padded<std::atomic<std::uint64_t>>[]> announce_;
  Instr instr_;
};

}  // namespace swvm
