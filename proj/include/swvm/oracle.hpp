#pragma once

// Sequential specification of the version maintenance object.
//
// A version is live when it is current or held by some process (acquired and
// not yet released). A release returns true exactly when the released
// version goes from live to not live. The class checks the calling protocol
// and throws ProtocolViolation when a history breaks it; concurrent
// implementations leave the protocol to their callers.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <unordered_map>
#include <variant>
#include <vector>

#include "swvm/errors.hpp"
#include "swvm/version.hpp"

namespace swvm {

template <class Data>
class SequentialVersionMaintenance {
 public:
  using data_type = Data;

  SequentialVersionMaintenance(std::size_t processes, Data initial)
      : holds_(processes), current_{0, 0} {
    if (processes == 0) throw CapacityError("process count must be at least 1");
    data_.emplace(current_, initial);
  }

  std::size_t processes() const noexcept { return holds_.size(); }

  Data acquire(std::size_t k) {
    check_process(k);
    if (holds_[k]) violation("acquire", k, "previous acquire was not released");
    holds_[k] = current_;
    return data_.at(current_);
  }

  bool release(std::size_t k) {
    check_process(k);
    if (!holds_[k]) violation("release", k, "no matching acquire");
    if (writer_ == k) writer_.reset();
    const VersionId v = *holds_[k];
    holds_[k].reset();
    if (is_live(v)) return false;
    data_.erase(v);
    return true;
  }

  /// set by process k: k must hold the current version and no other trio may
  /// have published without releasing.
  void set(std::size_t k, Data d) {
    check_process(k);
    if (!holds_[k]) violation("set", k, "set outside acquire/release");
    if (*holds_[k] != current_) violation("set", k, "setter does not hold the current version");
    if (writer_ && *writer_ != k) violation("set", k, "another write is in flight");
    publish(d);
    writer_ = k;
  }

  /// Installs a new current version without protocol checks.
  void publish(Data d) {
    const VersionId next{current_.timestamp + 1, free_index()};
    const VersionId old = current_;
    current_ = next;
    data_.emplace(next, d);
    if (!is_live(old)) data_.erase(old);
  }

  bool is_live(VersionId v) const {
    if (v.is_empty()) return false;
    if (v == current_) return true;
    return std::any_of(holds_.begin(), holds_.end(),
                       [&](const std::optional<VersionId>& h) { return h && *h == v; });
  }

  std::vector<VersionId> live_versions() const {
    std::vector<VersionId> out;
    for (const auto& [v, d] : data_) out.push_back(v);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t live_count() const noexcept { return data_.size(); }
  VersionId current() const noexcept { return current_; }
  Data current_data() const { return data_.at(current_); }
  std::optional<VersionId> held_by(std::size_t k) const { return holds_.at(k); }
  std::optional<std::size_t> writer() const noexcept { return writer_; }
  Data data_of(VersionId v) const { return data_.at(v); }
  bool quiescent() const {
    return std::none_of(holds_.begin(), holds_.end(), [](const auto& h) { return h.has_value(); });
  }

  friend bool operator==(const SequentialVersionMaintenance& a, const SequentialVersionMaintenance& b) {
    return a.holds_ == b.holds_ && a.current_ == b.current_ && a.writer_ == b.writer_ &&
           a.data_ == b.data_;
  }

 private:
  void check_process(std::size_t k) const {
    if (k >= holds_.size()) throw ProtocolViolation("process id out of range");
  }

  [[noreturn]] static void violation(const char* op, std::size_t k, const char* why) {
    std::ostringstream os;
    os << op << '(' << k << "): " << why;
    throw ProtocolViolation(os.str());
  }

  // Lowest slot index not used by a version that will still be live.
  std::uint32_t free_index() const {
    for (std::uint32_t i = 0;; ++i) {
      bool used = false;
      for (const auto& [v, d] : data_) {
        if (v.index == i && (v != current_ || is_held(v))) used = true;
      }
      if (!used) return i;
    }
  }

  bool is_held(VersionId v) const {
    return std::any_of(holds_.begin(), holds_.end(),
                       [&](const std::optional<VersionId>& h) { return h && *h == v; });
  }

  struct VersionHash {
    std::size_t operator()(const VersionId& v) const noexcept { return std::hash<VersionId>{}(v); }
  };

  std::vector<std::optional<VersionId>> holds_;
  VersionId current_;
  std::optional<std::size_t> writer_;
  std::unordered_map<VersionId, Data, VersionHash> data_;
};

/// One operation applied to the sequential object.
struct OracleAcquire {
  std::size_t process;
};
struct OracleRelease {
  std::size_t process;
};
template <class Data>
struct OracleSet {
  std::size_t process;
  Data data;
};

template <class Data>
using OracleOp = std::variant<OracleAcquire, OracleRelease, OracleSet<Data>>;

/// Result of one oracle step: acquired data, release verdict, or nothing (set).
template <class Data>
using OracleResult = std::variant<std::monostate, Data, bool>;

template <class Data>
OracleResult<Data> oracle_apply(SequentialVersionMaintenance<Data>& state, const OracleOp<Data>& op) {
  return std::visit(
      [&](const auto& o) -> OracleResult<Data> {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, OracleAcquire>) {
          return OracleResult<Data>{std::in_place_index<1>, state.acquire(o.process)};
        } else if constexpr (std::is_same_v<T, OracleRelease>) {
          return OracleResult<Data>{std::in_place_index<2>, state.release(o.process)};
        } else {
          state.set(o.process, o.data);
          return OracleResult<Data>{};
        }
      },
      op);
}

}  // namespace swvm
