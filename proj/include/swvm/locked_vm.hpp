#pragma once

// Reference backend: the sequential specification behind one mutex.
// Linearizable by construction; used to validate the test harnesses.

#include <cstddef>
#include <mutex>

#include "swvm/oracle.hpp"
#include "swvm/version.hpp"

namespace swvm {

template <class Data>
class LockedVm {
 public:
  using data_type = Data;
  static constexpr std::size_t max_processes = 1024;

  LockedVm(std::size_t processes, Data initial) : state_(processes, initial) {
    if (processes > max_processes) throw CapacityError("process count too large");
  }

  Data acquire(std::size_t k) {
    std::lock_guard lock(mu_);
    return state_.acquire(k);
  }

  bool release(std::size_t k) {
    std::lock_guard lock(mu_);
    return state_.release(k);
  }

  void set(Data d) {
    std::lock_guard lock(mu_);
    state_.publish(d);
  }

  std::size_t processes() const noexcept { return state_.processes(); }

  VersionId current_version() const {
    std::lock_guard lock(mu_);
    return state_.current();
  }
  Data current_data() const {
    std::lock_guard lock(mu_);
    return state_.current_data();
  }
  VersionId acquired_version(std::size_t k) const {
    std::lock_guard lock(mu_);
    return state_.held_by(k).value_or(VersionId::empty());
  }
  std::size_t occupied_versions() const {
    std::lock_guard lock(mu_);
    return state_.live_count();
  }
  bool quiescent() const {
    std::lock_guard lock(mu_);
    return state_.quiescent();
  }

 private:
  mutable std::mutex mu_;
  SequentialVersionMaintenance<Data> state_;
};

}  // namespace swvm
