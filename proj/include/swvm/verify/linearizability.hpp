#pragma once

// Linearizability of a recorded VM history against the sequential object.
//
// Depth-first search over linearization orders. An operation may be placed
// next when no other unplaced, completed operation responded before it was
// invoked. Searched states are memoized on (placed set, object state).
// Pending operations may be placed or left out.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "swvm/errors.hpp"
#include "swvm/oracle.hpp"
#include "swvm/verify/history.hpp"

namespace swvm {

struct LinearizabilityOptions {
  std::size_t max_ops = 14;
  bool find_minimal_prefix = true;
};

struct LinearizabilityReport {
  bool passed = false;
  std::size_t operations = 0;
  std::uint64_t states_explored = 0;
  std::vector<std::size_t> witness;  // operation indices in linearization order
  std::optional<VmHistory> violating_prefix;
  std::string detail;
};

namespace detail {

class LinSearch {
 public:
  LinSearch(const VmHistory& h, std::vector<VmOperation> ops) : ops_(std::move(ops)), h_(h) {}

  bool run() {
    std::uint32_t complete = 0;
    for (std::size_t i = 0; i < ops_.size(); ++i)
      if (ops_[i].complete()) complete |= std::uint32_t{1} << i;
    complete_ = complete;
    SequentialVersionMaintenance<std::uint64_t> state(h_.processes, h_.initial_data);
    return dfs(0, state);
  }

  std::uint64_t explored() const noexcept { return explored_; }
  const std::vector<std::size_t>& order() const noexcept { return order_; }

 private:
  using State = SequentialVersionMaintenance<std::uint64_t>;

  bool dfs(std::uint32_t placed, const State& state) {
    ++explored_;
    if ((placed & complete_) == complete_) return true;
    if (!seen_.insert(fingerprint(placed, state)).second) return false;

    std::uint64_t horizon = UINT64_MAX;
    for (std::size_t j = 0; j < ops_.size(); ++j) {
      if (!(placed >> j & 1U) && ops_[j].complete()) horizon = std::min(horizon, *ops_[j].responded);
    }
    for (std::size_t i = 0; i < ops_.size(); ++i) {
      if (placed >> i & 1U) continue;
      const VmOperation& op = ops_[i];
      if (op.invoked > horizon) continue;
      State next = state;
      if (!apply(op, next)) continue;
      order_.push_back(i);
      if (dfs(placed | (std::uint32_t{1} << i), next)) return true;
      order_.pop_back();
    }
    return false;
  }

  static bool apply(const VmOperation& op, State& s) {
    try {
      switch (op.op) {
        case VmOpKind::acquire: {
          const std::uint64_t d = s.acquire(op.process);
          return !op.result || *op.result == d;
        }
        case VmOpKind::release: {
          const bool last = s.release(op.process);
          return !op.result || *op.result == static_cast<std::uint64_t>(last);
        }
        case VmOpKind::set:
          s.set(op.process, op.arg);
          return true;
      }
    } catch (const ProtocolViolation&) {
      return false;
    }
    return false;
  }

  static std::string fingerprint(std::uint32_t placed, const State& s) {
    std::ostringstream os;
    os << placed << '|' << s.current().timestamp << ':' << s.current().index << '=' << s.current_data() << '|';
    for (std::size_t k = 0; k < s.processes(); ++k) {
      const auto h = s.held_by(k);
      if (h) os << h->timestamp << ':' << h->index;
      os << ',';
    }
    if (s.writer()) os << 'w' << *s.writer();
    return os.str();
  }

  std::vector<VmOperation> ops_;
  const VmHistory& h_;
  std::uint32_t complete_ = 0;
  std::unordered_set<std::string> seen_;
  std::vector<std::size_t> order_;
  std::uint64_t explored_ = 0;
};

inline bool linearizable_unbounded(const VmHistory& h, std::uint64_t* explored, std::vector<std::size_t>* order) {
  LinSearch search(h, h.operations());
  const bool ok = search.run();
  if (explored) *explored += search.explored();
  if (order && ok) *order = search.order();
  return ok;
}

}  // namespace detail

/// Throws CheckerRefusal when the history has more than max_ops operations
/// or is malformed.
inline LinearizabilityReport check_linearizable(const VmHistory& h, const LinearizabilityOptions& options = {}) {
  LinearizabilityReport report;
  const std::vector<VmOperation> ops = h.operations();
  report.operations = ops.size();
  if (ops.size() > options.max_ops || ops.size() > 32) {
    throw CheckerRefusal("history has " + std::to_string(ops.size()) + " operations, bound is " +
                         std::to_string(options.max_ops));
  }
  report.passed = detail::linearizable_unbounded(h, &report.states_explored, &report.witness);
  if (report.passed) {
    report.detail = "linearizable";
    return report;
  }
  report.detail = "no linearization exists";
  if (!options.find_minimal_prefix) {
    report.violating_prefix = h;
    return report;
  }
  // Shortest prefix ending at a response that already has no linearization.
  for (std::size_t n = 1; n <= h.events.size(); ++n) {
    if (h.events[n - 1].phase != EventPhase::respond) continue;
    VmHistory p = h.prefix(n);
    if (!detail::linearizable_unbounded(p, &report.states_explored, nullptr)) {
      std::ostringstream os;
      os << "no linearization exists; shortest failing prefix ends at stamp " << h.events[n - 1].seq << " ("
         << to_string(h.events[n - 1].op) << " by process " << h.events[n - 1].process << ")";
      report.detail = os.str();
      report.violating_prefix = std::move(p);
      return report;
    }
  }
  report.violating_prefix = h;
  return report;
}

}  // namespace swvm
