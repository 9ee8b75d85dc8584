#pragma once

// Reclamation audit at quiescence.
//
// Walks the tuple graph from the current root. Precision: every allocated
// tuple is reachable. Safety: the walk never meets a freed slot. Counts:
// every reachable tuple's count equals its in-degree plus its root
// designations.

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "swvm/errors.hpp"
#include "swvm/ptree.hpp"
#include "swvm/tuple_store.hpp"

namespace swvm {

struct AuditReport {
  bool passed = false;
  std::size_t allocated = 0;
  std::size_t reachable = 0;
  std::vector<TupleHandle> leaked;      // allocated, not reachable
  std::vector<TupleHandle> unsafe;      // reachable, already freed
  std::vector<TupleHandle> miscounted;  // count differs from in-degree
  std::string detail;
};

/// Audits against an explicit set of root designations (a root may repeat).
inline AuditReport reclamation_audit(const TupleStore& store, const std::vector<TupleHandle>& roots) {
  if (store.open_logs() != 0) throw CheckerRefusal("audit needs quiescence: creation logs are still open");

  AuditReport report;
  std::unordered_map<std::uint32_t, std::uint64_t> indegree;
  std::unordered_map<std::uint32_t, TupleHandle> seen;
  std::vector<TupleHandle> work;
  for (const TupleHandle r : roots) {
    if (r.is_null()) continue;
    ++indegree[r.index];
    work.push_back(r);
  }
  while (!work.empty()) {
    const TupleHandle t = work.back();
    work.pop_back();
    if (!seen.emplace(t.index, t).second) continue;
    if (!store.is_allocated(t)) {
      report.unsafe.push_back(t);
      continue;
    }
    for (std::size_t i = 0; i < store.arity(); ++i) {
      const TaggedValue c = store.nth(t, i);
      if (!c.is_ref()) continue;
      ++indegree[c.as_ref().index];
      work.push_back(c.as_ref());
    }
  }
  report.reachable = seen.size() - report.unsafe.size();

  const std::vector<TupleHandle> all = store.allocated_handles();
  report.allocated = all.size();
  for (const TupleHandle h : all) {
    const auto it = seen.find(h.index);
    if (it == seen.end() || it->second.gen != h.gen) {
      report.leaked.push_back(h);
    } else if (store.ref_count(h) != indegree[h.index]) {
      report.miscounted.push_back(h);
    }
  }

  report.passed = report.leaked.empty() && report.unsafe.empty() && report.miscounted.empty() &&
                  report.allocated == report.reachable;
  std::ostringstream os;
  os << "allocated " << report.allocated << ", reachable " << report.reachable;
  if (!report.leaked.empty()) {
    os << ", leaked " << report.leaked.size() << ":";
    for (std::size_t i = 0; i < report.leaked.size() && i < 16; ++i) os << " #" << report.leaked[i].index;
    if (report.leaked.size() > 16) os << " ...";
  }
  if (!report.unsafe.empty()) os << ", freed but reachable " << report.unsafe.size();
  if (!report.miscounted.empty()) os << ", wrong counts " << report.miscounted.size();
  report.detail = os.str();
  return report;
}

/// Audits the store against the current version of vm. Refuses unless no
/// process holds a version.
template <class Vm>
AuditReport reclamation_audit(const TupleStore& store, const Vm& vm, TreeRoot current_root) {
  if (!vm.quiescent()) throw CheckerRefusal("audit needs quiescence: a process still holds a version");
  return reclamation_audit(store, std::vector<TupleHandle>{current_root});
}

}  // namespace swvm
