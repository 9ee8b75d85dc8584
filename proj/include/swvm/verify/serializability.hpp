#pragma once

// Strict serializability of single-writer transaction histories.
//
// Commits are totally ordered by the writer token. For a read r, the legal
// states run from the newest commit already visible when r began (or the
// initial state) up to the newest commit that started publishing before r
// responded. The read passes when its answer digest equals the digest of
// some state in that window.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "swvm/errors.hpp"
#include "swvm/txn.hpp"

namespace swvm {

using Digest = std::uint64_t;

struct SerializabilityReport {
  bool passed = false;
  std::size_t reads_checked = 0;
  std::size_t commits = 0;
  std::vector<std::uint64_t> failing_reads;  // transaction ids
  std::string detail;
};

/// answers: read txn id -> digest of the answer. commit_digests: write txn id
/// -> digest of the committed state. Throws CheckerRefusal on a missing
/// digest or an incomplete transaction.
inline SerializabilityReport check_strict_serializable(std::span<const TxnEvent> events,
                                                       const std::unordered_map<std::uint64_t, Digest>& answers,
                                                       const std::unordered_map<std::uint64_t, Digest>& commit_digests,
                                                       Digest initial_digest) {
  struct Write {
    std::uint64_t txn = 0;
    std::uint64_t commit = 0;
    std::uint64_t visible = 0;
    Digest digest = 0;
  };
  struct Read {
    std::uint64_t begin = 0;
    std::uint64_t respond = 0;
  };

  std::unordered_map<std::uint64_t, Write> writes_by_id;
  std::unordered_map<std::uint64_t, Read> reads;
  for (const TxnEvent& e : events) {
    switch (e.kind) {
      case TxnEventKind::read_begin: reads[e.txn].begin = e.seq; break;
      case TxnEventKind::read_respond: reads[e.txn].respond = e.seq; break;
      case TxnEventKind::write_commit: writes_by_id[e.txn].commit = e.seq; break;
      case TxnEventKind::write_visible: writes_by_id[e.txn].visible = e.seq; break;
      default: break;
    }
  }

  std::vector<Write> writes{{0, 0, 0, initial_digest}};
  for (auto& [id, w] : writes_by_id) {
    if (w.commit == 0 || w.visible == 0) throw CheckerRefusal("write transaction " + std::to_string(id) + " is incomplete");
    const auto d = commit_digests.find(id);
    if (d == commit_digests.end()) throw CheckerRefusal("no digest for write transaction " + std::to_string(id));
    w.txn = id;
    w.digest = d->second;
    writes.push_back(w);
  }
  std::sort(writes.begin() + 1, writes.end(), [](const Write& a, const Write& b) { return a.commit < b.commit; });

  SerializabilityReport report;
  report.commits = writes.size() - 1;
  std::ostringstream why;
  std::vector<std::uint64_t> read_ids;
  read_ids.reserve(reads.size());
  for (const auto& [id, r] : reads) read_ids.push_back(id);
  std::sort(read_ids.begin(), read_ids.end());

  for (const std::uint64_t id : read_ids) {
    const Read& r = reads.at(id);
    if (r.begin == 0 || r.respond == 0) throw CheckerRefusal("read transaction " + std::to_string(id) + " is incomplete");
    const auto a = answers.find(id);
    if (a == answers.end()) throw CheckerRefusal("no answer digest for read transaction " + std::to_string(id));
    ++report.reads_checked;

    // Newest write visible before the read began; writes are in commit order
    // and visibility follows the same order.
    std::size_t lo = 0;
    for (std::size_t i = 1; i < writes.size() && writes[i].visible < r.begin; ++i) lo = i;
    std::size_t hi = lo;
    while (hi + 1 < writes.size() && writes[hi + 1].commit < r.respond) ++hi;

    bool ok = false;
    for (std::size_t i = lo; i <= hi && !ok; ++i) ok = writes[i].digest == a->second;
    if (!ok) {
      if (report.failing_reads.empty()) {
        why << "read " << id << " answer " << a->second << " matches no commit in window [" << writes[lo].txn << ", "
            << writes[hi].txn << "]";
      }
      report.failing_reads.push_back(id);
    }
  }
  report.passed = report.failing_reads.empty();
  report.detail = report.passed ? "strictly serializable" : why.str();
  return report;
}

}  // namespace swvm
