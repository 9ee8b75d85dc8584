#pragma once

// Strict serializability checked while the system runs, in bounded memory.
//
// Same window rule as check_strict_serializable. The writer stages the
// digest of the state it is about to commit; the checker appends it to a
// commit log at the commit event and stamps its visibility at the visible
// event. Readers hand in their answer digest after each read; reads are
// checked in per-process batches against the log.

#include <algorithm>
#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "swvm/errors.hpp"
#include "swvm/instrumentation.hpp"
#include "swvm/txn.hpp"
#include "swvm/verify/serializability.hpp"

namespace swvm {

class OnlineSerializabilityChecker final : public TxnEventSink {
 public:
  OnlineSerializabilityChecker(std::size_t processes, Digest initial, std::size_t batch = 4096)
      : procs_(processes), batch_(std::max<std::size_t>(1, batch)) {
    append(0, initial);
    entry(0).visible.store(0, std::memory_order_release);
  }

  ~OnlineSerializabilityChecker() override {
    for (auto& s : segments_) delete[] s.load(std::memory_order_relaxed);
  }

  OnlineSerializabilityChecker(const OnlineSerializabilityChecker&) = delete;
  OnlineSerializabilityChecker& operator=(const OnlineSerializabilityChecker&) = delete;

  /// Writer: digest of the state the next write transaction will commit.
  void stage_commit_digest(Digest d) noexcept { staged_ = d; }

  /// Reader k: answer digest of the read transaction that just returned.
  void answer(std::size_t k, Digest d) {
    Proc& p = procs_[k].value;
    p.batch.push_back(Read{p.txn, p.begin, p.respond, d});
    if (p.batch.size() >= batch_) flush(k);
  }

  /// Reader k: its last read transaction ended without an answer.
  void abandon(std::size_t k) noexcept { procs_[k].value.respond = 0; }

  /// Checks k's buffered reads. Call from k's thread, or after joining it.
  void flush(std::size_t k) {
    Proc& p = procs_[k].value;
    for (const Read& r : p.batch) check(p, r);
    p.batch.clear();
  }

  /// Call after every transaction thread has been joined.
  SerializabilityReport report() {
    SerializabilityReport out;
    std::ostringstream why;
    for (std::size_t k = 0; k < procs_.size(); ++k) {
      flush(k);
      const Proc& p = procs_[k].value;
      out.reads_checked += p.checked;
      out.failing_reads.insert(out.failing_reads.end(), p.failing.begin(), p.failing.end());
      if (!p.first_failure.empty() && why.tellp() == 0) why << p.first_failure;
    }
    std::sort(out.failing_reads.begin(), out.failing_reads.end());
    out.commits = count_.load(std::memory_order_acquire) - 1;
    out.passed = out.failing_reads.empty();
    out.detail = out.passed ? "strictly serializable" : why.str();
    return out;
  }

  std::uint64_t next_txn() noexcept override { return txn_.fetch_add(1, std::memory_order_relaxed) + 1; }

  void record(TxnEventKind kind, std::size_t k, std::uint64_t txn, VersionId) override {
    switch (kind) {
      case TxnEventKind::read_begin:
        procs_[k].value.txn = txn;
        procs_[k].value.begin = stamp();
        break;
      case TxnEventKind::read_respond: procs_[k].value.respond = stamp(); break;
      case TxnEventKind::write_commit: append(stamp(), staged_); break;
      case TxnEventKind::write_visible:
        entry(count_.load(std::memory_order_relaxed) - 1).visible.store(stamp(), std::memory_order_release);
        break;
      default: break;
    }
  }

  /// Runs a recorded history through the online rule.
  static SerializabilityReport replay(std::span<const TxnEvent> events,
                                      const std::unordered_map<std::uint64_t, Digest>& answers,
                                      const std::unordered_map<std::uint64_t, Digest>& commit_digests,
                                      Digest initial_digest) {
    std::size_t processes = 0;
    for (const TxnEvent& e : events) processes = std::max(processes, e.process + 1);
    OnlineSerializabilityChecker c(std::max<std::size_t>(processes, 1), initial_digest, SIZE_MAX);
    c.replay_ = true;
    for (const TxnEvent& e : events) {
      c.seq_.store(e.seq - 1, std::memory_order_relaxed);
      if (e.kind == TxnEventKind::write_commit) {
        const auto d = commit_digests.find(e.txn);
        if (d == commit_digests.end()) throw CheckerRefusal("no digest for write transaction " + std::to_string(e.txn));
        c.stage_commit_digest(d->second);
      }
      c.record(e.kind, e.process, e.txn, e.version);
      if (e.kind == TxnEventKind::read_respond) {
        const auto a = answers.find(e.txn);
        if (a == answers.end()) throw CheckerRefusal("no answer digest for read transaction " + std::to_string(e.txn));
        c.answer(e.process, a->second);
      }
    }
    return c.report();
  }

 private:
  static constexpr unsigned kSegmentBits = 16;
  static constexpr std::size_t kSegmentSize = std::size_t{1} << kSegmentBits;
  static constexpr std::size_t kSegments = 1 << 14;
  static constexpr std::uint64_t kPending = UINT64_MAX;

  struct Entry {
    std::uint64_t commit = 0;
    Digest digest = 0;
    std::atomic<std::uint64_t> visible{kPending};
  };

  struct Read {
    std::uint64_t txn, begin, respond;
    Digest answer;
  };

  struct Proc {
    std::uint64_t txn = 0, begin = 0, respond = 0;
    std::vector<Read> batch;
    std::uint64_t checked = 0;
    std::vector<std::uint64_t> failing;
    std::string first_failure;
  };

  std::uint64_t stamp() noexcept { return seq_.fetch_add(1, std::memory_order_seq_cst) + 1; }

  Entry& entry(std::size_t i) const {
    return segments_[i >> kSegmentBits].load(std::memory_order_acquire)[i & (kSegmentSize - 1)];
  }

  // Writer only.
  void append(std::uint64_t commit, Digest d) {
    const std::size_t i = count_.load(std::memory_order_relaxed);
    if ((i >> kSegmentBits) >= kSegments) fatal("commit log is full");
    if ((i & (kSegmentSize - 1)) == 0) segments_[i >> kSegmentBits].store(new Entry[kSegmentSize], std::memory_order_release);
    Entry& e = entry(i);
    e.commit = commit;
    e.digest = d;
    count_.store(i + 1, std::memory_order_release);
  }

  void check(Proc& p, const Read& r) {
    if (r.respond == 0) return;
    ++p.checked;
    const std::size_t n = count_.load(std::memory_order_acquire);
    // Newest commit stamped before the response.
    std::size_t lo = 0, hi = n;
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      (entry(mid).commit < r.respond ? lo : hi) = mid;
    }
    const std::size_t top = lo;
    // Only the newest entry can still be waiting for its visibility stamp.
    while (entry(top).visible.load(std::memory_order_acquire) == kPending) {
      if (replay_) throw CheckerRefusal("write transaction without a visible event");
      std::this_thread::yield();
    }
    // Newest commit visible before the read began.
    lo = 0;
    hi = top + 1;
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      (entry(mid).visible.load(std::memory_order_acquire) < r.begin ? lo : hi) = mid;
    }
    for (std::size_t i = lo; i <= top; ++i)
      if (entry(i).digest == r.answer) return;
    p.failing.push_back(r.txn);
    if (p.first_failure.empty()) {
      std::ostringstream os;
      os << "read " << r.txn << " answer " << r.answer << " matches no commit among log entries [" << lo << ", "
         << top << "]";
      p.first_failure = os.str();
    }
  }

  std::vector<detail::Padded<Proc>> procs_;
  std::size_t batch_;
  Digest staged_ = 0;
  bool replay_ = false;
  std::array<std::atomic<Entry*>, kSegments> segments_{};
  alignas(64) std::atomic<std::size_t> count_{0};
  alignas(64) std::atomic<std::uint64_t> seq_{0};
  alignas(64) std::atomic<std::uint64_t> txn_{0};
};

}  // namespace swvm
