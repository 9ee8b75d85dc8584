#pragma once

// Single-writer transactions over a version maintenance object and the tuple
// store.
//
//   read:  acquire -> user code -> respond -> release -> collect if last
//   write: acquire -> user code -> output -> set -> release -> collect if last
//
// Write transactions queue on a FIFO ticket token, so at most one is ever
// between its acquire and its release. Neither kind aborts.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <type_traits>
#include <utility>
#include <vector>

#include "swvm/errors.hpp"
#include "swvm/instrumentation.hpp"
#include "swvm/tuple_store.hpp"
#include "swvm/ptree.hpp"
#include "swvm/version.hpp"

namespace swvm {

enum class TxnEventKind : std::uint8_t {
  read_begin,
  read_version_observed,
  read_respond,
  read_end,
  write_begin,
  write_commit,   // immediately before set
  write_visible,  // immediately after set returns
  write_end,
};

struct TxnEvent {
  TxnEventKind kind;
  std::size_t process;
  std::uint64_t txn;  // unique per transaction, starting at 1
  VersionId version;
  std::uint64_t seq;  // global order stamp
};

/// Receives transaction events as they happen, on the thread running the
/// transaction.
class TxnEventSink {
 public:
  virtual ~TxnEventSink() = default;
  virtual std::uint64_t next_txn() = 0;
  virtual void record(TxnEventKind kind, std::size_t process, std::uint64_t txn, VersionId v) = 0;
};

/// Thread-safe event buffer. Each process appends only to its own buffer; the
/// global stamp comes from one atomic counter.
class TxnRecorder final : public TxnEventSink {
 public:
  explicit TxnRecorder(std::size_t processes) : buffers_(processes) {}

  std::uint64_t stamp() noexcept { return seq_.fetch_add(1, std::memory_order_seq_cst) + 1; }
  std::uint64_t next_txn() noexcept override { return txn_.fetch_add(1, std::memory_order_relaxed) + 1; }

  void record(TxnEventKind kind, std::size_t process, std::uint64_t txn, VersionId v) override {
    auto& b = buffers_[process].value;
    b.events.push_back(TxnEvent{kind, process, txn, v, stamp()});
    b.last_txn = txn;
  }

  /// Id of the most recent transaction run by process k (read by k itself).
  std::uint64_t last_txn(std::size_t process) const { return buffers_[process].value.last_txn; }

  /// All events ordered by stamp; call after the recording threads are joined.
  std::vector<TxnEvent> events() const {
    std::vector<TxnEvent> out;
    for (const auto& b : buffers_) out.insert(out.end(), b.value.events.begin(), b.value.events.end());
    std::sort(out.begin(), out.end(), [](const TxnEvent& a, const TxnEvent& b) { return a.seq < b.seq; });
    return out;
  }

 private:
  struct Buffer {
    std::vector<TxnEvent> events;
    std::uint64_t last_txn = 0;
  };
  std::vector<detail::Padded<Buffer>> buffers_;
  alignas(64) std::atomic<std::uint64_t> seq_{0};
  alignas(64) std::atomic<std::uint64_t> txn_{0};
};

/// FIFO mutual exclusion for writers.
class TicketToken {
 public:
  void lock() {
    const std::uint64_t mine = next_.fetch_add(1, std::memory_order_relaxed);
    for (std::uint64_t s = serving_.load(std::memory_order_acquire); s != mine;
         s = serving_.load(std::memory_order_acquire)) {
      serving_.wait(s, std::memory_order_acquire);
    }
  }
  void unlock() {
    serving_.fetch_add(1, std::memory_order_release);
    serving_.notify_all();
  }

 private:
  alignas(64) std::atomic<std::uint64_t> next_{0};
  alignas(64) std::atomic<std::uint64_t> serving_{0};
};

struct WriteOutcome {
  std::uint64_t txn = 0;
  TreeRoot published;
  bool collected = false;  // the release of the previous version returned true
  std::size_t freed = 0;   // tuples freed by that collect
};

struct TxnOptions {
  bool collect = true;  // false leaks superseded versions (overhead A/B runs)
  /// Runs on the writer right after set, while it still holds the old version.
  std::function<void(VersionId published)> on_publish;
  /// Runs on the thread that collected a superseded version, with the tuples freed.
  std::function<void(std::size_t process, std::size_t freed)> on_collect;
};

template <class Vm>
class TxnRuntime {
 public:
  /// `initial` must be null or a tuple already designated as a root.
  template <class... VmArgs>
  TxnRuntime(TupleStore& store, std::size_t processes, TreeRoot initial, TxnOptions options = {},
             VmArgs&&... vm_args)
      : store_(store),
        vm_(processes, initial, std::forward<VmArgs>(vm_args)...),
        active_(std::make_unique<detail::Padded<std::atomic<bool>>[]>(processes)),
        options_(std::move(options)) {}

  TxnRuntime(const TxnRuntime&) = delete;
  TxnRuntime& operator=(const TxnRuntime&) = delete;

  /// Runs user(root) or user(root, local_log) on the current version. The
  /// answer is formed before release; local tuples are freed at the end.
  template <class F>
  auto read_txn(std::size_t k, F&& user) {
    using Answer = typename std::conditional_t<std::is_invocable_v<F&, TreeRoot, CreationLog&>,
                                      std::invoke_result<F&, TreeRoot, CreationLog&>,
                                      std::invoke_result<F&, TreeRoot>>::type;
    Binding bind(*this, k);
    const std::uint64_t id = sink_ ? sink_->next_txn() : 0;
    emit(TxnEventKind::read_begin, k, id, VersionId::empty());
    const TreeRoot root = vm_.acquire(k);
    emit(TxnEventKind::read_version_observed, k, id, sink_ ? vm_.acquired_version(k) : VersionId::empty());
    CreationLog local = store_.open_log();

    auto epilogue = [&] {
      store_.discard(local);
      if (vm_.release(k) && options_.collect) {
        const std::size_t freed = store_.collect(root);
        if (options_.on_collect) options_.on_collect(k, freed);
      }
    };

    if constexpr (std::is_void_v<Answer>) {
      try {
        invoke_user(user, root, local);
      } catch (...) {
        epilogue();
        throw;
      }
      emit(TxnEventKind::read_respond, k, id, VersionId::empty());
      epilogue();
      emit(TxnEventKind::read_end, k, id, VersionId::empty());
    } else {
      std::optional<Answer> answer;
      try {
        answer.emplace(invoke_user(user, root, local));
      } catch (...) {
        epilogue();
        throw;
      }
      emit(TxnEventKind::read_respond, k, id, VersionId::empty());
      epilogue();
      emit(TxnEventKind::read_end, k, id, VersionId::empty());
      return std::move(*answer);
    }
  }

  /// Runs user(root, log) -> new root and publishes it. The new root must be
  /// null, the input root itself, or a tuple created in `log`.
  template <class F>
  WriteOutcome write_txn(std::size_t k, F&& user) {
    Binding bind(*this, k);
    std::lock_guard token(writer_token_);
    WriteOutcome out;
    out.txn = sink_ ? sink_->next_txn() : 0;
    emit(TxnEventKind::write_begin, k, out.txn, VersionId::empty());
    const TreeRoot old = vm_.acquire(k);

    auto finish = [&] {
      if (vm_.release(k)) {
        out.collected = true;
        if (options_.collect) {
          out.freed = store_.collect(old);
          if (options_.on_collect) options_.on_collect(k, out.freed);
        }
      }
    };

    TreeRoot fresh;
    {
      CreationLog log = store_.open_log();
      try {
        fresh = user(old, log);
        if (fresh.is_null()) {
          store_.discard(log);
        } else if (fresh == old) {
          store_.retain(old);
          store_.discard(log);
        } else {
          store_.output(fresh, log);
        }
      } catch (...) {
        store_.discard(log);
        finish();
        throw;
      }
    }

    emit(TxnEventKind::write_commit, k, out.txn, VersionId::empty());
    vm_.set(fresh);
    const VersionId published = vm_.current_version();
    emit(TxnEventKind::write_visible, k, out.txn, published);
    if (options_.on_publish) options_.on_publish(published);
    out.published = fresh;
    finish();
    emit(TxnEventKind::write_end, k, out.txn, VersionId::empty());
    return out;
  }

  /// Events are emitted only while a sink is attached. Attach before
  /// starting transactions.
  void attach(TxnEventSink* sink) noexcept { sink_ = sink; }

  Vm& vm() noexcept { return vm_; }
  const Vm& vm() const noexcept { return vm_; }
  TupleStore& store() noexcept { return store_; }
  TreeRoot current_root() const { return vm_.current_data(); }
  std::size_t processes() const noexcept { return vm_.processes(); }

 private:
  // Each process runs at most one transaction at a time.
  struct Binding {
    Binding(TxnRuntime& rt, std::size_t k) : flag(rt.active_[check(rt, k)].value) {
      if (flag.exchange(true, std::memory_order_acquire))
        throw ContractViolation("process already bound to a live transaction");
    }
    ~Binding() { flag.store(false, std::memory_order_release); }
    static std::size_t check(TxnRuntime& rt, std::size_t k) {
      if (k >= rt.processes()) throw ContractViolation("process id out of range");
      return k;
    }
    std::atomic<bool>& flag;
  };

  template <class F>
  static decltype(auto) invoke_user(F& user, TreeRoot root, CreationLog& local) {
    if constexpr (std::is_invocable_v<F&, TreeRoot, CreationLog&>)
      return user(root, local);
    else
      return user(root);
  }

  void emit(TxnEventKind kind, std::size_t k, std::uint64_t id, VersionId v) {
    if (sink_) sink_->record(kind, k, id, v);
  }

  TupleStore& store_;
  Vm vm_;
  std::unique_ptr<detail::Padded<std::atomic<bool>>[]> active_;
  TicketToken writer_token_;
  TxnOptions options_;
  TxnEventSink* sink_ = nullptr;
};

}  // namespace swvm
