#pragma once

// Reference-counted functional memory.
//
// The heap consists of fixed-arity immutable tuples. Each child is a Nil, a
// primitive integer, or a reference to an older tuple, so the reference graph
// is acyclic. ref(x) counts the tuples that point at x plus one for every
// version root designation of x made by output (or retain).
//
//   tuple    allocate, copy the children, increment each referenced child
//   nth      read one child; never touches counts
//   collect  drop one count; the thread that takes a count from 1 to 0 frees
//            the tuple and continues with its children
//   output   designate a root and free the tuples of the current run that
//            ended up unreferenced
//
// Slots live in segments that are never unmapped. Freed slots go on a
// lock-free free list whose head carries an ABA tag. Every handle carries the
// generation of its slot (odd while allocated), so a stale handle is caught
// when checking is enabled.

#include <array>
#include <atomic>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <sstream>
#include <utility>
#include <vector>

#include "swvm/errors.hpp"

namespace swvm {

struct TupleHandle {
  std::uint32_t index = 0;
  std::uint32_t gen = 0;  // 0 never names an allocated slot

  static constexpr TupleHandle null() noexcept { return {}; }
  constexpr bool is_null() const noexcept { return gen == 0; }
  constexpr std::uint64_t raw() const noexcept { return (std::uint64_t{gen} << 32) | index; }

  friend constexpr bool operator==(TupleHandle, TupleHandle) = default;
};

class TaggedValue {
 public:
  enum class Kind : std::uint8_t { nil, prim, ref };

  constexpr TaggedValue() = default;
  static constexpr TaggedValue nil() noexcept { return {}; }
  static constexpr TaggedValue prim(std::int64_t v) noexcept { return TaggedValue(Kind::prim, static_cast<std::uint64_t>(v)); }
  static constexpr TaggedValue ref(TupleHandle h) noexcept {
    return h.is_null() ? nil() : TaggedValue(Kind::ref, h.raw());
  }

  constexpr Kind kind() const noexcept { return kind_; }
  constexpr bool is_nil() const noexcept { return kind_ == Kind::nil; }
  constexpr bool is_prim() const noexcept { return kind_ == Kind::prim; }
  constexpr bool is_ref() const noexcept { return kind_ == Kind::ref; }

  constexpr std::int64_t as_prim() const noexcept { return static_cast<std::int64_t>(payload_); }
  /// Null for Nil; the referenced handle for Ref.
  constexpr TupleHandle as_ref() const noexcept {
    if (kind_ != Kind::ref) return TupleHandle::null();
    return TupleHandle{static_cast<std::uint32_t>(payload_), static_cast<std::uint32_t>(payload_ >> 32)};
  }

  friend constexpr bool operator==(const TaggedValue&, const TaggedValue&) = default;

 private:
  constexpr TaggedValue(Kind k, std::uint64_t p) : payload_(p), kind_(k) {}
  std::uint64_t payload_ = 0;
  Kind kind_ = Kind::nil;
};

struct StoreOptions {
  std::size_t arity = 5;
  std::size_t max_slots = std::size_t{1} << 26;
  bool checked = true;  // verify generation tags on every handle use
};

struct StoreStats {
  std::uint64_t allocated = 0;
  std::uint64_t total_created = 0;
  std::uint64_t total_freed = 0;
};

class TupleStore;

/// Tuples created by one writer during one run phase. Destroying a non-empty
/// log frees whatever in it is still unreferenced.
class CreationLog {
 public:
  CreationLog() = default;
  CreationLog(CreationLog&& o) noexcept
      : store_(std::exchange(o.store_, nullptr)), id_(o.id_), created_(std::move(o.created_)) {}
  CreationLog& operator=(CreationLog&& o) noexcept;
  CreationLog(const CreationLog&) = delete;
  CreationLog& operator=(const CreationLog&) = delete;
  ~CreationLog();

  std::uint32_t id() const noexcept { return id_; }
  std::span<const TupleHandle> created() const noexcept { return created_; }
  bool empty() const noexcept { return created_.empty(); }
  std::size_t size() const noexcept { return created_.size(); }

 private:
  friend class TupleStore;
  CreationLog(TupleStore* s, std::uint32_t id) : store_(s), id_(id) {}

  TupleStore* store_ = nullptr;
  std::uint32_t id_ = 0;
  std::vector<TupleHandle> created_;
};

class TupleStore {
 public:
  explicit TupleStore(StoreOptions options = {})
      : arity_(options.arity),
        max_slots_(options.max_slots),
        checked_(options.checked),
        segments_(std::make_unique<std::atomic<Segment*>[]>(segment_count(options.max_slots))) {
    if (arity_ == 0) throw ContractViolation("tuple arity must be positive");
    if (max_slots_ > (std::size_t{1} << 32)) throw ContractViolation("at most 2^32 slots");
  }

  ~TupleStore() {
    for (std::size_t s = 0; s < segment_count(max_slots_); ++s) delete segments_[s].load();
  }

  TupleStore(const TupleStore&) = delete;
  TupleStore& operator=(const TupleStore&) = delete;

  std::size_t arity() const noexcept { return arity_; }
  bool checked() const noexcept { return checked_; }

  CreationLog open_log() { return CreationLog(this, next_log_id_.fetch_add(1, std::memory_order_relaxed)); }

  TupleHandle tuple(std::span<const TaggedValue> values, CreationLog& log) {
    if (values.size() != arity_) throw ContractViolation("tuple arity mismatch");
    if (log.store_ != this) throw ContractViolation("creation log belongs to another store");
    if (checked_) {
      for (const TaggedValue& v : values) {
        if (v.is_ref()) require_allocated(v.as_ref(), "tuple child");
      }
    }
    const std::uint32_t index = allocate();
    Header& h = header(index);
    const std::uint32_t gen = h.gen.load(std::memory_order_relaxed) + 1;
    TaggedValue* kids = children(index);
    for (std::size_t i = 0; i < arity_; ++i) {
      kids[i] = values[i];
      if (values[i].is_ref()) header(values[i].as_ref().index).ref.fetch_add(1, std::memory_order_relaxed);
    }
    h.ref.store(0, std::memory_order_relaxed);
    h.owner.store(log.id_, std::memory_order_relaxed);
    h.gen.store(gen, std::memory_order_release);
    created_.fetch_add(1, std::memory_order_relaxed);
    if (log.created_.empty()) open_logs_.fetch_add(1, std::memory_order_relaxed);
    const TupleHandle out{index, gen};
    log.created_.push_back(out);
    return out;
  }

  TupleHandle tuple(std::initializer_list<TaggedValue> values, CreationLog& log) {
    return tuple(std::span<const TaggedValue>(values.begin(), values.size()), log);
  }

  TaggedValue nth(TupleHandle t, std::size_t i) const {
    if (checked_) require_allocated(t, "nth");
    assert(i < arity_);
    return children(t.index)[i];
  }

  /// Drops one count on x; returns the number of tuples freed. `steps`, when
  /// given, receives the count decrements plus child reads performed.
  std::size_t collect(TaggedValue x, std::size_t* steps = nullptr) {
    if (!x.is_ref()) return 0;
    std::vector<TupleHandle> work{x.as_ref()};
    std::size_t freed = 0;
    std::size_t n_steps = 0;
    while (!work.empty()) {
      const TupleHandle t = work.back();
      work.pop_back();
      if (checked_ && !is_allocated(t)) fatal("collect reached a freed tuple");
      const std::uint32_t before = header(t.index).ref.fetch_sub(1, std::memory_order_acq_rel);
      ++n_steps;
      if (before == 0) fatal("collect on a tuple whose count is already zero");
      if (before != 1) continue;
      n_steps += arity_;
      free_and_push_children(t, work);
      ++freed;
    }
    freed_.fetch_add(freed, std::memory_order_relaxed);
    if (steps) *steps += n_steps;
    return freed;
  }

  std::size_t collect(TupleHandle x, std::size_t* steps = nullptr) { return collect(TaggedValue::ref(x), steps); }

  /// Designates x (created in this log) as a version root, frees the rest of
  /// the log that is unreferenced, and clears the log.
  TupleHandle output(TupleHandle x, CreationLog& log) {
    if (log.store_ != this) throw ContractViolation("creation log belongs to another store");
    if (x.is_null() || !is_allocated(x) ||
        header(x.index).owner.load(std::memory_order_relaxed) != log.id_)
      throw ContractViolation("output root was not created in this log");
    header(x.index).ref.fetch_add(1, std::memory_order_relaxed);
    release_orphans(log);
    return x;
  }

  /// Frees every unreferenced tuple in the log and clears it; returns the count.
  std::size_t discard(CreationLog& log) {
    if (log.store_ != this) throw ContractViolation("creation log belongs to another store");
    return release_orphans(log);
  }

  /// Adds one root designation to an existing tuple.
  void retain(TupleHandle x) {
    if (checked_) require_allocated(x, "retain");
    header(x.index).ref.fetch_add(1, std::memory_order_relaxed);
  }

  StoreStats stats() const {
    StoreStats s;
    s.total_freed = freed_.load(std::memory_order_relaxed);
    s.total_created = created_.load(std::memory_order_relaxed);
    s.allocated = s.total_created - s.total_freed;
    return s;
  }

  /// Logs that currently hold tuples not yet output or discarded.
  std::size_t open_logs() const noexcept { return open_logs_.load(std::memory_order_relaxed); }

  bool is_allocated(TupleHandle t) const {
    if (t.is_null() || t.index >= high_water()) return false;
    return header(t.index).gen.load(std::memory_order_acquire) == t.gen;
  }

  std::uint32_t ref_count(TupleHandle t) const { return header(t.index).ref.load(std::memory_order_acquire); }

  /// Every allocated tuple, by arena scan. Only meaningful at quiescence.
  std::vector<TupleHandle> allocated_handles() const {
    std::vector<TupleHandle> out;
    const std::size_t hw = high_water();
    for (std::size_t i = 0; i < hw; ++i) {
      if (segments_[i >> kSegmentBits].load(std::memory_order_acquire) == nullptr) continue;
      const std::uint32_t gen = header(static_cast<std::uint32_t>(i)).gen.load(std::memory_order_acquire);
      if (gen & 1U) out.push_back({static_cast<std::uint32_t>(i), gen});
    }
    return out;
  }

 private:
  static constexpr unsigned kSegmentBits = 16;
  static constexpr std::size_t kSegmentSize = std::size_t{1} << kSegmentBits;

  struct Header {
    std::atomic<std::uint32_t> ref{0};
    std::atomic<std::uint32_t> gen{0};    // odd while allocated
    std::atomic<std::uint32_t> next{0};   // free-list link, index + 1
    std::atomic<std::uint32_t> owner{0};  // creating log while the log is open
  };

  struct Segment {
    explicit Segment(std::size_t arity)
        : headers(std::make_unique<Header[]>(kSegmentSize)),
          kids(std::make_unique<TaggedValue[]>(kSegmentSize * arity)) {}
    std::unique_ptr<Header[]> headers;
    std::unique_ptr<TaggedValue[]> kids;
  };

  static std::size_t segment_count(std::size_t max_slots) { return (max_slots + kSegmentSize - 1) / kSegmentSize; }

  Header& header(std::uint32_t index) const {
    return segments_[index >> kSegmentBits].load(std::memory_order_acquire)->headers[index & (kSegmentSize - 1)];
  }
  TaggedValue* children(std::uint32_t index) const {
    Segment* s = segments_[index >> kSegmentBits].load(std::memory_order_acquire);
    return &s->kids[(index & (kSegmentSize - 1)) * arity_];
  }

  std::size_t high_water() const { return published_.load(std::memory_order_acquire); }

  void require_allocated(TupleHandle t, const char* where) const {
    if (!is_allocated(t)) {
      std::ostringstream os;
      os << where << ": stale or invalid handle #" << t.index << " gen " << t.gen;
      throw StaleHandle(os.str());
    }
  }

  std::uint32_t allocate() {
    std::uint64_t head = free_head_.load(std::memory_order_acquire);
    while ((head & 0xffffffffU) != 0) {
      const std::uint32_t index = static_cast<std::uint32_t>(head & 0xffffffffU) - 1;
      const std::uint64_t next = header(index).next.load(std::memory_order_relaxed);
      const std::uint64_t tag = (head >> 32) + 1;
      if (free_head_.compare_exchange_weak(head, (tag << 32) | next, std::memory_order_acq_rel))
        return index;
    }
    const std::size_t index = bump_.fetch_add(1, std::memory_order_relaxed);
    if (index >= max_slots_) {
      bump_.fetch_sub(1, std::memory_order_relaxed);
      throw StoreExhausted("tuple arena exhausted");
    }
    const std::size_t seg = index >> kSegmentBits;
    if (segments_[seg].load(std::memory_order_acquire) == nullptr) {
      std::lock_guard lock(grow_mu_);
      if (segments_[seg].load(std::memory_order_relaxed) == nullptr)
        segments_[seg].store(new Segment(arity_), std::memory_order_release);
    }
    // high-water mark covers every slot handed out so far
    std::size_t hw = published_.load(std::memory_order_relaxed);
    while (hw < index + 1 && !published_.compare_exchange_weak(hw, index + 1, std::memory_order_acq_rel)) {
    }
    return static_cast<std::uint32_t>(index);
  }

  void free_slot(std::uint32_t index) {
    Header& h = header(index);
    h.owner.store(0, std::memory_order_relaxed);
    h.gen.fetch_add(1, std::memory_order_acq_rel);
    std::uint64_t head = free_head_.load(std::memory_order_relaxed);
    for (;;) {
      h.next.store(static_cast<std::uint32_t>(head & 0xffffffffU), std::memory_order_relaxed);
      const std::uint64_t tag = (head >> 32) + 1;
      if (free_head_.compare_exchange_weak(head, (tag << 32) | (index + 1), std::memory_order_acq_rel)) return;
    }
  }

  void free_and_push_children(TupleHandle t, std::vector<TupleHandle>& work) {
    const TaggedValue* kids = children(t.index);
    for (std::size_t i = 0; i < arity_; ++i) {
      if (kids[i].is_ref()) work.push_back(kids[i].as_ref());
    }
    free_slot(t.index);
  }

  // Newest first: a tuple only references older ones, so by the time a logged
  // tuple is visited every logged tuple that could reference it is settled.
  std::size_t release_orphans(CreationLog& log) {
    std::size_t freed = 0;
    std::vector<TupleHandle> shared;
    for (auto it = log.created_.rbegin(); it != log.created_.rend(); ++it) {
      const TupleHandle t = *it;
      Header& h = header(t.index);
      if (h.ref.load(std::memory_order_acquire) != 0) {
        h.owner.store(0, std::memory_order_relaxed);
        continue;
      }
      const TaggedValue* kids = children(t.index);
      std::array<TaggedValue, 16> small{};
      std::vector<TaggedValue> big;
      TaggedValue* copy = small.data();
      if (arity_ > small.size()) {
        big.resize(arity_);
        copy = big.data();
      }
      for (std::size_t i = 0; i < arity_; ++i) copy[i] = kids[i];
      free_slot(t.index);
      ++freed;
      for (std::size_t i = 0; i < arity_; ++i) {
        if (!copy[i].is_ref()) continue;
        const TupleHandle c = copy[i].as_ref();
        if (header(c.index).owner.load(std::memory_order_relaxed) == log.id_) {
          if (header(c.index).ref.fetch_sub(1, std::memory_order_acq_rel) == 0)
            fatal("orphan child count underflow");
        } else {
          shared.push_back(c);
        }
      }
    }
    freed_.fetch_add(freed, std::memory_order_relaxed);
    for (const TupleHandle c : shared) freed += collect(c);
    if (!log.created_.empty()) open_logs_.fetch_sub(1, std::memory_order_relaxed);
    log.created_.clear();
    return freed;
  }

  std::size_t arity_;
  std::size_t max_slots_;
  bool checked_;
  std::unique_ptr<std::atomic<Segment*>[]> segments_;
  std::mutex grow_mu_;
  alignas(64) std::atomic<std::uint64_t> free_head_{0};  // <tag:32 | index+1:32>
  alignas(64) std::atomic<std::size_t> bump_{0};
  std::atomic<std::size_t> published_{0};
  alignas(64) std::atomic<std::uint64_t> created_{0};
  alignas(64) std::atomic<std::uint64_t> freed_{0};
  std::atomic<std::uint32_t> next_log_id_{1};
  std::atomic<std::size_t> open_logs_{0};
};

inline CreationLog& CreationLog::operator=(CreationLog&& o) noexcept {
  if (this != &o) {
    if (store_ && !created_.empty()) store_->discard(*this);
    store_ = std::exchange(o.store_, nullptr);
    id_ = o.id_;
    created_ = std::move(o.created_);
  }
  return *this;
}

inline CreationLog::~CreationLog() {
  if (store_ && !created_.empty()) store_->discard(*this);
}

}  // namespace swvm
